use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{corpus_stats, load_jsonl, run_pipeline, save_jsonl, PipelineConfig};
use crate::encoder::{Checkpoint, Encoder, EncoderConfig, Preset};
use crate::finetune::{
    attach_head, encode_examples, evaluate, finetune, full_grid, import_assin2, load_task_tsv, run_grid, summary_csv, FinetuneOptions,
    GridPoint, MetricsReport, Precision, Split, TaskData, TaskExample, TaskModel, TaskSpec,
};
use crate::pretrain::TrainRunConfig;
use crate::tokenizer::{train_tokenizer, TokenizerModel};

use super::config::{flag, read_config_file, resolve, DEFAULT_SEED};
use super::manifest::{now_rfc3339, sha256_file, InputDigest, RunManifest};
use super::plot::{emit_loss_curve, read_loss_csv};
use super::{
    Cli, CliError, Command, CorpusCommand, CorpusFilterArgs, CorpusStatsArgs, EvalArgs, FinetuneArgs, PretrainArgs, ReportArgs, SweepArgs,
    TaskArgs, TokenizerCommand, TokenizerTrainArgs, MANIFEST_FILE,
};

pub const DEFAULT_OUT: &str = "lusoforge-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GridChoice {
    Full,
    Single,
}

struct Ctx {
    out: PathBuf,
    file: Option<Value>,
    seed_flag: Option<u64>,
    seed: u64,
    snapshot: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn resolve<T>(&mut self, section: &str, mut flags: Vec<(&'static str, Option<Value>)>) -> Result<T, CliError>
    where
        T: Serialize + serde::de::DeserializeOwned + Default,
    {
        flags.push(flag("seed", &self.seed_flag));
        let (value, snapshot) = resolve::<T>(section, self.file.as_ref(), &flags)?;
        self.seed = snapshot.get("seed").and_then(Value::as_u64).unwrap_or(DEFAULT_SEED);
        self.snapshot = snapshot;
        Ok(value)
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.output(name), text)?;
        Ok(())
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Corpus(CorpusCommand::Filter(_)) => "corpus filter",
        Command::Corpus(CorpusCommand::Stats(_)) => "corpus stats",
        Command::Tokenizer(TokenizerCommand::Train(_)) => "tokenizer train",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(_) => "finetune",
        Command::Sweep(_) => "sweep",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
    }
}

fn threads_setting(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("LUSOFORGE_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| CliError::usage(format!("LUSOFORGE_THREADS: `{v}` is not a thread count"))),
        Err(_) => Ok(0),
    }
}

pub(super) fn execute(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    let threads = threads_setting(cli.threads)?;
    let out = cli
        .out
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.get("out")).and_then(Value::as_str).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    let mut ctx = Ctx {
        out,
        file,
        seed_flag: cli.seed,
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        snapshot: Value::Null,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let started_at = now_rfc3339();
    let result = pool.install(|| dispatch(&cli.command, &mut ctx));
    let inputs = ctx
        .inputs
        .iter()
        .filter_map(|p| {
            sha256_file(p).ok().map(|sha256| InputDigest {
                path: p.clone(),
                sha256,
            })
        })
        .collect();
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        config: ctx.snapshot,
        seed: ctx.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        started_at,
        finished_at: now_rfc3339(),
        outputs: ctx.outputs,
        exit_code: result.as_ref().map_or_else(CliError::exit_code, |_| 0),
        error: result.as_ref().err().map(ToString::to_string),
    };
    let written = manifest.write(&ctx.out.join(MANIFEST_FILE));
    match (result, written) {
        (Err(e), w) => {
            if let Err(w) = w {
                log::error!("could not write the run manifest: {w}");
            }
            Err(e)
        }
        (Ok(()), w) => w,
    }
}

fn dispatch(command: &Command, ctx: &mut Ctx) -> Result<(), CliError> {
    match command {
        Command::Corpus(CorpusCommand::Filter(a)) => corpus_filter(a, ctx),
        Command::Corpus(CorpusCommand::Stats(a)) => corpus_stats_cmd(a, ctx),
        Command::Tokenizer(TokenizerCommand::Train(a)) => tokenizer_train(a, ctx),
        Command::Pretrain(a) => pretrain(a, ctx),
        Command::Finetune(a) => finetune_cmd(a, ctx),
        Command::Sweep(a) => sweep(a, ctx),
        Command::Eval(a) => eval(a, ctx),
        Command::Report(a) => report(a, ctx),
    }
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::usage(format!("missing --{name} (flag or config key `{}`)", name.replace('-', "_"))))
}

fn load_tokenizer(path: &Path, ctx: &mut Ctx) -> Result<TokenizerModel, CliError> {
    Ok(TokenizerModel::load(&ctx.input(path))?)
}

/// Document texts from JSON lines, task TSV (both sentences), or plain
/// text (one document per non-empty line).
fn load_texts(path: &Path) -> Result<Vec<String>, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Ok(load_jsonl(path)?.into_iter().map(|d| d.text).collect()),
        Some("tsv") => Ok(load_task_tsv(path, Split::Train)?
            .into_iter()
            .flat_map(|e| [e.sentence_a, e.sentence_b])
            .collect()),
        _ => Ok(fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CorpusFilterConfig {
    seed: u64,
    input: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    #[serde(flatten)]
    pipeline: PipelineConfig,
}

impl Default for CorpusFilterConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            input: None,
            tokenizer: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn corpus_filter(a: &CorpusFilterArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg: CorpusFilterConfig = ctx.resolve(
        "corpus_filter",
        vec![
            flag("input", &a.input),
            flag("tokenizer", &a.tokenizer),
            flag("country_code", &a.country_code),
            flag("near_dedup", &a.near_dedup),
        ],
    )?;
    let input = ctx.input(&required(cfg.input, "input")?);
    let tok = cfg.tokenizer.map(|p| load_tokenizer(&p, ctx)).transpose()?;
    let docs = load_jsonl(&input)?;
    let (kept, report) = run_pipeline(docs, &cfg.pipeline, tok.as_ref())?;
    log::info!("kept {} of {} documents", kept.len(), report.input_documents);
    save_jsonl(&ctx.output("filtered.jsonl"), &kept)?;
    ctx.write_json("filter_report.json", &report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct CorpusStatsConfig {
    seed: u64,
    input: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
}

impl Default for CorpusStatsConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            input: None,
            tokenizer: None,
        }
    }
}

fn corpus_stats_cmd(a: &CorpusStatsArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg: CorpusStatsConfig = ctx.resolve("corpus_stats", vec![flag("input", &a.input), flag("tokenizer", &a.tokenizer)])?;
    let input = ctx.input(&required(cfg.input, "input")?);
    let tok = cfg.tokenizer.map(|p| load_tokenizer(&p, ctx)).transpose()?;
    let docs = load_jsonl(&input)?;
    let mut report = corpus_stats(&docs, tok.as_ref());
    report.input_documents = docs.len();
    ctx.write_json("corpus_stats.json", &report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TokenizerConfig {
    seed: u64,
    input: Option<PathBuf>,
    vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            input: None,
            vocab_size: 2000,
        }
    }
}

fn tokenizer_train(a: &TokenizerTrainArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg: TokenizerConfig = ctx.resolve("tokenizer", vec![flag("input", &a.input), flag("vocab_size", &a.vocab_size)])?;
    let input = ctx.input(&required(cfg.input, "input")?);
    let texts = load_texts(&input)?;
    let tok = train_tokenizer(texts.iter().map(String::as_str), cfg.vocab_size, cfg.seed)?;
    log::info!("vocabulary of {} tokens, {} merges", tok.vocab_size(), tok.merges().len());
    tok.save(&ctx.output("vocab.json"))?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct PretrainConfig {
    input: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    #[serde(flatten)]
    run: TrainRunConfig,
}

fn pretrain(a: &PretrainArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut cfg: PretrainConfig = ctx.resolve(
        "pretrain",
        vec![
            flag("input", &a.input),
            flag("tokenizer", &a.tokenizer),
            flag("preset", &a.preset),
            flag("seq_len", &a.seq_len),
            flag("micro_batch_size", &a.micro_batch_size),
            flag("accumulation_steps", &a.accumulation_steps),
            flag("peak_lr", &a.peak_lr),
            flag("warmup_steps", &a.warmup_steps),
            flag("total_steps", &a.total_steps),
            flag("epochs", &a.epochs),
            flag("mask_rate", &a.mask_rate),
            flag("dropout_rate", &a.dropout_rate),
            flag("checkpoint_every", &a.checkpoint_every),
            flag("init_checkpoint", &a.init_checkpoint),
        ],
    )?;
    if cfg.run.output_dir.as_ref().is_some_and(|d| *d != ctx.out) {
        log::warn!("pretrain.output_dir is replaced by the run output directory {}", ctx.out.display());
    }
    cfg.run.output_dir = Some(ctx.out.clone());
    let input = ctx.input(&required(cfg.input.clone(), "input")?);
    let tok = load_tokenizer(&required(cfg.tokenizer.clone(), "tokenizer")?, ctx)?;
    if let Some(p) = &cfg.run.init_checkpoint {
        ctx.input(p);
    }
    let texts = load_texts(&input)?;
    let outcome = crate::pretrain::train(&cfg.run, texts.iter().map(String::as_str), &tok)?;
    ctx.outputs.extend(outcome.checkpoints.iter().cloned());
    ctx.outputs.push(ctx.out.join("loss.csv"));
    let (csv, svg) = (ctx.output("loss_curve.csv"), ctx.output("loss_curve.svg"));
    emit_loss_curve(&outcome.log, &csv, Some(&svg))?;
    if let Some(last) = outcome.log.last() {
        log::info!("{} steps; final loss {:.4} (EMA {:.4})", outcome.steps, last.loss, last.ema_loss);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TaskConfig {
    seed: u64,
    task: String,
    checkpoint: Option<PathBuf>,
    preset: Preset,
    tokenizer: Option<PathBuf>,
    train: Option<PathBuf>,
    dev: Option<PathBuf>,
    test: Option<PathBuf>,
    dev_fraction: f64,
    epochs: usize,
    batch_size: usize,
    max_len: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let o = FinetuneOptions::default();
        Self {
            seed: DEFAULT_SEED,
            task: "rte".into(),
            checkpoint: None,
            preset: Preset::Tiny,
            tokenizer: None,
            train: None,
            dev: None,
            test: None,
            dev_fraction: 0.1,
            epochs: o.epochs,
            batch_size: o.batch_size,
            max_len: o.max_len,
        }
    }
}

fn task_flags(a: &TaskArgs) -> Vec<(&'static str, Option<Value>)> {
    vec![
        flag("task", &a.task),
        flag("checkpoint", &a.checkpoint),
        flag("preset", &a.preset),
        flag("tokenizer", &a.tokenizer),
        flag("train", &a.train),
        flag("dev", &a.dev),
        flag("test", &a.test),
        flag("dev_fraction", &a.dev_fraction),
        flag("epochs", &a.epochs),
        flag("batch_size", &a.batch_size),
        flag("max_len", &a.max_len),
    ]
}

fn task_spec(name: &str) -> Result<TaskSpec, CliError> {
    TaskSpec::named(name).ok_or_else(|| CliError::usage(format!("unknown task `{name}`")))
}

fn load_split(path: &Path, split: Split, spec: &TaskSpec, ctx: &mut Ctx) -> Result<Vec<TaskExample>, CliError> {
    let path = ctx.input(path);
    if path.extension().is_some_and(|e| e == "xml") {
        let pairs = import_assin2(&fs::read_to_string(&path)?, split)?;
        Ok(match spec.head_type {
            crate::finetune::HeadType::Regression => pairs.sts,
            crate::finetune::HeadType::BinaryClassification => pairs.rte,
        })
    } else {
        Ok(load_task_tsv(&path, split)?)
    }
}

fn load_task(cfg: &TaskConfig, spec: &TaskSpec, need_test: bool, ctx: &mut Ctx) -> Result<TaskData, CliError> {
    let train = load_split(&required(cfg.train.clone(), "train")?, Split::Train, spec, ctx)?;
    let dev = match &cfg.dev {
        Some(p) => load_split(p, Split::Dev, spec, ctx)?,
        None => Vec::new(),
    };
    let test = match &cfg.test {
        Some(p) => load_split(p, Split::Test, spec, ctx)?,
        None if need_test => return Err(CliError::usage("missing --test")),
        None => Vec::new(),
    };
    if dev.is_empty() {
        log::info!("no dev split given; holding out {} of train", cfg.dev_fraction);
    }
    let data = TaskData { train, dev, test }.with_dev_split(cfg.dev_fraction, cfg.seed)?;
    data.validate(spec)?;
    Ok(data)
}

fn load_encoder(cfg: &TaskConfig, tok: &TokenizerModel, ctx: &mut Ctx) -> Result<Encoder, CliError> {
    let enc = match &cfg.checkpoint {
        Some(p) => Encoder::from_checkpoint(Checkpoint::load(&ctx.input(p))?)?,
        None => {
            log::warn!("no checkpoint given; fine-tuning a randomly initialized {:?} encoder", cfg.preset);
            Encoder::new(EncoderConfig::preset(cfg.preset, tok.vocab_size()), cfg.seed)?
        }
    };
    if enc.config.vocab_size != tok.vocab_size() {
        return Err(CliError::Data(format!(
            "encoder vocabulary {} differs from tokenizer vocabulary {}",
            enc.config.vocab_size,
            tok.vocab_size()
        )));
    }
    Ok(enc)
}

fn options(cfg: &TaskConfig, enc: &Encoder) -> FinetuneOptions {
    let mut max_len = cfg.max_len;
    if max_len > enc.config.max_seq_len {
        log::warn!("max_len {max_len} exceeds the encoder's {}; using the latter", enc.config.max_seq_len);
        max_len = enc.config.max_seq_len;
    }
    FinetuneOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        max_len,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct FinetuneConfig {
    #[serde(flatten)]
    task: TaskConfig,
    dropout: f32,
    lr: f64,
    precision: Precision,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            dropout: 0.1,
            lr: 1e-5,
            precision: Precision::Fp32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FinetuneSummary {
    task: String,
    point: GridPoint,
    dev_scores: Vec<f64>,
    best_epoch: usize,
    dev_score: f64,
    test_score: Option<f64>,
}

fn finetune_cmd(a: &FinetuneArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut flags = task_flags(&a.task);
    flags.extend([flag("dropout", &a.dropout), flag("lr", &a.lr), flag("precision", &a.precision)]);
    let cfg: FinetuneConfig = ctx.resolve("finetune", flags)?;
    let spec = task_spec(&cfg.task.task)?;
    let tok = load_tokenizer(&required(cfg.task.tokenizer.clone(), "tokenizer")?, ctx)?;
    let enc = load_encoder(&cfg.task, &tok, ctx)?;
    let opts = options(&cfg.task, &enc);
    let data = load_task(&cfg.task, &spec, false, ctx)?;
    let point = GridPoint {
        dropout: cfg.dropout,
        lr: cfg.lr,
        precision: cfg.precision,
        seed: cfg.task.seed,
    };
    let train = encode_examples(&data.train, &tok, opts.max_len)?;
    let dev = encode_examples(&data.dev, &tok, opts.max_len)?;
    let model = attach_head(&enc, spec.head_type, point.dropout, point.seed)?;
    let r = finetune(model, &spec, &train, &dev, &point, &opts)?;
    let test_score = if data.test.is_empty() {
        None
    } else {
        let test = encode_examples(&data.test, &tok, opts.max_len)?;
        Some(evaluate(&r.model, &spec, &test, opts.batch_size)?)
    };
    r.model.to_checkpoint().save(&ctx.output("task_model.ckpt"))?;
    log::info!("best dev {:.4} at epoch {}", r.dev_score, r.best_epoch);
    ctx.write_json(
        "finetune.json",
        &FinetuneSummary {
            task: spec.name,
            point,
            dev_scores: r.dev_scores,
            best_epoch: r.best_epoch,
            dev_score: r.dev_score,
            test_score,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SweepConfig {
    #[serde(flatten)]
    task: TaskConfig,
    grid: GridChoice,
    model_name: String,
    /// Settings of the `single` grid.
    dropout: f32,
    lr: f64,
    precision: Precision,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            grid: GridChoice::Full,
            model_name: "model".into(),
            dropout: 0.1,
            lr: 1e-5,
            precision: Precision::Fp32,
        }
    }
}

fn sweep(a: &SweepArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let mut flags = task_flags(&a.task);
    flags.extend([
        flag("grid", &a.grid),
        flag("model_name", &a.model_name),
        flag("dropout", &a.dropout),
        flag("lr", &a.lr),
        flag("precision", &a.precision),
    ]);
    let cfg: SweepConfig = ctx.resolve("sweep", flags)?;
    let spec = task_spec(&cfg.task.task)?;
    let tok = load_tokenizer(&required(cfg.task.tokenizer.clone(), "tokenizer")?, ctx)?;
    let enc = load_encoder(&cfg.task, &tok, ctx)?;
    let opts = options(&cfg.task, &enc);
    let data = load_task(&cfg.task, &spec, true, ctx)?;
    let grid: Vec<GridPoint> = match cfg.grid {
        GridChoice::Full => full_grid(),
        GridChoice::Single => full_grid()
            .iter()
            .map(|p| p.seed)
            .take(3)
            .map(|seed| GridPoint {
                dropout: cfg.dropout,
                lr: cfg.lr,
                precision: cfg.precision,
                seed,
            })
            .collect(),
    };
    let [train, dev, test] = [&data.train, &data.dev, &data.test].map(|s| encode_examples(s, &tok, opts.max_len));
    let report = run_grid(&cfg.model_name, &enc, &spec, &train?, &dev?, &test?, &grid, &opts)?;
    if !report.failed_runs.is_empty() {
        log::warn!("{} of {} runs failed", report.failed_runs.len(), report.runs.len());
    }
    match (report.selected, report.selected_test) {
        (Some(i), Some(t)) => {
            let c = &report.configs[i];
            log::info!("selected dropout {} lr {:e} {:?}: test {t:.4}", c.dropout, c.lr, c.precision);
        }
        _ => return Err(CliError::Numerical("every grid run failed".into())),
    }
    fs::write(ctx.output("summary.csv"), summary_csv(std::slice::from_ref(&report)))?;
    ctx.write_json(&format!("metrics-{}.json", spec.name), &report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    seed: u64,
    model: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    task: String,
    input: Option<PathBuf>,
    batch_size: usize,
    max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = FinetuneOptions::default();
        Self {
            seed: DEFAULT_SEED,
            model: None,
            tokenizer: None,
            task: "rte".into(),
            input: None,
            batch_size: o.batch_size,
            max_len: o.max_len,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalSummary {
    task: String,
    metric: crate::finetune::Metric,
    examples: usize,
    score: f64,
}

fn eval(a: &EvalArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg: EvalConfig = ctx.resolve(
        "eval",
        vec![
            flag("model", &a.model),
            flag("tokenizer", &a.tokenizer),
            flag("task", &a.task),
            flag("input", &a.input),
            flag("batch_size", &a.batch_size),
            flag("max_len", &a.max_len),
        ],
    )?;
    let spec = task_spec(&cfg.task)?;
    let model = TaskModel::from_checkpoint(Checkpoint::load(&ctx.input(&required(cfg.model.clone(), "model")?))?)?;
    if model.head_type != spec.head_type {
        return Err(CliError::usage(format!("the model's {:?} head does not fit task {}", model.head_type, spec.name)));
    }
    let tok = load_tokenizer(&required(cfg.tokenizer.clone(), "tokenizer")?, ctx)?;
    let examples = load_split(&required(cfg.input.clone(), "input")?, Split::Test, &spec, ctx)?;
    for e in &examples {
        spec.validate_label(e.label)?;
    }
    let max_len = cfg.max_len.min(model.config.max_seq_len);
    let encoded = encode_examples(&examples, &tok, max_len)?;
    let score = evaluate(&model, &spec, &encoded, cfg.batch_size)?;
    log::info!("{} {:?} = {score:.4}", spec.name, spec.metric);
    ctx.write_json(
        &format!("eval-{}.json", spec.name),
        &EvalSummary {
            task: spec.name.clone(),
            metric: spec.metric,
            examples: examples.len(),
            score,
        },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ReportConfig {
    seed: u64,
    metrics: Vec<PathBuf>,
    loss_log: Option<PathBuf>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            metrics: Vec::new(),
            loss_log: None,
        }
    }
}

fn report(a: &ReportArgs, ctx: &mut Ctx) -> Result<(), CliError> {
    let metrics = (!a.metrics.is_empty()).then(|| a.metrics.clone());
    let cfg: ReportConfig = ctx.resolve("report", vec![flag("metrics", &metrics), flag("loss_log", &a.loss_log)])?;
    if cfg.metrics.is_empty() && cfg.loss_log.is_none() {
        return Err(CliError::usage("report needs --metrics and/or --loss-log"));
    }
    if !cfg.metrics.is_empty() {
        let mut reports = Vec::new();
        for p in &cfg.metrics {
            let text = fs::read_to_string(ctx.input(p))?;
            reports.push(serde_json::from_str::<MetricsReport>(&text)?);
        }
        fs::write(ctx.output("summary.csv"), summary_csv(&reports))?;
    }
    if let Some(p) = &cfg.loss_log {
        let log = read_loss_csv(&ctx.input(p))?;
        let (csv, svg) = (ctx.output("loss_curve.csv"), ctx.output("loss_curve.svg"));
        emit_loss_curve(&log, &csv, Some(&svg))?;
    }
    Ok(())
}
