use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;

use super::{attach_head, evaluate, finetune, EncodedExample, FinetuneError, FinetuneOptions, GridPoint, Metric, Precision, TaskSpec};

/// Dropout {0, 0.1} × lr {1e-6, 5e-6, 1e-5} × precision {fp32, fp16} ×
/// seed {41, 42, 43}, seeds innermost.
pub fn full_grid() -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(36);
    for dropout in [0.0, 0.1] {
        for lr in [1e-6, 5e-6, 1e-5] {
            for precision in [Precision::Fp32, Precision::Fp16] {
                for seed in [41, 42, 43] {
                    out.push(GridPoint {
                        dropout,
                        lr,
                        precision,
                        seed,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub point: GridPoint,
    pub dev_score: Option<f64>,
    pub test_score: Option<f64>,
    pub best_epoch: Option<usize>,
    pub dev_scores: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub dropout: f32,
    pub lr: f64,
    pub precision: Precision,
    /// Indices into `MetricsReport::runs`.
    pub runs: Vec<usize>,
    /// Successful runs only.
    pub completed: usize,
    pub dev_mean: Option<f64>,
    pub test_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub task: String,
    pub metric: Metric,
    pub runs: Vec<RunRecord>,
    pub configs: Vec<ConfigRow>,
    /// Index into `configs` of the argmax-dev configuration.
    pub selected: Option<usize>,
    /// Mean test score of the selected configuration over its seeds.
    pub selected_test: Option<f64>,
    pub failed_runs: Vec<usize>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Dev score, test score, best epoch and per-epoch dev scores of one run.
pub(super) type RunOutcome = Result<(f64, f64, usize, Vec<f64>), FinetuneError>;

fn one_run(
    encoder: &Encoder,
    spec: &TaskSpec,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    test: &[EncodedExample],
    point: &GridPoint,
    options: &FinetuneOptions,
) -> RunOutcome {
    let model = attach_head(encoder, spec.head_type, point.dropout, point.seed)?;
    let r = finetune(model, spec, train, dev, point, options)?;
    let test_score = evaluate(&r.model, spec, test, options.batch_size)?;
    Ok((r.dev_score, test_score, r.best_epoch, r.dev_scores))
}

/// Runs every grid point (in parallel), groups runs by configuration,
/// averages over seeds, and picks the configuration with the best mean dev
/// score. Test scores never enter the selection. Failed runs are recorded
/// and excluded from the means.
#[allow(clippy::too_many_arguments)]
pub fn run_grid(
    model_name: &str,
    encoder: &Encoder,
    spec: &TaskSpec,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    test: &[EncodedExample],
    grid: &[GridPoint],
    options: &FinetuneOptions,
) -> Result<MetricsReport, FinetuneError> {
    if grid.is_empty() {
        return Err(FinetuneError::EmptyGrid);
    }
    let results: Vec<_> = grid
        .par_iter()
        .map(|p| one_run(encoder, spec, train, dev, test, p, options))
        .collect();
    Ok(assemble(model_name, spec, grid, results))
}

pub(crate) fn assemble(
    model_name: &str,
    spec: &TaskSpec,
    grid: &[GridPoint],
    results: Vec<RunOutcome>,
) -> MetricsReport {
    let mut runs = Vec::with_capacity(grid.len());
    let mut failed_runs = Vec::new();
    for (index, (point, r)) in grid.iter().zip(results).enumerate() {
        runs.push(match r {
            Ok((dev, test, epoch, dev_scores)) => RunRecord {
                index,
                point: *point,
                dev_score: Some(dev),
                test_score: Some(test),
                best_epoch: Some(epoch),
                dev_scores,
                error: None,
            },
            Err(e) => {
                log::warn!("grid run {index} failed: {e}");
                failed_runs.push(index);
                RunRecord {
                    index,
                    point: *point,
                    dev_score: None,
                    test_score: None,
                    best_epoch: None,
                    dev_scores: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let mut configs: Vec<ConfigRow> = Vec::new();
    for run in &runs {
        let key = run.point.config_key();
        let row = match configs.iter_mut().find(|c| (c.dropout.to_bits(), c.lr.to_bits(), c.precision) == key) {
            Some(row) => row,
            None => {
                configs.push(ConfigRow {
                    dropout: run.point.dropout,
                    lr: run.point.lr,
                    precision: run.point.precision,
                    runs: Vec::new(),
                    completed: 0,
                    dev_mean: None,
                    test_mean: None,
                });
                configs.last_mut().expect("just pushed")
            }
        };
        row.runs.push(run.index);
    }
    for row in &mut configs {
        let ok: Vec<&RunRecord> = row.runs.iter().map(|&i| &runs[i]).filter(|r| r.error.is_none()).collect();
        row.completed = ok.len();
        row.dev_mean = mean(&ok.iter().filter_map(|r| r.dev_score).collect::<Vec<_>>());
        row.test_mean = mean(&ok.iter().filter_map(|r| r.test_score).collect::<Vec<_>>());
    }
    let mut selected: Option<usize> = None;
    for (i, row) in configs.iter().enumerate() {
        if let Some(d) = row.dev_mean {
            if selected.is_none_or(|s| d > configs[s].dev_mean.expect("selected rows have a mean")) {
                selected = Some(i);
            }
        }
    }
    MetricsReport {
        model: model_name.to_string(),
        task: spec.name.clone(),
        metric: spec.metric,
        selected_test: selected.and_then(|s| configs[s].test_mean),
        runs,
        configs,
        selected,
        failed_runs,
    }
}

/// One row per model, one column per task, cells holding the selected
/// configuration's mean test score.
pub fn summary_csv(reports: &[MetricsReport]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let mut s = format!("model,{}\n", tasks.join(","));
    for m in models {
        s.push_str(m);
        for t in &tasks {
            s.push(',');
            if let Some(v) = reports.iter().find(|r| r.model == m && r.task == *t).and_then(|r| r.selected_test) {
                s.push_str(&format!("{v:.4}"));
            }
        }
        s.push('\n');
    }
    s
}
