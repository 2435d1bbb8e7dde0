use super::*;
use crate::rng::{stream, Stream};
use crate::tokenizer::SpecialIds;

#[test]
fn schedule_examples() {
    assert_eq!(lr_at(0, 10_000, 200_000, 1e-5), 0.0);
    assert_eq!(lr_at(10_000, 10_000, 200_000, 1e-5), 1e-5);
    assert_eq!(lr_at(105_000, 10_000, 200_000, 1e-5), 5e-6);
    assert_eq!(lr_at(200_000, 10_000, 200_000, 1e-5), 0.0);
    assert_eq!(lr_at(200_001, 10_000, 200_000, 1e-5), 0.0);
    assert_eq!(lr_at(5_000, 10_000, 200_000, 1e-5), 5e-6);
    assert_eq!(lr_at(3, 0, 0, 1.0), 0.0);
    assert_eq!(lr_at(0, 0, 10, 2.0), 2.0);
}

#[test]
fn masking_rate_zero_is_identity() {
    let ids: Vec<u32> = vec![2, 9, 10, 11, 3];
    let (inp, labels, actions) = apply_mlm_masking(&ids, &SpecialIds::default(), 50, 0.0, &mut stream(1, Stream::Masking, &[]));
    assert_eq!(inp, ids);
    assert!(labels.iter().all(|&l| l == crate::autodiff::IGNORE_INDEX));
    assert!(actions.is_empty());
}

#[test]
fn masking_rate_one_selects_every_regular_token() {
    let specials = SpecialIds::default();
    let ids: Vec<u32> = (10..20).collect();
    let mut with_specials = vec![2];
    with_specials.extend(&ids);
    with_specials.push(3);
    let (inp, labels, actions) = apply_mlm_masking(&with_specials, &specials, 50, 1.0, &mut stream(1, Stream::Masking, &[]));
    assert_eq!(actions.len(), 10);
    assert_eq!((inp[0], inp[11]), (2, 3));
    assert_eq!(labels[1..11], ids.iter().map(|&i| i as i64).collect::<Vec<_>>()[..]);
    for (a, &x) in actions.iter().zip(&inp[1..11]) {
        match a {
            MaskAction::Mask => assert_eq!(x, specials.mask),
            MaskAction::Random => assert!(!specials.contains(x) && (x as usize) < 50),
            MaskAction::Keep => {}
        }
    }
}

#[test]
fn random_replacements_cover_only_regular_ids() {
    let specials = SpecialIds { pad: 7, unk: 1, cls: 2, sep: 3, mask: 9 };
    let ids = vec![20u32; 20_000];
    let (inp, _, actions) = apply_mlm_masking(&ids, &specials, 12, 1.0, &mut stream(3, Stream::Masking, &[]));
    let mut seen = std::collections::BTreeSet::new();
    for (a, x) in actions.iter().zip(&inp) {
        if *a == MaskAction::Random {
            seen.insert(*x);
        }
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![0, 4, 5, 6, 8, 10, 11]);
}

#[test]
fn batches_pad_dynamically_and_deterministically() {
    let b = make_batches(&[7, 12], 2, 128, 5, 0).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].width, 12);
    let full = make_batches(&[128; 6], 4, 128, 5, 0).unwrap();
    assert!(full.iter().all(|m| m.width == 128));
    assert_eq!(make_batches(&[200], 1, 128, 5, 0).unwrap()[0].width, 128);
    let lengths: Vec<usize> = (1..40).collect();
    assert_eq!(make_batches(&lengths, 8, 128, 9, 2).unwrap(), make_batches(&lengths, 8, 128, 9, 2).unwrap());
    assert_ne!(make_batches(&lengths, 8, 128, 9, 2).unwrap(), make_batches(&lengths, 8, 128, 9, 3).unwrap());
    assert!(matches!(make_batches(&[], 8, 128, 9, 0), Err(PretrainError::EmptyCorpus)));
}

#[test]
fn ema_recurrence() {
    let mut log = LossLog::default();
    for (i, l) in [4.0, 3.0, 3.5, 1.0].into_iter().enumerate() {
        log.push(i as u64 + 1, 0, 0.1, l);
    }
    assert_eq!(log.records[0].ema_loss, 4.0);
    for w in log.records.windows(2) {
        assert_eq!(w[1].ema_loss, 0.95 * w[0].ema_loss + 0.05 * w[1].loss);
    }
    assert!(log.to_csv().starts_with("step,epoch,lr,loss,ema_loss\n1,0,"));
}

#[test]
fn config_validation() {
    let mut c = TrainRunConfig::default();
    assert!(c.validate().is_ok());
    assert_eq!(c.effective_batch(), 32);
    c.warmup_steps = c.total_steps + 1;
    assert!(c.validate().is_err());
    let c = TrainRunConfig { mask_rate: 1.5, ..TrainRunConfig::default() };
    assert!(c.validate().is_err());
    let p = TrainRunConfig::reference_scale(ReferenceScale::XlargePortugal);
    assert_eq!(p.effective_batch(), 832);
    assert_eq!(TrainRunConfig::reference_scale(ReferenceScale::XlargeBrazil).effective_batch(), 896);
}

fn tiny_corpus(n: usize, len: usize, vocab: u32) -> Vec<Vec<u32>> {
    (0..n)
        .map(|i| {
            let mut s = vec![2];
            s.extend((0..len).map(|t| 5 + ((i * 31 + t * 7 + i * t) as u32 % (vocab - 5))));
            s.push(3);
            s
        })
        .collect()
}

fn micro_run(micro: usize, accum: usize) -> TrainRunConfig {
    TrainRunConfig {
        seq_len: 16,
        micro_batch_size: micro,
        accumulation_steps: accum,
        peak_lr: 1e-3,
        warmup_steps: 0,
        total_steps: 3,
        preset: crate::encoder::Preset::Micro,
        dropout_rate: Some(0.0),
        ..TrainRunConfig::default()
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let seqs = tiny_corpus(16, 12, 60);
    let mut c = micro_run(8, 2);
    c.total_steps = 1;
    c.warmup_steps = 0;
    let out = train_sequences(&c, &seqs, SpecialIds::default(), 60).unwrap();
    let l0 = out.log.records[0].loss;
    assert!((l0 / 60f64.ln() - 1.0).abs() < 0.1, "{l0}");
}

#[test]
fn accumulation_matches_large_batch() {
    let seqs = tiny_corpus(16, 10, 60);
    let a = train_sequences(&micro_run(2, 4), &seqs, SpecialIds::default(), 60).unwrap();
    let b = train_sequences(&micro_run(8, 1), &seqs, SpecialIds::default(), 60).unwrap();
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for ((_, n, x), (_, _, y)) in a.encoder.params.iter().zip(b.encoder.params.iter()) {
        for (u, v) in x.data().iter().zip(y.data()) {
            diff += ((u - v) as f64).powi(2);
            norm += (*v as f64).powi(2);
        }
        let _ = n;
    }
    assert!((diff / norm).sqrt() < 1e-5, "{}", (diff / norm).sqrt());
    for (ra, rb) in a.log.records.iter().zip(&b.log.records) {
        assert!((ra.loss - rb.loss).abs() < 1e-5);
    }
}

#[test]
fn checkpoints_and_log_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = tiny_corpus(8, 10, 60);
    let mut c = micro_run(4, 1);
    c.total_steps = 4;
    c.checkpoint_every = 2;
    c.output_dir = Some(dir.path().to_path_buf());
    let out = train_sequences(&c, &seqs, SpecialIds::default(), 60).unwrap();
    let names: Vec<String> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["step-000002.ckpt", "final.ckpt"]);
    let back = crate::encoder::Encoder::from_checkpoint(crate::encoder::Checkpoint::load(&out.checkpoints[1]).unwrap()).unwrap();
    assert_eq!(back.params, out.encoder.params);
    assert!(dir.path().join("loss.csv").exists());
    // Continuing from a checkpoint starts from its weights.
    c.init_checkpoint = Some(out.checkpoints[1].clone());
    c.total_steps = 1;
    c.output_dir = None;
    c.peak_lr = 0.0;
    let resumed = train_sequences(&c, &seqs, SpecialIds::default(), 60).unwrap();
    assert_eq!(resumed.encoder.params, out.encoder.params);
}

#[test]
fn non_finite_loss_aborts_with_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = tiny_corpus(8, 10, 60);
    let mut c = micro_run(4, 1);
    c.output_dir = Some(dir.path().to_path_buf());
    c.peak_lr = 1e30;
    let err = train_sequences(&c, &seqs, SpecialIds::default(), 60).unwrap_err();
    match err {
        PretrainError::NonFinite { last_good: Some(p), .. } => {
            let ck = crate::encoder::Checkpoint::load(&p).unwrap();
            assert!(ck.params.iter().all(|(_, _, t)| t.data().iter().all(|v| v.is_finite())));
        }
        e => panic!("unexpected {e:?}"),
    }
}
