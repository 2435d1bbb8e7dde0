use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::flag;
use super::*;
use crate::pretrain::{LossLog, EMA_SMOOTHING};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
struct Knobs {
    seed: u64,
    lr: f64,
    steps: u64,
    name: String,
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            seed: 42,
            lr: 1e-4,
            steps: 10,
            name: "d".into(),
        }
    }
}

#[test]
fn flag_beats_file_beats_default() {
    let file = json!({"lr": 0.5, "steps": 3, "unrelated": 1, "pretrain": {"steps": 7, "name": "sec"}});
    let (k, snap): (Knobs, _) = resolve("pretrain", Some(&file), &[flag("steps", &Some(99u64)), flag("seed", &None::<u64>)]).unwrap();
    assert_eq!(
        k,
        Knobs {
            seed: 42,
            lr: 0.5,
            steps: 99,
            name: "sec".into()
        }
    );
    assert_eq!(snap["steps"], 99);
    let (k, _): (Knobs, _) = resolve("other", Some(&file), &[]).unwrap();
    assert_eq!((k.steps, k.name.as_str()), (3, "d"));
    let (k, _): (Knobs, _) = resolve("pretrain", None, &[]).unwrap();
    assert_eq!(k, Knobs::default());
}

#[test]
fn ill_typed_config_is_a_usage_error() {
    let file = json!({"steps": "many"});
    let err = resolve::<Knobs>("x", Some(&file), &[]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_USAGE);
}

fn log_of(losses: &[f64]) -> LossLog {
    let mut log = LossLog::default();
    for (i, &l) in losses.iter().enumerate() {
        log.push(i as u64 + 1, 0, 1e-4, l);
    }
    log
}

#[test]
fn loss_curve_csv_shape_and_ema() {
    let csv = loss_curve_csv(&log_of(&[3.0, 2.0, 2.5])).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "step,loss,ema_loss");
    let rows: Vec<Vec<f64>> = lines[1..].iter().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows[0][2], rows[0][1]);
    for w in rows.windows(2) {
        assert_eq!(w[1][2], EMA_SMOOTHING * w[0][2] + 0.05 * w[1][1]);
    }
    assert!(loss_curve_csv(&LossLog::default()).is_err());
    assert!(loss_curve_svg(&LossLog::default()).is_err());
}

fn ema_path_points(svg: &str) -> Vec<(f64, f64)> {
    let start = svg.find(r#"<path id="ema" d=""#).unwrap() + r#"<path id="ema" d=""#.len();
    let d = &svg[start..start + svg[start..].find('"').unwrap()];
    d.split(['M', 'L'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn decreasing_loss_draws_a_descending_line() {
    let losses: Vec<f64> = (0..50).map(|i| 5.0 * (-0.05 * i as f64).exp()).collect();
    let svg = loss_curve_svg(&log_of(&losses)).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let pts = ema_path_points(&svg);
    assert_eq!(pts.len(), 50);
    // Screen y grows downwards, so a falling loss has rising y.
    assert!(pts.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 > w[0].0));
    assert!(pts[49].1 > pts[0].1);
    assert!(!svg.contains("stroke=\"red\"") && !svg.contains("#"));
}

#[test]
fn constant_and_single_point_logs_render() {
    assert_eq!(ema_path_points(&loss_curve_svg(&log_of(&[1.0])).unwrap()).len(), 1);
    let pts = ema_path_points(&loss_curve_svg(&log_of(&[2.0, 2.0, 2.0])).unwrap());
    assert!(pts.iter().all(|p| p.1 == pts[0].1));
}

#[test]
fn atomic_write_replaces_and_leaves_no_temp() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    write_atomic(&p, b"one").unwrap();
    write_atomic(&p, b"two").unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn digests_are_64_hex_chars() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x");
    std::fs::write(&p, b"abc").unwrap();
    assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(["lusoforge"]), EXIT_USAGE);
    assert_eq!(run(["lusoforge", "frobnicate"]), EXIT_USAGE);
    assert_eq!(run(["lusoforge", "corpus"]), EXIT_USAGE);
    assert_eq!(run(["lusoforge", "--help"]), EXIT_OK);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // Missing required input.
    assert_eq!(run(["lusoforge", "--out", out, "corpus", "stats"]), EXIT_USAGE);
    assert_eq!(run(["lusoforge", "--out", out, "sweep", "--task", "nope"]), EXIT_USAGE);
}
