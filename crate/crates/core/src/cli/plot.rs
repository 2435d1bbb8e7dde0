use std::fmt::Write as _;
use std::path::Path;

use crate::pretrain::{LossLog, LossRecord};

use super::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 48.0;

/// Reads the `step,epoch,lr,loss,ema_loss` file written by pre-training.
pub fn read_loss_csv(path: &Path) -> Result<LossLog, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let records = rdr.deserialize::<LossRecord>().collect::<Result<Vec<_>, _>>()?;
    Ok(LossLog { records })
}

pub fn loss_curve_csv(log: &LossLog) -> Result<String, CliError> {
    if log.records.is_empty() {
        return Err(CliError::Data("empty loss log".into()));
    }
    let mut s = String::from("step,loss,ema_loss\n");
    for r in &log.records {
        let _ = writeln!(s, "{},{},{}", r.step, r.loss, r.ema_loss);
    }
    Ok(s)
}

/// Black-on-white line chart of the smoothed loss. The curve is the
/// `<path id="ema">` element.
pub fn loss_curve_svg(log: &LossLog) -> Result<String, CliError> {
    let recs = &log.records;
    if recs.is_empty() {
        return Err(CliError::Data("empty loss log".into()));
    }
    let (s0, s1) = (recs[0].step as f64, recs[recs.len() - 1].step as f64);
    let lo = recs.iter().map(|r| r.ema_loss).fold(f64::INFINITY, f64::min);
    let hi = recs.iter().map(|r| r.ema_loss).fold(f64::NEG_INFINITY, f64::max);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |step: f64| if s1 > s0 { MARGIN + (step - s0) / (s1 - s0) * pw } else { MARGIN + pw / 2.0 };
    let y = |v: f64| if hi > lo { MARGIN + (hi - v) / (hi - lo) * ph } else { MARGIN + ph / 2.0 };
    let mut d = String::new();
    for (i, r) in recs.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, x(r.step as f64), y(r.ema_loss));
    }
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black" stroke-width="1"/>"#);
    let _ = writeln!(s, r#"<path id="ema" d="{d}" fill="none" stroke="black" stroke-width="1.5"/>"#);
    let font = r#"font-family="sans-serif" font-size="11" fill="black""#;
    let _ = writeln!(s, r#"<text x="{}" y="{}" {font}>{}</text>"#, x0, y0 + 16.0, recs[0].step);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" {font}>{}</text>"#, x1, y0 + 16.0, recs[recs.len() - 1].step);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" {font}>{hi:.3}</text>"#, x0 - 4.0, y1 + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" {font}>{lo:.3}</text>"#, x0 - 4.0, y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" {font}>step</text>"#, WIDTH / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle" {font}>EMA loss</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes the plot-ready CSV and, when `svg` is given, the chart.
pub fn emit_loss_curve(log: &LossLog, csv_path: &Path, svg: Option<&Path>) -> Result<(), CliError> {
    let csv = loss_curve_csv(log)?;
    std::fs::write(csv_path, csv)?;
    if let Some(p) = svg {
        std::fs::write(p, loss_curve_svg(log)?)?;
    }
    Ok(())
}
