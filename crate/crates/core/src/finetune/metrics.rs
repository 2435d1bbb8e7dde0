use super::FinetuneError;

fn check_len(pred: usize, gold: usize, min: usize) -> Result<(), FinetuneError> {
    if pred != gold || pred < min {
        return Err(FinetuneError::MetricLength { pred, gold, min });
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(pred: &[f64], gold: &[f64]) -> Result<f64, FinetuneError> {
    check_len(pred.len(), gold.len(), 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mg = gold.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gold) {
        cov += (p - mp) * (g - mg);
        vp += (p - mp) * (p - mp);
        vg += (g - mg) * (g - mg);
    }
    if vp == 0.0 || vg == 0.0 {
        return Err(FinetuneError::UndefinedCorrelation);
    }
    Ok((cov / (vp.sqrt() * vg.sqrt())).clamp(-1.0, 1.0))
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64, FinetuneError> {
    check_len(pred.len(), gold.len(), 1)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// F1 of `positive`; 0 when precision + recall is 0.
pub fn f1_binary(pred: &[usize], gold: &[usize], positive: usize) -> Result<f64, FinetuneError> {
    check_len(pred.len(), gold.len(), 1)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == positive, g == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}
