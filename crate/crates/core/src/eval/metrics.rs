use crate::error::{Error, Result};

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} scores vs {b} labels")));
    }
    Ok(())
}

/// Area under the ROC curve from the Mann-Whitney rank sum; tied scores
/// share their average rank, so each tied pair counts one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_len("auc", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Expected over observed events, `sum(probs) / sum(outcomes)`.
pub fn eo_ratio(probs: &[f64], outcomes: &[bool]) -> Result<f64> {
    check_len("eo_ratio", probs.len(), outcomes.len())?;
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let observed = outcomes.iter().filter(|&&o| o).count();
    if observed == 0 {
        return Err(Error::InsufficientData("no observed events".into()));
    }
    Ok(probs.iter().sum::<f64>() / observed as f64)
}
