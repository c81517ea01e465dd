use super::{ClassifyError, Result};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(ClassifyError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ClassifyError::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(ClassifyError::Data("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(ClassifyError::OneClass(format!("{pos} positives and {neg} negatives")));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let mid = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += order[k..=end].iter().filter(|&&i| labels[i] == 1).count() as f64 * mid;
        k = end + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Scores at or above `threshold` are called positive.
pub fn metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    let (pos, neg) = check(scores, labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        auc: auc(scores, labels)?,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}
