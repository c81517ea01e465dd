use super::{CpError, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRow {
    /// 1-based loading column.
    pub component: usize,
    pub importance: f64,
    /// Mean and population sd of the z-scored loadings per class.
    pub mean_neg: f64,
    pub sd_neg: f64,
    pub mean_pos: f64,
    pub sd_pos: f64,
    pub top_positive: Vec<String>,
    pub top_negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    /// Ranked by decreasing importance, ties by component.
    pub rows: Vec<ClusterRow>,
    /// Components that could not be standardized, with the reason.
    pub skipped: Vec<(usize, String)>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Ranks loading columns. Each column is z-scored; importance defaults to
/// the absolute gap between the class means of the z-scores unless
/// `importances` supplies one value per column. Top-k lists hold the ids with
/// the largest and smallest z-scores, ties broken by row order.
pub fn rank_clusters_report(
    loadings: &DMatrix<f64>,
    ids: &[String],
    labels: &[u8],
    importances: Option<&[f64]>,
    top_k: usize,
) -> Result<ClusterReport> {
    let n = loadings.nrows();
    if ids.len() != n || labels.len() != n {
        return Err(CpError::Shape(format!("{} ids and {} labels for {n} loading rows", ids.len(), labels.len())));
    }
    if let Some(imp) = importances {
        if imp.len() != loadings.ncols() {
            return Err(CpError::Shape(format!("{} importances for {} components", imp.len(), loadings.ncols())));
        }
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for r in 0..loadings.ncols() {
        let col: Vec<f64> = loadings.column(r).iter().copied().collect();
        let (mean, sd) = mean_sd(&col);
        if !(sd > 0.0 && sd.is_finite()) {
            log::warn!("component {} has constant loadings; skipped", r + 1);
            skipped.push((r + 1, "constant loadings cannot be standardized".to_string()));
            continue;
        }
        let z: Vec<f64> = col.iter().map(|v| (v - mean) / sd).collect();
        let split = |want: u8| -> Vec<f64> { z.iter().zip(labels).filter(|(_, &l)| l == want).map(|(v, _)| *v).collect() };
        let (mean_neg, sd_neg) = mean_sd(&split(0));
        let (mean_pos, sd_pos) = mean_sd(&split(1));
        let importance = match importances {
            Some(imp) => imp[r],
            None => (mean_pos - mean_neg).abs(),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&p, &q| z[q].total_cmp(&z[p]).then(p.cmp(&q)));
        let top_positive = order.iter().take(top_k).map(|&k| ids[k].clone()).collect();
        order.sort_by(|&p, &q| z[p].total_cmp(&z[q]).then(p.cmp(&q)));
        let top_negative = order.iter().take(top_k).map(|&k| ids[k].clone()).collect();
        rows.push(ClusterRow { component: r + 1, importance, mean_neg, sd_neg, mean_pos, sd_pos, top_positive, top_negative });
    }
    rows.sort_by(|p, q| q.importance.total_cmp(&p.importance).then(p.component.cmp(&q.component)));
    Ok(ClusterReport { rows, skipped })
}

/// One row per ranked component; id lists joined with `;`.
pub fn write_cluster_csv(path: &Path, report: &ClusterReport) -> Result<()> {
    let err = |e: csv::Error| CpError::Csv(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["rank", "component", "importance", "mean_neg", "sd_neg", "mean_pos", "sd_pos", "top_positive", "top_negative"])
        .map_err(err)?;
    for (k, row) in report.rows.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            row.component.to_string(),
            row.importance.to_string(),
            row.mean_neg.to_string(),
            row.sd_neg.to_string(),
            row.mean_pos.to_string(),
            row.sd_pos.to_string(),
            row.top_positive.join(";"),
            row.top_negative.join(";"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CpError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    fn fixture(seed: u64) -> (DMatrix<f64>, Vec<String>, Vec<u8>) {
        let mut r = rng(seed);
        let labels: Vec<u8> = (0..20).map(|k| (k % 2) as u8).collect();
        let m = DMatrix::from_fn(20, 4, |row, col| match col {
            2 => labels[row] as f64 * 5.0 + r.random::<f64>() * 0.1,
            3 => 1.0,
            _ => r.random::<f64>(),
        });
        let ids = (0..20).map(|k| format!("img{k:02}")).collect();
        (m, ids, labels)
    }

    #[test]
    fn separating_column_ranks_first() {
        for seed in 0..5 {
            let (m, ids, labels) = fixture(seed);
            let rep = rank_clusters_report(&m, &ids, &labels, None, 3).unwrap();
            assert_eq!(rep.rows[0].component, 3);
            assert!(rep.rows[0].importance > 1.9);
            assert!(rep.rows.windows(2).all(|w| w[0].importance >= w[1].importance));
        }
    }

    #[test]
    fn constant_column_skipped() {
        let (m, ids, labels) = fixture(0);
        let rep = rank_clusters_report(&m, &ids, &labels, None, 3).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(rep.skipped.len(), 1);
        assert_eq!(rep.skipped[0].0, 4);
    }

    #[test]
    fn top_k_matches_sort() {
        let (m, ids, labels) = fixture(3);
        let rep = rank_clusters_report(&m, &ids, &labels, None, 4).unwrap();
        for row in &rep.rows {
            let mut pairs: Vec<(f64, &String)> = m.column(row.component - 1).iter().copied().zip(&ids).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let want: Vec<String> = pairs.iter().take(4).map(|p| p.1.clone()).collect();
            assert_eq!(row.top_positive, want);
            let want: Vec<String> = pairs.iter().rev().take(4).map(|p| p.1.clone()).collect();
            assert_eq!(row.top_negative, want);
        }
    }

    #[test]
    fn supplied_importances_and_csv() {
        let (m, ids, labels) = fixture(1);
        let rep = rank_clusters_report(&m, &ids, &labels, Some(&[3.0, 9.0, 1.0, 0.0]), 2).unwrap();
        assert_eq!(rep.rows.iter().map(|r| r.component).collect::<Vec<_>>(), [2, 1, 3]);
        assert!(rank_clusters_report(&m, &ids, &labels, Some(&[1.0]), 2).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_cluster_csv(&p, &rep).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("1,2,9,"));
    }
}
