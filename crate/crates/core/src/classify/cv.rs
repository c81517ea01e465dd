use super::{metrics, ClassifyError, Dataset, Metrics, ModelSpec, Result, Standardizer};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, repeats: 10, seed: 0 }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold index per sample. Each class is shuffled and dealt round-robin,
/// continuing from where the previous class stopped, so every fold's class
/// counts are within one of the global proportion.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(ClassifyError::Data(format!("{folds} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(ClassifyError::TooFew { class, count: members.len(), folds });
        }
        members.shuffle(&mut rng);
        for i in members {
            out[i] = next;
            next = (next + 1) % folds;
        }
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(ClassifyError::Data("labels must be 0 or 1".into()));
    }
    Ok(out)
}

/// Every `(train, test)` split of a CV run, repeat-major then fold order.
pub fn fold_plan(labels: &[u8], cfg: &CvConfig) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let mut out = Vec::with_capacity(cfg.repeats * cfg.folds);
    for rep in 0..cfg.repeats {
        let assign = stratified_folds(labels, cfg.folds, mix(cfg.seed, rep as u64))?;
        for fold in 0..cfg.folds {
            out.push((
                (0..labels.len()).filter(|&i| assign[i] != fold).collect(),
                (0..labels.len()).filter(|&i| assign[i] == fold).collect(),
            ));
        }
    }
    Ok(out)
}

/// Mean and sample sd of each metric over all evaluated folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub feature_set: String,
    pub model: String,
    pub tuning: String,
    pub folds: usize,
    pub accuracy: (f64, f64),
    pub auc: (f64, f64),
    pub sensitivity: (f64, f64),
    pub specificity: (f64, f64),
    /// Mean fit + score wall time per fold, seconds.
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub rows: Vec<ReportRow>,
}

impl ClassificationReport {
    /// Row with the highest mean AUC, first on ties.
    pub fn best_by_auc(&self) -> Option<&ReportRow> {
        self.rows.iter().fold(None, |best: Option<&ReportRow>, r| match best {
            Some(b) if b.auc.0 >= r.auc.0 => Some(b),
            _ => Some(r),
        })
    }

    pub fn merge(mut self, other: ClassificationReport) -> Self {
        self.rows.extend(other.rows);
        self
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Repeated stratified CV where the features of each split come from
/// `featurize(train_rows, test_rows)`, so train-derived transforms (content
/// image, CP decomposition) can be refitted per fold. Columns are then
/// standardized with train-fold statistics before every model in `grid` is fitted.
pub fn cross_validate_with<F>(
    labels: &[u8],
    feature_set: &str,
    grid: &[ModelSpec],
    cfg: &CvConfig,
    mut featurize: F,
) -> Result<ClassificationReport>
where
    F: FnMut(&[usize], &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)>,
{
    if grid.is_empty() {
        return Err(ClassifyError::Grid("empty model grid".into()));
    }
    let mut results: Vec<Vec<(Metrics, f64)>> = vec![Vec::new(); grid.len()];
    for (k, (train, test)) in fold_plan(labels, cfg)?.into_iter().enumerate() {
        let (rep, fold) = (k / cfg.folds, k % cfg.folds);
        {
            let (xtr, xte) = featurize(&train, &test)?;
            if xtr.nrows() != train.len() || xte.nrows() != test.len() || xtr.ncols() != xte.ncols() {
                return Err(ClassifyError::Featurize(format!(
                    "got {}×{} train and {}×{} test for {} and {} rows",
                    xtr.nrows(),
                    xtr.ncols(),
                    xte.nrows(),
                    xte.ncols(),
                    train.len(),
                    test.len()
                )));
            }
            let all_tr: Vec<usize> = (0..xtr.nrows()).collect();
            let std = Standardizer::fit(&xtr, &all_tr);
            let ztr = std.apply(&xtr, &all_tr);
            let zte = std.apply(&xte, &(0..xte.nrows()).collect::<Vec<_>>());
            let ytr: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
            let yte: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
            let fold_seed = mix(mix(cfg.seed, rep as u64), fold as u64 + 1);
            for (g, spec) in grid.iter().enumerate() {
                let start = Instant::now();
                let (scores, threshold) = spec.fit_score(&ztr, &ytr, &zte, fold_seed)?;
                let elapsed = start.elapsed().as_secs_f64();
                results[g].push((metrics(&scores, &yte, threshold)?, elapsed));
            }
        }
    }
    let rows = grid
        .iter()
        .zip(results)
        .map(|(spec, res)| {
            let pick = |f: fn(&Metrics) -> f64| mean_sd(&res.iter().map(|(m, _)| f(m)).collect::<Vec<_>>());
            ReportRow {
                feature_set: feature_set.to_string(),
                model: spec.model_name().to_string(),
                tuning: spec.tuning(),
                folds: res.len(),
                accuracy: pick(|m| m.accuracy),
                auc: pick(|m| m.auc),
                sensitivity: pick(|m| m.sensitivity),
                specificity: pick(|m| m.specificity),
                runtime_secs: res.iter().map(|(_, t)| t).sum::<f64>() / res.len() as f64,
            }
        })
        .collect();
    Ok(ClassificationReport { rows })
}

/// Repeated stratified CV on a fixed feature matrix.
pub fn cross_validate(ds: &Dataset, grid: &[ModelSpec], cfg: &CvConfig) -> Result<ClassificationReport> {
    let take = |rows: &[usize]| DMatrix::from_fn(rows.len(), ds.x.ncols(), |i, j| ds.x[(rows[i], j)]);
    cross_validate_with(&ds.labels, ds.block.name(), grid, cfg, |tr, te| Ok((take(tr), take(te))))
}

/// Metric CSV without the runtime column, so identical runs give identical bytes.
pub fn write_report_csv(path: &Path, report: &ClassificationReport) -> Result<()> {
    let err = |e: csv::Error| ClassifyError::Report(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "feature_set",
        "model",
        "tuning",
        "folds",
        "accuracy_mean",
        "accuracy_sd",
        "auc_mean",
        "auc_sd",
        "sensitivity_mean",
        "sensitivity_sd",
        "specificity_mean",
        "specificity_sd",
    ])
    .map_err(err)?;
    for r in &report.rows {
        let mut rec = vec![r.feature_set.clone(), r.model.clone(), r.tuning.clone(), r.folds.to_string()];
        for (m, s) in [r.accuracy, r.auc, r.sensitivity, r.specificity] {
            rec.push(format!("{m:.6}"));
            rec.push(format!("{s:.6}"));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| ClassifyError::Report(e.to_string()))
}

/// Model rows × metric columns as `mean (sd)` percentages, plus runtime.
pub fn write_report_table(report: &ClassificationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<12} {:<24} {:>15} {:>15} {:>15} {:>15} {:>10}",
        "features", "model", "tuning", "Accuracy", "AUC", "Sensitivity", "Specificity", "Runtime(s)"
    );
    let pct = |(m, s): (f64, f64)| format!("{:.2} ({:.2})", 100.0 * m, 100.0 * s);
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<10} {:<12} {:<24} {:>15} {:>15} {:>15} {:>15} {:>10.3}",
            r.feature_set,
            r.model,
            r.tuning,
            pct(r.accuracy),
            pct(r.auc),
            pct(r.sensitivity),
            pct(r.specificity),
            r.runtime_secs
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::FeatureBlock;
    use super::*;
    use crate::testutil::rng;
    use rand::Rng;

    fn labels(n_pos: usize, n_neg: usize) -> Vec<u8> {
        let mut v = vec![1u8; n_pos];
        v.extend(vec![0u8; n_neg]);
        v
    }

    #[test]
    fn folds_are_stratified() {
        for (pos, neg) in [(13, 37), (10, 10), (5, 23)] {
            let y = labels(pos, neg);
            for seed in 0..5 {
                let f = stratified_folds(&y, 5, seed).unwrap();
                for k in 0..5 {
                    let size = f.iter().filter(|&&v| v == k).count() as f64;
                    let p = (0..y.len()).filter(|&i| f[i] == k && y[i] == 1).count() as f64;
                    assert!((p - size * pos as f64 / y.len() as f64).abs() <= 1.0 + 1e-9);
                    assert!((size - y.len() as f64 / 5.0).abs() <= 1.0);
                }
            }
        }
        assert!(matches!(stratified_folds(&labels(4, 20), 5, 0), Err(ClassifyError::TooFew { class: 1, .. })));
    }

    fn noisy_dataset(seed: u64, informative: bool) -> Dataset {
        let mut r = rng(seed);
        let n = 60;
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, 3, |i, j| {
            let shift = if informative && j == 0 { 1.5 * f64::from(y[i]) } else { 0.0 };
            r.random::<f64>() + shift
        });
        Dataset::new(x, y, (0..n).map(|i| i.to_string()).collect(), FeatureBlock::Cp).unwrap()
    }

    #[test]
    fn deterministic_report() {
        let ds = noisy_dataset(1, true);
        let grid = [ModelSpec::Logistic { alpha: 0.5 }, ModelSpec::SvmRbf { cost: 1.0, gamma: 0.1 }];
        let cfg = CvConfig { repeats: 2, seed: 9, ..CvConfig::default() };
        let a = cross_validate(&ds, &grid, &cfg).unwrap();
        let b = cross_validate(&ds, &grid, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_report_csv(&pa, &a).unwrap();
        write_report_csv(&pb, &b).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        for r in &a.rows {
            assert_eq!(r.folds, 10);
            for (m, s) in [r.accuracy, r.auc, r.sensitivity, r.specificity] {
                assert!((0.0..=1.0).contains(&m) && s >= 0.0);
            }
            assert!(r.auc.0 > 0.8);
        }
        let table = write_report_table(&a);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("svm_rbf"));
    }

    #[test]
    fn permuted_labels_give_chance_auc() {
        let ds = noisy_dataset(2, false);
        let mut y = ds.labels.clone();
        y.shuffle(&mut rng(5));
        let ds = Dataset { labels: y, ..ds };
        let rep = cross_validate(&ds, &[ModelSpec::Logistic { alpha: 0.0 }], &CvConfig::default()).unwrap();
        assert_eq!(rep.rows[0].folds, 50);
        let auc = rep.rows[0].auc.0;
        assert!((0.4..=0.6).contains(&auc), "{auc}");
    }

    #[test]
    fn featurize_sees_disjoint_splits() {
        let y = labels(10, 15);
        let mut calls = 0;
        cross_validate_with(&y, "probe", &[ModelSpec::SvmLinear { cost: 1.0 }], &CvConfig { repeats: 2, ..CvConfig::default() }, |tr, te| {
            calls += 1;
            assert_eq!(tr.len() + te.len(), 25);
            assert!(tr.iter().all(|i| !te.contains(i)));
            let f = |rows: &[usize]| DMatrix::from_fn(rows.len(), 1, |i, _| f64::from(y[rows[i]]));
            Ok((f(tr), f(te)))
        })
        .unwrap();
        assert_eq!(calls, 10);
    }

    #[test]
    fn standardization_ignores_test_rows() {
        let ds = noisy_dataset(3, true);
        let f = stratified_folds(&ds.labels, 5, 1).unwrap();
        let train: Vec<usize> = (0..60).filter(|&i| f[i] != 0).collect();
        let mut poisoned = ds.x.clone();
        for i in (0..60).filter(|&i| f[i] == 0) {
            poisoned.row_mut(i).fill(1e9);
        }
        assert_eq!(Standardizer::fit(&ds.x, &train), Standardizer::fit(&poisoned, &train));
    }

    #[test]
    fn best_row_selection() {
        let ds = noisy_dataset(4, true);
        let rep = cross_validate(
            &ds,
            &[ModelSpec::SvmLinear { cost: 0.01 }, ModelSpec::SvmLinear { cost: 1.0 }],
            &CvConfig { repeats: 1, ..CvConfig::default() },
        )
        .unwrap();
        let best = rep.best_by_auc().unwrap();
        assert!(rep.rows.iter().all(|r| r.auc.0 <= best.auc.0));
    }
}
