use super::cache::io_err;
use super::config::{FeatureSet, GridCell, GridConfig, RunConfig};
use super::manifest::Manifest;
use super::run::Pipeline;
use super::{PipelineError, Result, Stage};
use crate::classify::{ClassificationReport, ReportRow};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    /// Completed cells, one `grid_cells.csv` row each.
    pub cells: usize,
    pub cells_csv: PathBuf,
    pub marginals_csv: PathBuf,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Artifact { path: path.display().to_string(), detail: e.to_string() }
}

fn style_label(cell: &GridCell) -> String {
    cell.style_layers.join("+")
}

/// Config of one grid cell: α = 1, β = ratio, γ = TV weight, CP features at a
/// single rank, no run-directory report.
fn cell_config(base: &RunConfig, cell: &GridCell) -> RunConfig {
    let mut cfg = base.clone();
    cfg.transfer.style_layers = cell.style_layers.clone();
    cfg.transfer.content_layer = cell.content_layer.clone();
    cfg.transfer.alpha = 1.0;
    cfg.transfer.beta = cell.ratio;
    cfg.transfer.gamma = cell.tv_weight;
    cfg.transfer.layer_weights = None;
    cfg.feature_sets = vec![FeatureSet::Cp];
    cfg.ranks = vec![base.grid.rank.unwrap_or(base.ranks[0])];
    cfg.stages = Stage::ALL.iter().copied().filter(|&s| s != Stage::Report).collect();
    cfg
}

/// Runs every cell of `config.grid` through the cached pipeline and writes
/// `grid_cells.csv` and `grid_marginals.csv` into `out_dir`.
pub fn run_grid(manifest: &Manifest, config: &RunConfig, out_dir: &Path) -> Result<GridSummary> {
    config.validate()?;
    let cells = config.grid.cells();
    let mut results: Vec<(GridCell, Vec<ReportRow>)> = Vec::with_capacity(cells.len());
    for cell in cells {
        log::info!("grid cell {} {:?} {} β={} γ={}", cell.index, cell.style_layers, cell.content_layer, cell.ratio, cell.tv_weight);
        let cfg = cell_config(config, &cell);
        let mut p = Pipeline::new(manifest.clone(), cfg, out_dir.join(format!("cell_{:03}", cell.index)))?;
        p.run()?;
        let report = p.classification()?;
        results.push((cell, report.rows));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let best: Vec<(GridCell, ReportRow)> = results
        .into_iter()
        .map(|(cell, rows)| {
            let report = ClassificationReport { rows };
            let row = report.best_by_auc().cloned().ok_or_else(|| PipelineError::Config("empty classifier grid".into()))?;
            Ok((cell, row))
        })
        .collect::<Result<_>>()?;
    let cells_csv = out_dir.join("grid_cells.csv");
    write_cells(&cells_csv, &best)?;
    let marginals_csv = out_dir.join("grid_marginals.csv");
    write_marginals(&marginals_csv, &config.grid, &best)?;
    Ok(GridSummary { cells: best.len(), cells_csv, marginals_csv })
}

/// One row per cell with its best classifier by mean AUC.
fn write_cells(path: &Path, best: &[(GridCell, ReportRow)]) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "cell",
        "style_layers",
        "content_layer",
        "ratio",
        "tv_weight",
        "model",
        "tuning",
        "folds",
        "accuracy_mean",
        "accuracy_sd",
        "auc_mean",
        "auc_sd",
    ])
    .map_err(&err)?;
    for (cell, r) in best {
        w.write_record([
            cell.index.to_string(),
            style_label(cell),
            cell.content_layer.clone(),
            cell.ratio.to_string(),
            cell.tv_weight.to_string(),
            r.model.clone(),
            r.tuning.clone(),
            r.folds.to_string(),
            format!("{:.6}", r.accuracy.0),
            format!("{:.6}", r.accuracy.1),
            format!("{:.6}", r.auc.0),
            format!("{:.6}", r.auc.1),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Per axis level: the mean and maximum over its cells of the best-model metrics.
fn write_marginals(path: &Path, grid: &GridConfig, best: &[(GridCell, ReportRow)]) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["axis", "level", "cells", "accuracy_mean", "auc_mean", "accuracy_max", "auc_max"]).map_err(&err)?;
    let axes: [(&str, Vec<String>, fn(&GridCell) -> String); 4] = [
        ("style_layers", grid.style_layer_sets.iter().map(|s| s.join("+")).collect(), style_label),
        ("content_layer", grid.content_layers.clone(), |c| c.content_layer.clone()),
        ("ratio", grid.ratios.iter().map(f64::to_string).collect(), |c| c.ratio.to_string()),
        ("tv_weight", grid.tv_weights.iter().map(f64::to_string).collect(), |c| c.tv_weight.to_string()),
    ];
    for (axis, levels, level_of) in &axes {
        for level in levels {
            let at: Vec<&ReportRow> = best.iter().filter(|(c, _)| &level_of(c) == level).map(|(_, r)| r).collect();
            if at.is_empty() {
                continue;
            }
            let n = at.len() as f64;
            let mean = |f: fn(&ReportRow) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / n;
            let max = |f: fn(&ReportRow) -> f64| at.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max);
            w.write_record([
                axis.to_string(),
                level.clone(),
                at.len().to_string(),
                format!("{:.6}", mean(|r| r.accuracy.0)),
                format!("{:.6}", mean(|r| r.auc.0)),
                format!("{:.6}", max(|r| r.accuracy.0)),
                format!("{:.6}", max(|r| r.auc.0)),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_config_maps_axes() {
        let base = RunConfig::default();
        let cell = &base.grid.cells()[7];
        let cfg = cell_config(&base, cell);
        assert_eq!(cfg.transfer.beta, cell.ratio);
        assert_eq!(cfg.transfer.gamma, cell.tv_weight);
        assert_eq!(cfg.transfer.alpha, 1.0);
        assert_eq!(cfg.ranks, vec![24]);
        assert!(!cfg.stages.contains(&Stage::Report));
        assert!(cfg.validate().is_ok());
    }
}
