use super::{PipelineError, Result, Stage};
use crate::classify::{table2_grid, CvConfig, ModelSpec};
use crate::nst::{TransferConfig, CONTENT_LAYERS, STYLE_LAYERS};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Square output side.
    pub size: usize,
    /// Median window; 1 disables the filter.
    pub median_k: usize,
    pub hair_removal: bool,
    pub hair_threshold: f64,
    pub sog_p: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { size: 224, median_k: 5, hair_removal: true, hair_threshold: 0.07, sog_p: 6.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomWidths {
    Tiny,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// VGGW1 file; when absent a seeded random network is used.
    pub weights: Option<PathBuf>,
    pub random_widths: RandomWidths,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { weights: None, random_widths: RandomWidths::Tiny, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentMode {
    /// One content image per training fold.
    PerFold,
    /// One content image over every manifest image.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpConfig {
    pub max_sweeps: usize,
    pub fit_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Ids listed per cluster in the cluster report.
    pub top_k: usize,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self { max_sweeps: 100, fit_tol: 1e-6, restarts: 3, seed: 0, top_k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// CP loadings of the style-transferred images.
    Cp,
    /// CP loadings of the preprocessed originals.
    RawCp,
    Abcd,
    /// ABCD next to the style-transferred CP loadings.
    Both,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Cp => "cp",
            FeatureSet::RawCp => "raw_cp",
            FeatureSet::Abcd => "abcd",
            FeatureSet::Both => "both",
        }
    }

    pub fn uses_cp(self) -> bool {
        !matches!(self, FeatureSet::Abcd)
    }
}

/// Axes of the style-transfer grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub style_layer_sets: Vec<Vec<String>>,
    pub content_layers: Vec<String>,
    /// β/α with α = 1.
    pub ratios: Vec<f64>,
    pub tv_weights: Vec<f64>,
    /// CP rank used in every cell; `None` takes the first of `ranks`.
    pub rank: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            style_layer_sets: (1..=STYLE_LAYERS.len())
                .map(|k| STYLE_LAYERS[..k].iter().map(|s| s.to_string()).collect())
                .collect(),
            content_layers: CONTENT_LAYERS.iter().map(|s| s.to_string()).collect(),
            ratios: vec![1.0, 10.0, 100.0, 1000.0, 10000.0],
            tv_weights: vec![1.0, 10.0, 100.0],
            rank: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub index: usize,
    pub style_layers: Vec<String>,
    pub content_layer: String,
    pub ratio: f64,
    pub tv_weight: f64,
}

impl GridConfig {
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for s in &self.style_layer_sets {
            for c in &self.content_layers {
                for &r in &self.ratios {
                    for &t in &self.tv_weights {
                        out.push(GridCell {
                            index: out.len(),
                            style_layers: s.clone(),
                            content_layer: c.clone(),
                            ratio: r,
                            tv_weight: t,
                        });
                    }
                }
            }
        }
        out
    }

    /// Every axis value must come from the default grid.
    pub fn check_table_values(&self) -> Result<()> {
        let d = GridConfig::default();
        let bad = |axis: &str, v: String| Err(PipelineError::Config(format!("{axis} value {v} is outside the standard grid (pass --allow-custom)")));
        for s in &self.style_layer_sets {
            if !d.style_layer_sets.contains(s) {
                return bad("style_layer_sets", format!("{s:?}"));
            }
        }
        for c in &self.content_layers {
            if !d.content_layers.contains(c) {
                return bad("content_layers", c.clone());
            }
        }
        for r in &self.ratios {
            if !d.ratios.contains(r) {
                return bad("ratios", r.to_string());
            }
        }
        for t in &self.tv_weights {
            if !d.tv_weights.contains(t) {
                return bad("tv_weights", t.to_string());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    pub network: NetworkConfig,
    pub transfer: TransferConfig,
    pub content_mode: ContentMode,
    /// CP ranks; each yields its own feature sets.
    pub ranks: Vec<usize>,
    pub cp: CpConfig,
    pub feature_sets: Vec<FeatureSet>,
    pub classifiers: Vec<ModelSpec>,
    pub cv: CvConfig,
    pub grid: GridConfig,
    /// Color table JSON for ABCD features; bundled defaults when absent.
    pub color_table: Option<PathBuf>,
    pub cache_dir: PathBuf,
    /// Stages run by `run`; the others must already be cached.
    pub stages: Vec<Stage>,
    pub allow_custom: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            network: NetworkConfig::default(),
            transfer: TransferConfig::default(),
            content_mode: ContentMode::PerFold,
            ranks: vec![24, 48, 72, 96],
            cp: CpConfig::default(),
            feature_sets: vec![FeatureSet::Cp, FeatureSet::Abcd, FeatureSet::Both],
            classifiers: table2_grid(),
            cv: CvConfig::default(),
            grid: GridConfig::default(),
            color_table: None,
            cache_dir: PathBuf::from(".lesionforge-cache"),
            stages: Stage::ALL.to_vec(),
            allow_custom: false,
        }
    }
}

impl RunConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    /// Small images, the tiny network, short transfers, one rank and one CV
    /// repeat.
    pub fn apply_test_mode(&mut self) {
        self.preprocess.size = 64;
        self.preprocess.median_k = 3;
        self.network.weights = None;
        self.network.random_widths = RandomWidths::Tiny;
        self.transfer.max_iters = self.transfer.max_iters.min(60);
        self.transfer.beta = 1e4;
        self.ranks = vec![8];
        self.cv.repeats = 1;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.transfer.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let p = &self.preprocess;
        if p.size < 16 {
            return bad(format!("preprocess.size {} is below 16", p.size));
        }
        if p.median_k == 0 || p.median_k % 2 == 0 {
            return bad(format!("preprocess.median_k {} must be odd", p.median_k));
        }
        if !(p.sog_p >= 1.0) || !(p.hair_threshold > 0.0) {
            return bad("preprocess.sog_p must be ≥ 1 and hair_threshold positive".into());
        }
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return bad("ranks must be a nonempty list of positive integers".into());
        }
        if self.feature_sets.is_empty() || self.classifiers.is_empty() {
            return bad("feature_sets and classifiers must be nonempty".into());
        }
        if self.cv.folds < 2 || self.cv.repeats == 0 {
            return bad(format!("cv needs at least 2 folds and 1 repeat, got {:?}", self.cv));
        }
        if self.cp.restarts == 0 || self.cp.max_sweeps == 0 {
            return bad("cp.restarts and cp.max_sweeps must be positive".into());
        }
        if let Some(r) = self.grid.rank {
            if r == 0 {
                return bad("grid.rank must be positive".into());
            }
        }
        if self.grid.cells().is_empty() {
            return bad("grid has an empty axis".into());
        }
        if !self.allow_custom {
            self.grid.check_table_values()?;
            let d = GridConfig::default();
            if !d.style_layer_sets.contains(&self.transfer.style_layers) || !d.content_layers.contains(&self.transfer.content_layer) {
                return bad("transfer layers are outside the standard grid (pass --allow-custom)".into());
            }
        }
        Ok(())
    }
}
