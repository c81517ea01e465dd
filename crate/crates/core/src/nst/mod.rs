//! Mask-guided style transfer: the style statistics of a lesion are matched
//! on a homogeneous content canvas by Adam descent on raw pixels.

mod loss;

pub use loss::{content_loss, gram, mask_features, style_layer_loss, tv_loss};

use crate::imaging::{ImagePlane, ImagingError};
use crate::ndtensor::{adam_step, AdamState, DenseTensor, TensorError};
use crate::segmentation::{MaskPyramid, SegmentationError};
use crate::vggnet::{VggError, VggNetwork};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const STYLE_LAYERS: [&str; 5] = ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"];
pub const CONTENT_LAYERS: [&str; 5] = ["relu1_2", "relu2_2", "relu3_2", "relu4_2", "relu5_2"];

#[derive(Debug, Error)]
pub enum NstError {
    #[error("invalid transfer config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Vgg(#[from] VggError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

pub type Result<T> = std::result::Result<T, NstError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub style_layers: Vec<String>,
    pub content_layer: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Per-style-layer weights; `None` means `1/|style_layers|` each.
    pub layer_weights: Option<Vec<f64>>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            style_layers: STYLE_LAYERS.iter().map(|s| s.to_string()).collect(),
            content_layer: "relu4_2".into(),
            alpha: 1.0,
            beta: 1000.0,
            gamma: 1.0,
            layer_weights: None,
            max_iters: 500,
            rel_tol: 5e-4,
            learning_rate: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NstError::Config(msg));
        if self.style_layers.is_empty() {
            return bad("style_layers is empty".into());
        }
        for (i, l) in self.style_layers.iter().enumerate() {
            if !STYLE_LAYERS.contains(&l.as_str()) {
                return bad(format!("{l:?} is not one of {STYLE_LAYERS:?}"));
            }
            if self.style_layers[..i].contains(l) {
                return bad(format!("{l:?} listed twice"));
            }
        }
        if !CONTENT_LAYERS.contains(&self.content_layer.as_str()) {
            return bad(format!("content layer {:?} is not one of {CONTENT_LAYERS:?}", self.content_layer));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if let Some(w) = &self.layer_weights {
            if w.len() != self.style_layers.len() {
                return bad(format!("{} layer weights for {} style layers", w.len(), self.style_layers.len()));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return bad("layer weights must be finite".into());
            }
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be nonnegative, got {}", self.rel_tol));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate and epsilon must be positive".into());
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.layer_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.style_layers.len() as f64; self.style_layers.len()])
    }
}

/// Masked style Gram matrices `Ã^l` and the content activation `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTargets {
    pub grams: BTreeMap<String, DenseTensor>,
    pub content: DenseTensor,
}

fn level_values<'a>(pyramid: &'a MaskPyramid, layer: &str, act: &DenseTensor) -> Result<&'a [f64]> {
    let level = pyramid
        .get(layer)
        .ok_or_else(|| NstError::Shape(format!("mask pyramid has no level for {layer}")))?;
    if [level.height, level.width] != act.shape()[..2] {
        return Err(NstError::Shape(format!(
            "mask level {layer} is {}×{}, activation is {}×{}",
            level.height,
            level.width,
            act.shape()[0],
            act.shape()[1]
        )));
    }
    Ok(&level.values)
}

fn pixels(img: &ImagePlane) -> Result<DenseTensor> {
    if img.channels() != 3 {
        return Err(NstError::Shape(format!("expected an RGB image, got {} channels", img.channels())));
    }
    Ok(img.to_tensor())
}

impl StyleTargets {
    pub fn build(
        net: &VggNetwork,
        style: &ImagePlane,
        content: &ImagePlane,
        lesion: &MaskPyramid,
        config: &TransferConfig,
    ) -> Result<Self> {
        config.validate()?;
        let style_in = net.preprocess(&pixels(style)?)?;
        let acts = net.forward_collect(&style_in, &config.style_layers)?;
        let mut grams = BTreeMap::new();
        for layer in &config.style_layers {
            let f = acts.get(layer).expect("requested layer");
            let t = level_values(lesion, layer, f)?;
            grams.insert(layer.clone(), gram(&mask_features(f, t)?));
        }
        let content_in = net.preprocess(&pixels(content)?)?;
        let p = net.forward_collect(&content_in, &[&config.content_layer])?;
        Ok(Self {
            grams,
            content: p.get(&config.content_layer).expect("requested layer").clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

/// The combined objective over the generated image, with the generated
/// image's own style features weighted by the uniform canvas pyramid.
pub struct Objective<'a> {
    net: &'a VggNetwork,
    config: &'a TransferConfig,
    targets: &'a StyleTargets,
    canvas: MaskPyramid,
    weights: Vec<f64>,
    wanted: Vec<String>,
}

impl<'a> Objective<'a> {
    pub fn new(
        net: &'a VggNetwork,
        config: &'a TransferConfig,
        targets: &'a StyleTargets,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        config.validate()?;
        let canvas = MaskPyramid::full(height, width, &config.style_layers)?;
        let mut wanted = config.style_layers.clone();
        wanted.push(config.content_layer.clone());
        Ok(Self {
            net,
            config,
            targets,
            canvas,
            weights: config.weights(),
            wanted,
        })
    }

    /// Loss terms and `∂L_total/∂x` for pixel tensor `x`.
    pub fn evaluate(&self, x: &DenseTensor) -> Result<(LossTerms, DenseTensor)> {
        let cfg = self.config;
        let trace = self.net.forward_trace(&self.net.preprocess(x)?, &self.wanted)?;
        let mut seeds: BTreeMap<String, DenseTensor> = BTreeMap::new();
        let mut add_seed = |layer: &str, s: DenseTensor| -> Result<()> {
            match seeds.get_mut(layer) {
                Some(acc) => acc.axpy(1.0, &s)?,
                None => {
                    seeds.insert(layer.to_string(), s);
                }
            }
            Ok(())
        };

        let f = trace.activation(&cfg.content_layer).expect("traced");
        let (content, seed) = content_loss(f, &self.targets.content)
            .map_err(|_| NstError::Shape("content target does not match the generated image".into()))?;
        if cfg.alpha != 0.0 {
            add_seed(&cfg.content_layer, seed.scale(cfg.alpha))?;
        }

        let mut style = 0.0;
        for (layer, &w) in cfg.style_layers.iter().zip(&self.weights) {
            let f = trace.activation(layer).expect("traced");
            let t = level_values(&self.canvas, layer, f)?;
            let target = self
                .targets
                .grams
                .get(layer)
                .ok_or_else(|| NstError::Shape(format!("no style target for {layer}")))?;
            let (e, seed) = style_layer_loss(&mask_features(f, t)?, target)?;
            style += w * e;
            if cfg.beta != 0.0 && w != 0.0 {
                // chain through F̃ = F ⊙ t
                add_seed(layer, mask_features(&seed, t)?.scale(cfg.beta * w))?;
            }
        }

        let (tv, tv_grad) = tv_loss(x)?;
        let mut grad = self.net.backward_trace(&trace, &seeds)?;
        if cfg.gamma != 0.0 {
            grad.axpy(cfg.gamma, &tv_grad)?;
        }
        let total = cfg.alpha * content + cfg.beta * style + cfg.gamma * tv;
        Ok((LossTerms { content, style, tv, total }, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIters,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    /// Generated image, clamped to `[0, 1]`.
    pub image: ImagePlane,
    pub loss_trace: Vec<f64>,
    pub termination: Termination,
    pub final_terms: LossTerms,
}

impl TransferResult {
    pub fn iterations(&self) -> usize {
        self.loss_trace.len()
    }
}

/// `|ε_t − ε_{t−1}| / ε_t < rel_tol`, or `ε_t == 0`.
pub fn has_converged(prev: f64, cur: f64, rel_tol: f64) -> bool {
    cur == 0.0 || (cur - prev).abs() / cur < rel_tol
}

/// Starts from the content image and runs Adam until `max_iters` losses have
/// been recorded or the relative change drops below `rel_tol`. The returned
/// image is the one whose loss was recorded last.
pub fn run_transfer(
    style: &ImagePlane,
    content: &ImagePlane,
    lesion: &MaskPyramid,
    net: &VggNetwork,
    config: &TransferConfig,
) -> Result<TransferResult> {
    if style.dims() != content.dims() {
        return Err(NstError::Shape(format!(
            "style image is {:?}, content image is {:?}",
            style.dims(),
            content.dims()
        )));
    }
    let targets = StyleTargets::build(net, style, content, lesion, config)?;
    let objective = Objective::new(net, config, &targets, content.height(), content.width())?;
    let mut x = pixels(content)?;
    let mut adam = AdamState::new(x.shape(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut termination = Termination::MaxIters;
    let mut final_terms = LossTerms::default();
    for t in 0..config.max_iters {
        let (terms, grad) = objective.evaluate(&x)?;
        if !terms.total.is_finite() || !grad.all_finite() {
            return Err(NstError::NonFinite { iteration: t });
        }
        trace.push(terms.total);
        final_terms = terms;
        let converged = match trace.len() {
            1 => terms.total == 0.0,
            n => has_converged(trace[n - 2], terms.total, config.rel_tol),
        };
        if converged {
            termination = Termination::Converged;
            break;
        }
        if t + 1 < config.max_iters {
            x = adam_step(&x, &grad, &mut adam)?;
        }
    }
    Ok(TransferResult {
        image: ImagePlane::from_tensor(&x)?,
        loss_trace: trace,
        termination,
        final_terms,
    })
}

/// Per-run JSON record written next to the generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSidecar {
    pub config: TransferConfig,
    pub loss_trace: Vec<f64>,
    pub termination: Termination,
    pub iterations: usize,
    pub final_terms: LossTerms,
    pub wall_time_secs: f64,
}

impl TransferSidecar {
    pub fn new(config: &TransferConfig, result: &TransferResult, wall_time_secs: f64) -> Self {
        Self {
            config: config.clone(),
            loss_trace: result.loss_trace.clone(),
            termination: result.termination,
            iterations: result.iterations(),
            final_terms: result.final_terms,
            wall_time_secs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        std::fs::write(path, text).map_err(|source| NstError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{build_mask_pyramid, BinaryMask, PoolingMode};
    use crate::synth::{synth_lesion, SynthParams};
    use crate::testutil::{finite_diff_check_smooth, rng};
    use rand::Rng;

    fn noise_image(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut r = rng(seed);
        ImagePlane::from_fn(h, w, 3, |_, _, _| r.random_range(0.1..0.9)).unwrap()
    }

    fn disk_pyramid(n: usize, layers: &[String]) -> MaskPyramid {
        let c = n as f64 / 2.0;
        let mask = BinaryMask::from_fn(n, n, |y, x| {
            (y as f64 + 0.5 - c).powi(2) + (x as f64 + 0.5 - c).powi(2) <= (0.35 * n as f64).powi(2)
        });
        build_mask_pyramid(&mask, layers, PoolingMode::Max).unwrap()
    }

    fn small_config() -> TransferConfig {
        TransferConfig {
            style_layers: vec!["relu1_1".into(), "relu2_1".into(), "relu3_1".into()],
            content_layer: "relu2_2".into(),
            beta: 1e4,
            max_iters: 30,
            ..TransferConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TransferConfig::default();
        c.validate().unwrap();
        assert_eq!(c.weights(), vec![0.2; 5]);
        assert_eq!((c.max_iters, c.rel_tol, c.beta), (500, 5e-4, 1000.0));
        for broken in [
            TransferConfig { style_layers: vec![], ..c.clone() },
            TransferConfig { style_layers: vec!["relu1_2".into()], ..c.clone() },
            TransferConfig { style_layers: vec!["relu1_1".into(), "relu1_1".into()], ..c.clone() },
            TransferConfig { content_layer: "relu4_1".into(), ..c.clone() },
            TransferConfig { beta: -1.0, ..c.clone() },
            TransferConfig { layer_weights: Some(vec![1.0]), ..c.clone() },
            TransferConfig { max_iters: 0, ..c.clone() },
        ] {
            assert!(matches!(broken.validate(), Err(NstError::Config(_))), "{broken:?}");
        }
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TransferConfig>(&json).unwrap(), c);
        let partial: TransferConfig = serde_json::from_str(r#"{"beta": 10}"#).unwrap();
        assert_eq!(partial.beta, 10.0);
        assert_eq!(partial.content_layer, "relu4_2");
    }

    #[test]
    fn style_targets_symmetric_psd() {
        let net = VggNetwork::tiny(3);
        let cfg = small_config();
        let style = noise_image(16, 16, 1);
        let targets =
            StyleTargets::build(&net, &style, &noise_image(16, 16, 2), &disk_pyramid(16, &cfg.style_layers), &cfg)
                .unwrap();
        assert_eq!(targets.grams.len(), 3);
        let mut r = rng(5);
        for g in targets.grams.values() {
            let n = g.shape()[0];
            for i in 0..n {
                for j in 0..n {
                    assert!((g.data()[i * n + j] - g.data()[j * n + i]).abs() <= 1e-10);
                }
            }
            for _ in 0..10 {
                let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
                let q: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| v[i] * g.data()[i * n + j] * v[j]).sum();
                assert!(q >= -1e-12);
            }
        }
        assert_eq!(targets.content.shape(), &[8, 8, 16]);
    }

    #[test]
    fn missing_pyramid_level_is_rejected() {
        let net = VggNetwork::tiny(3);
        let cfg = small_config();
        let pyr = disk_pyramid(16, &["relu1_1".to_string()]);
        let img = noise_image(16, 16, 1);
        assert!(matches!(StyleTargets::build(&net, &img, &img, &pyr, &cfg), Err(NstError::Shape(_))));
        let pyr = disk_pyramid(32, &cfg.style_layers);
        assert!(matches!(StyleTargets::build(&net, &img, &img, &pyr, &cfg), Err(NstError::Shape(_))));
    }

    #[test]
    fn degenerate_weights_reduce_to_tv() {
        let net = VggNetwork::tiny(3);
        let cfg = TransferConfig { alpha: 0.0, beta: 0.0, gamma: 1.0, ..small_config() };
        let img = noise_image(16, 16, 4);
        let targets = StyleTargets::build(&net, &img, &noise_image(16, 16, 5), &disk_pyramid(16, &cfg.style_layers), &cfg).unwrap();
        let obj = Objective::new(&net, &cfg, &targets, 16, 16).unwrap();
        let x = noise_image(16, 16, 6).to_tensor();
        let (terms, grad) = obj.evaluate(&x).unwrap();
        let (tv, tv_grad) = tv_loss(&x).unwrap();
        assert_eq!(terms.total, tv);
        assert_eq!(grad, tv_grad);
    }

    #[test]
    fn self_style_is_zero() {
        let net = VggNetwork::tiny(3);
        let cfg = TransferConfig { alpha: 0.0, ..small_config() };
        let img = noise_image(16, 16, 7);
        let full = MaskPyramid::full(16, 16, &cfg.style_layers).unwrap();
        let targets = StyleTargets::build(&net, &img, &img, &full, &cfg).unwrap();
        let obj = Objective::new(&net, &cfg, &targets, 16, 16).unwrap();
        let (terms, _) = obj.evaluate(&img.to_tensor()).unwrap();
        assert_eq!(terms.style, 0.0);
        assert_eq!(terms.content, 0.0);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let net = VggNetwork::tiny(8);
        let cfg = TransferConfig { alpha: 0.5, beta: 1e4, gamma: 0.1, ..small_config() };
        for seed in 0..20 {
            let targets = StyleTargets::build(
                &net,
                &noise_image(16, 16, 10 + seed),
                &noise_image(16, 16, 20 + seed),
                &disk_pyramid(16, &cfg.style_layers),
                &cfg,
            )
            .unwrap();
            let obj = Objective::new(&net, &cfg, &targets, 16, 16).unwrap();
            let x = noise_image(16, 16, 30 + seed).to_tensor();
            let (_, g) = obj.evaluate(&x).unwrap();
            let (err, skipped) = finite_diff_check_smooth(&x, &g, |p| obj.evaluate(p).unwrap().0.total);
            assert!(err <= 1e-4 && skipped < 0.02, "seed {seed}: {err} ({skipped} skipped)");
        }
    }

    #[test]
    fn transfer_descends_and_is_deterministic() {
        let net = VggNetwork::tiny(2);
        let cfg = small_config();
        let lesion = synth_lesion(11, 1, &SynthParams { size: 32, ..SynthParams::default() }).unwrap();
        let style = lesion.image;
        let content = ImagePlane::filled(32, 32, 3, 0.6).unwrap();
        let pyr = build_mask_pyramid(&lesion.mask, &cfg.style_layers, PoolingMode::Max).unwrap();
        let a = run_transfer(&style, &content, &pyr, &net, &cfg).unwrap();
        assert!(a.loss_trace.len() <= cfg.max_iters);
        assert!(a.loss_trace.iter().all(|&e| e >= 0.0));
        assert!(a.loss_trace.last().unwrap() < &a.loss_trace[0], "{:?}", a.loss_trace);
        let b = run_transfer(&style, &content, &pyr, &net, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn converged_runs_satisfy_the_stopping_rule() {
        let net = VggNetwork::tiny(2);
        let cfg = TransferConfig { rel_tol: 5e-2, max_iters: 200, ..small_config() };
        let style = noise_image(16, 16, 12);
        let content = ImagePlane::filled(16, 16, 3, 0.5).unwrap();
        let r = run_transfer(&style, &content, &disk_pyramid(16, &cfg.style_layers), &net, &cfg).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        let n = r.loss_trace.len();
        assert!(n < 200);
        assert!((r.loss_trace[n - 1] - r.loss_trace[n - 2]).abs() / r.loss_trace[n - 1] < cfg.rel_tol);
        for w in r.loss_trace[..n - 1].windows(2) {
            assert!(!has_converged(w[0], w[1], cfg.rel_tol));
        }
    }

    #[test]
    fn identical_style_and_content_is_a_fixed_point() {
        let net = VggNetwork::tiny(2);
        let cfg = TransferConfig { gamma: 0.0, max_iters: 10, ..small_config() };
        let img = noise_image(16, 16, 13);
        let full = MaskPyramid::full(16, 16, &cfg.style_layers).unwrap();
        let r = run_transfer(&img, &img, &full, &net, &cfg).unwrap();
        assert_eq!(r.loss_trace, vec![0.0]);
        assert_eq!(r.termination, Termination::Converged);
        assert_eq!(r.final_terms.content, 0.0);
        assert_eq!(r.image, img);
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        let net = VggNetwork::tiny(2);
        let cfg = TransferConfig { beta: f64::MAX, ..small_config() };
        let style = noise_image(16, 16, 14);
        let content = ImagePlane::filled(16, 16, 3, 0.5).unwrap();
        let err = run_transfer(&style, &content, &disk_pyramid(16, &cfg.style_layers), &net, &cfg).unwrap_err();
        assert!(matches!(err, NstError::NonFinite { iteration: 0 }), "{err}");
    }

    #[test]
    fn sidecar_round_trip() {
        let net = VggNetwork::tiny(2);
        let cfg = TransferConfig { max_iters: 3, ..small_config() };
        let style = noise_image(16, 16, 15);
        let content = ImagePlane::filled(16, 16, 3, 0.5).unwrap();
        let r = run_transfer(&style, &content, &disk_pyramid(16, &cfg.style_layers), &net, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let side = TransferSidecar::new(&cfg, &r, 1.5);
        side.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"termination\": \"max-iters\""));
        assert_eq!(serde_json::from_str::<TransferSidecar>(&text).unwrap(), side);
    }
}
