//! The fixed VGG19 feature graph (blocks 1 to 5, no classifier head).
//!
//! Weights are frozen; the graph runs forward to collect named activations
//! and backward to the input image from gradient seeds placed at any number
//! of layers. Layer names follow `convB_N`, `reluB_N` and `poolB`.

mod format;
mod graph;

pub use format::{load_weights, MAGIC, VERSION};
pub use graph::{ForwardTrace, LayerActivations, LayerShape};

use crate::imaging::ImagePlane;
use crate::ndtensor::{DenseTensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Convolutions per block.
pub const BLOCK_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
/// Output channels per block in the published network.
pub const CANONICAL_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
/// Channel widths of the reduced test network, `⌈canonical / 8⌉`.
pub const TINY_WIDTHS: [usize; 5] = [8, 16, 32, 64, 64];
/// Per-channel ImageNet means in `[0, 1]` units.
/// Input scale folded into `conv1_1` of random networks.
pub const INPUT_GAIN: f64 = 255.0;

pub const IMAGENET_MEANS: [f64; 3] = [0.485, 0.456, 0.406];

#[derive(Debug, Error)]
pub enum VggError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a VGGW1 file (bad magic bytes)")]
    Magic,
    #[error("unsupported VGGW version {0}, expected 1")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{trailing} unexpected bytes after the checksum")]
    Trailing { trailing: usize },
    #[error("layer {layer}: {detail}")]
    Layer { layer: String, detail: String },
    #[error("expected {expected} weight entries, found {actual}")]
    LayerCount { expected: usize, actual: usize },
    #[error("unknown layer name {0:?}")]
    UnknownLayer(String),
    #[error("gradient seed for {0} but that layer was not computed forward")]
    SeedNotComputed(String),
    #[error("gradient seed for {layer} is {seed:?}, activation is {activation:?}")]
    SeedShape {
        layer: String,
        seed: Vec<usize>,
        activation: Vec<usize>,
    },
    #[error("network input must be H×W×3 with H, W ≥ 1, got {0:?}")]
    Input(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, VggError>;

fn layer_err(layer: &str, detail: impl Into<String>) -> VggError {
    VggError::Layer {
        layer: layer.to_string(),
        detail: detail.into(),
    }
}

/// One frozen 3×3 convolution: kernels `3×3×Cin×Cout`, bias `Cout`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub kernels: DenseTensor,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Conv(usize),
    Relu,
    Pool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub name: String,
    pub op: Op,
}

/// Names of the 16 convolutions in graph order.
pub fn conv_names() -> Vec<String> {
    let mut names = Vec::with_capacity(16);
    for (b, &n) in BLOCK_CONVS.iter().enumerate() {
        for i in 1..=n {
            names.push(format!("conv{}_{}", b + 1, i));
        }
    }
    names
}

fn build_graph() -> Vec<Node> {
    let mut nodes = Vec::new();
    let mut conv = 0;
    for (b, &n) in BLOCK_CONVS.iter().enumerate() {
        for i in 1..=n {
            nodes.push(Node {
                name: format!("conv{}_{}", b + 1, i),
                op: Op::Conv(conv),
            });
            nodes.push(Node {
                name: format!("relu{}_{}", b + 1, i),
                op: Op::Relu,
            });
            conv += 1;
        }
        nodes.push(Node {
            name: format!("pool{}", b + 1),
            op: Op::Pool,
        });
    }
    nodes
}

/// Activation extent of `layer` for an `h×w` input to a network with the
/// given block widths, from pooling arithmetic alone.
pub fn layer_shape(widths: [usize; 5], layer: &str, h: usize, w: usize) -> Result<LayerShape> {
    let nodes = build_graph();
    let idx = nodes
        .iter()
        .position(|n| n.name == layer)
        .ok_or_else(|| VggError::UnknownLayer(layer.to_string()))?;
    let (mut h, mut w, mut c) = (h, w, 3);
    let mut block = 0;
    for node in &nodes[..=idx] {
        match node.op {
            Op::Conv(_) => c = widths[block],
            Op::Relu => {}
            Op::Pool => {
                h /= 2;
                w /= 2;
                block += 1;
            }
        }
    }
    Ok(LayerShape {
        height: h,
        width: w,
        channels: c,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VggNetwork {
    convs: Vec<ConvLayer>,
    means: [f64; 3],
    nodes: Vec<Node>,
}

impl VggNetwork {
    /// Checks the VGG19 topology: 16 convolutions named in graph order, 3×3
    /// kernels, an input chain starting at 3 channels, and one width per
    /// block. Widths themselves are free so reduced test networks load too.
    pub fn new(convs: Vec<ConvLayer>, means: [f64; 3]) -> Result<Self> {
        let names = conv_names();
        if convs.len() != names.len() {
            return Err(VggError::LayerCount {
                expected: 2 * names.len(),
                actual: 2 * convs.len(),
            });
        }
        let mut cin = 3;
        let mut idx = 0;
        for (b, &n) in BLOCK_CONVS.iter().enumerate() {
            let width = convs[idx].kernels.shape().get(3).copied().unwrap_or(0);
            for _ in 0..n {
                let layer = &convs[idx];
                let name = &names[idx];
                if &layer.name != name {
                    return Err(layer_err(&layer.name, format!("expected {name} at this position")));
                }
                let expected = [3, 3, cin, width];
                if layer.kernels.shape() != expected {
                    return Err(layer_err(
                        name,
                        format!(
                            "kernel shape {:?}, expected {:?} (block {} width {width})",
                            layer.kernels.shape(),
                            expected,
                            b + 1
                        ),
                    ));
                }
                if layer.bias.len() != width {
                    return Err(layer_err(
                        name,
                        format!("bias has {} entries, expected {width}", layer.bias.len()),
                    ));
                }
                cin = width;
                idx += 1;
            }
        }
        Ok(Self {
            convs,
            means,
            nodes: build_graph(),
        })
    }

    /// Seeded He-normal weights rounded through `f32`, so a saved copy
    /// reloads bit-identically. The first convolution carries an extra
    /// [`INPUT_GAIN`] so activations have the magnitude of pretrained weights
    /// that expect 0–255 pixels.
    pub fn random(widths: [usize; 5], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = conv_names();
        let mut convs = Vec::with_capacity(16);
        let mut cin = 3;
        let mut idx = 0;
        for (b, &n) in BLOCK_CONVS.iter().enumerate() {
            let cout = widths[b];
            for _ in 0..n {
                let gain = if idx == 0 { INPUT_GAIN } else { 1.0 };
                let std = gain * (2.0 / (9 * cin) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive deviation");
                let kernels = DenseTensor::from_fn(&[3, 3, cin, cout], |_| {
                    normal.sample(&mut rng) as f32 as f64
                });
                let bias = (0..cout).map(|_| rng.random_range(-0.05f32..0.05) as f64).collect();
                convs.push(ConvLayer {
                    name: names[idx].clone(),
                    kernels,
                    bias,
                });
                cin = cout;
                idx += 1;
            }
        }
        let means = IMAGENET_MEANS.map(|m| m as f32 as f64);
        Self::new(convs, means).expect("generated topology is valid")
    }

    /// VGG19 topology at 1/8 width with seeded random weights.
    pub fn tiny(seed: u64) -> Self {
        Self::random(TINY_WIDTHS, seed)
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn means(&self) -> [f64; 3] {
        self.means
    }

    pub fn widths(&self) -> [usize; 5] {
        let mut out = [0; 5];
        let mut idx = 0;
        for (b, &n) in BLOCK_CONVS.iter().enumerate() {
            out[b] = self.convs[idx].out_channels();
            idx += n;
        }
        out
    }

    /// Rejects networks whose widths differ from the published VGG19.
    pub fn validate_canonical(&self) -> Result<()> {
        let mut idx = 0;
        for (b, &n) in BLOCK_CONVS.iter().enumerate() {
            let got = self.convs[idx].out_channels();
            if got != CANONICAL_WIDTHS[b] {
                return Err(layer_err(
                    &self.convs[idx].name,
                    format!("width {got}, canonical VGG19 has {}", CANONICAL_WIDTHS[b]),
                ));
            }
            idx += n;
        }
        Ok(())
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.name.as_str())
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn node_index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| VggError::UnknownLayer(name.to_string()))
    }

    /// Activation extent of `layer` for an `h×w` input.
    pub fn layer_shape(&self, layer: &str, h: usize, w: usize) -> Result<LayerShape> {
        layer_shape(self.widths(), layer, h, w)
    }

    /// Subtracts the stored channel means from an `H×W×3` pixel tensor.
    pub fn preprocess(&self, pixels: &DenseTensor) -> Result<DenseTensor> {
        match pixels.shape() {
            &[h, w, 3] if h > 0 && w > 0 => {}
            other => return Err(VggError::Input(other.to_vec())),
        }
        let mut out = pixels.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v -= self.means[i % 3];
        }
        Ok(out)
    }

    pub fn preprocess_image(&self, img: &ImagePlane) -> Result<DenseTensor> {
        self.preprocess(&img.to_tensor())
    }
}
