use super::{Op, Result, VggError, VggNetwork};
use crate::ndtensor::{
    conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    DenseTensor, PoolIndices,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LayerShape {
    /// Spatial positions `M_l = h_l·w_l`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

/// Requested activations keyed by layer name, each `h_l×w_l×N_l`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerActivations {
    maps: BTreeMap<String, DenseTensor>,
}

impl LayerActivations {
    pub fn get(&self, layer: &str) -> Option<&DenseTensor> {
        self.maps.get(layer)
    }

    pub fn shape(&self, layer: &str) -> Option<LayerShape> {
        self.maps.get(layer).map(|t| LayerShape {
            height: t.shape()[0],
            width: t.shape()[1],
            channels: t.shape()[2],
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.maps.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Everything the reverse pass needs: the network input, the output of every
/// node up to the deepest requested layer, and the pooling switches. Owned by
/// whoever ran the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: DenseTensor,
    outputs: Vec<DenseTensor>,
    pools: Vec<Option<PoolIndices>>,
    names: Vec<String>,
}

impl ForwardTrace {
    pub fn activation(&self, layer: &str) -> Option<&DenseTensor> {
        self.names
            .iter()
            .position(|n| n == layer)
            .and_then(|i| self.outputs.get(i))
    }

    pub fn input(&self) -> &DenseTensor {
        &self.input
    }

    fn node_input(&self, i: usize) -> &DenseTensor {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }
}

impl VggNetwork {
    /// Runs the graph on an already mean-offset `H×W×3` input, stopping after
    /// the deepest wanted layer.
    pub fn forward_trace<S: AsRef<str>>(&self, input: &DenseTensor, wanted: &[S]) -> Result<ForwardTrace> {
        match input.shape() {
            &[h, w, 3] if h > 0 && w > 0 => {}
            other => return Err(VggError::Input(other.to_vec())),
        }
        let mut deepest = None;
        for name in wanted {
            let idx = self.node_index(name.as_ref())?;
            deepest = deepest.max(Some(idx));
        }
        let nodes = self.nodes();
        let stop = deepest.map_or(0, |d| d + 1);
        let mut outputs: Vec<DenseTensor> = Vec::with_capacity(stop);
        let mut pools = Vec::with_capacity(stop);
        for node in &nodes[..stop] {
            let x = outputs.last().unwrap_or(input);
            let (y, switches) = match node.op {
                Op::Conv(i) => {
                    let layer = &self.convs()[i];
                    (conv2d_forward(x, &layer.kernels, &layer.bias)?, None)
                }
                Op::Relu => (relu_forward(x), None),
                Op::Pool => {
                    let (y, idx) = maxpool2_forward(x)?;
                    (y, Some(idx))
                }
            };
            outputs.push(y);
            pools.push(switches);
        }
        Ok(ForwardTrace {
            input: input.clone(),
            outputs,
            pools,
            names: nodes[..stop].iter().map(|n| n.name.clone()).collect(),
        })
    }

    /// Activations for exactly the wanted layers.
    pub fn forward_collect<S: AsRef<str>>(&self, input: &DenseTensor, wanted: &[S]) -> Result<LayerActivations> {
        let trace = self.forward_trace(input, wanted)?;
        Ok(collect(&trace, wanted))
    }

    /// `∂/∂input Σ_l ⟨seed_l, F^l(input)⟩`, walking the trace backwards and
    /// adding each seed as its layer is reached.
    pub fn backward_trace(&self, trace: &ForwardTrace, seeds: &BTreeMap<String, DenseTensor>) -> Result<DenseTensor> {
        let mut by_node: Vec<Option<&DenseTensor>> = vec![None; trace.outputs.len()];
        for (layer, seed) in seeds {
            let idx = self.node_index(layer)?;
            let activation = trace
                .outputs
                .get(idx)
                .ok_or_else(|| VggError::SeedNotComputed(layer.clone()))?;
            if seed.shape() != activation.shape() {
                return Err(VggError::SeedShape {
                    layer: layer.clone(),
                    seed: seed.shape().to_vec(),
                    activation: activation.shape().to_vec(),
                });
            }
            by_node[idx] = Some(seed);
        }
        let Some(start) = by_node.iter().rposition(Option::is_some) else {
            return Ok(DenseTensor::zeros(trace.input.shape()));
        };
        let nodes = self.nodes();
        let mut grad: Option<DenseTensor> = None;
        for i in (0..=start).rev() {
            if let Some(seed) = by_node[i] {
                grad = Some(match grad {
                    Some(mut g) => {
                        g.axpy(1.0, seed)?;
                        g
                    }
                    None => seed.clone(),
                });
            }
            let Some(g) = grad.take() else { continue };
            let x = trace.node_input(i);
            grad = Some(match nodes[i].op {
                Op::Conv(c) => conv2d_backward(&g, x, &self.convs()[c].kernels)?,
                Op::Relu => relu_backward(&g, x)?,
                Op::Pool => maxpool2_backward(&g, trace.pools[i].as_ref().expect("pool node keeps switches"))?,
            });
        }
        Ok(grad.unwrap_or_else(|| DenseTensor::zeros(trace.input.shape())))
    }

    /// Forward then backward in one call.
    pub fn backward_to_input(&self, input: &DenseTensor, seeds: &BTreeMap<String, DenseTensor>) -> Result<DenseTensor> {
        let wanted: Vec<&str> = seeds.keys().map(String::as_str).collect();
        let trace = self.forward_trace(input, &wanted)?;
        self.backward_trace(&trace, seeds)
    }
}

pub(crate) fn collect<S: AsRef<str>>(trace: &ForwardTrace, wanted: &[S]) -> LayerActivations {
    let maps = wanted
        .iter()
        .map(|name| {
            let name = name.as_ref();
            let t = trace.activation(name).expect("trace covers every wanted layer");
            (name.to_string(), t.clone())
        })
        .collect();
    LayerActivations { maps }
}
