//! 2×2 stride-2 max pooling. Odd trailing rows/columns are dropped.

use super::{mismatch, DenseTensor, Result};

/// Flat input offsets of the winning element for every pooled output, plus
/// the input shape needed to scatter gradients back.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

pub fn maxpool2_forward(x: &DenseTensor) -> Result<(DenseTensor, PoolIndices)> {
    let (h, w, c) = x.hwc("maxpool2_forward")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(mismatch("maxpool2_forward", format!("{h}×{w} is too small to pool")));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                // row-major window scan; strict `>` keeps the first maximum
                let mut best = (2 * oy * w + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        DenseTensor::new(vec![oh, ow, c], out)?,
        PoolIndices {
            input_shape: vec![h, w, c],
            argmax,
        },
    ))
}

pub fn maxpool2_backward(grad_out: &DenseTensor, indices: &PoolIndices) -> Result<DenseTensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(mismatch(
            "maxpool2_backward",
            format!(
                "grad_out has {} elements, pooling produced {}",
                grad_out.len(),
                indices.argmax.len()
            ),
        ));
    }
    let mut grad_in = DenseTensor::zeros(&indices.input_shape);
    let dst = grad_in.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(&indices.argmax) {
        dst[i] += g;
    }
    Ok(grad_in)
}
