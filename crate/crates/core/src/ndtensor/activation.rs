use super::{DenseTensor, Result};

pub fn relu_forward(x: &DenseTensor) -> DenseTensor {
    x.map(|v| v.max(0.0))
}

/// Passes the gradient where `x > 0`. The subgradient at exactly zero is 0.
pub fn relu_backward(grad_out: &DenseTensor, x: &DenseTensor) -> Result<DenseTensor> {
    grad_out.zip_with(x, "relu_backward", |g, v| if v > 0.0 { g } else { 0.0 })
}
