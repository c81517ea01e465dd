use super::{mismatch, DenseTensor, Result};

/// Bias-corrected Adam moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: DenseTensor,
    pub second_moment: DenseTensor,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            first_moment: DenseTensor::zeros(shape),
            second_moment: DenseTensor::zeros(shape),
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One Adam update. Returns the new parameter; `state` is advanced in place.
pub fn adam_step(param: &DenseTensor, grad: &DenseTensor, state: &mut AdamState) -> Result<DenseTensor> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(mismatch(
            "adam_step",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let mut out = param.clone();
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (i, p) in out.data_mut().iter_mut().enumerate() {
        let g = grad.data()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(out)
}
