use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_EPSILON: f32 = 1e-8;

/// Per-parameter first and second moment buffers.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update at 1-based step `t`. Weight decay is
/// added to the gradient (L2 form).
pub fn adam_step(
    params: &mut [&mut Tensor],
    state: &mut AdamState,
    lr: f32,
    betas: (f32, f32),
    weight_decay: f32,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::invalid("adam step index is 1-based"));
    }
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::invalid(format!("parameter {i} has no gradient")));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() {
        return Err(Error::invalid("optimizer state does not match parameter list"));
    }
    let (b1, b2) = betas;
    let c1 = 1.0 - (b1 as f64).powi(t as i32);
    let c2 = 1.0 - (b2 as f64).powi(t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = p.grad().expect("checked above").to_vec();
        for (((w, g), m), v) in p.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = g + weight_decay * *w;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m as f64 / c1;
            let v_hat = *v as f64 / c2;
            *w -= (lr as f64 * m_hat / (v_hat.sqrt() + ADAM_EPSILON as f64)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(value: f32, grad: f32) -> Tensor {
        let mut t = Tensor::scalar(value).with_grad();
        t.accumulate_grad(&[grad]);
        t
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut w = with_grad(0.5, 1.0);
        let mut st = AdamState::new();
        adam_step(&mut [&mut w], &mut st, 0.1, (0.9, 0.999), 0.0, 1).unwrap();
        let expected = 0.5 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((w.item() - expected).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut w = with_grad(0.25, 0.0);
        let mut st = AdamState::new();
        for t in 1..=10 {
            adam_step(&mut [&mut w], &mut st, 0.1, (0.9, 0.999), 0.0, t).unwrap();
        }
        assert_eq!(w.item(), 0.25);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut w = Tensor::scalar(1.0).with_grad();
        let mut st = AdamState::new();
        for t in 1..=100 {
            w.zero_grad();
            let g = 2.0 * w.item();
            w.accumulate_grad(&[g]);
            adam_step(&mut [&mut w], &mut st, 0.1, (0.9, 0.999), 0.0, t).unwrap();
        }
        assert!(w.item().abs() < 0.1, "w = {}", w.item());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut w = Tensor::scalar(1.0).with_grad();
        let err = adam_step(&mut [&mut w], &mut AdamState::new(), 0.1, (0.9, 0.999), 0.0, 1);
        assert!(err.is_err());
    }
}
