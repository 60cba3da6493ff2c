//! Adam with bias correction.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::{Error, Result};

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// One Adam update of `params` in place. `step` is the 1-based update count.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || moments.first.len() != params.len()
        || moments.second.len() != params.len()
    {
        return Err(Error::ShapeMismatch {
            context: "adam step",
            expected: vec![params.len()],
            found: vec![grads.len(), moments.first.len(), moments.second.len()],
        });
    }
    if step == 0 {
        return Err(Error::config("step", "Adam step counter starts at 1"));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(step.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(step.min(i32::MAX as u64) as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Optimizer state for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl AdamState {
    pub fn for_params(params: &[&mut Tensor]) -> Self {
        AdamState {
            step: 0,
            moments: params.iter().map(|p| Moments::zeros(p.numel())).collect(),
        }
    }

    /// Applies one update to every tensor using its gradient buffer.
    pub fn update(&mut self, params: &mut [&mut Tensor], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::ShapeMismatch {
                context: "adam parameter list",
                expected: vec![self.moments.len()],
                found: vec![params.len()],
            });
        }
        self.step += 1;
        for (p, m) in params.iter_mut().zip(self.moments.iter_mut()) {
            let (data, grad) = p.data_and_grad_mut();
            adam_step(data, grad, m, self.step, cfg)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, -2.0, 3.0];
        let mut m = Moments::zeros(3);
        for step in 1..=5 {
            adam_step(&mut p, &[0.0; 3], &mut m, step, &cfg).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.0; 4];
        let g = [0.5, -3.0, 1e-3, 42.0];
        adam_step(&mut p, &g, &mut Moments::zeros(4), 1, &cfg).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert!((pi + cfg.learning_rate * gi.signum()).abs() < 1e-7, "{pi}");
        }
    }

    #[test]
    fn deterministic_and_checked() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut m = Moments::zeros(2);
            for step in 1..=10 {
                let g = [p[0] - 1.0, p[1] + 2.0];
                adam_step(&mut p, &g, &mut m, step, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut p, &[0.0; 3], &mut Moments::zeros(2), 1, &cfg).is_err());
        assert!(adam_step(&mut p, &[0.0; 2], &mut Moments::zeros(2), 0, &cfg).is_err());
    }
}
