//! Adam optimizer with per-parameter state and freeze masking.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Adam with bias correction. Frozen parameters are skipped entirely:
/// no update, no state advance.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    state: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!("adam betas out of range: {beta1}, {beta2}")));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("adam eps must be positive, got {eps}")));
        }
        Ok(Adam { beta1, beta2, eps, steps: 0, state: Vec::new() })
    }

    /// Paper-lineage defaults: beta 0.9 / 0.999, eps 1e-8.
    pub fn default_betas() -> Self {
        Adam::new(0.9, 0.999, 1e-8).expect("valid defaults")
    }

    /// One update over `params`, using `grads[i]` for `params[i]`.
    /// Missing gradients count as zero. The learning rate is supplied per
    /// step so an external schedule can drive it.
    pub fn step(
        &mut self,
        params: &mut [Parameter],
        grads: &[Option<Vec<f64>>],
        lr: f64,
    ) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let n = p.tensor.numel();
            let (m, v) = self.state[i].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let zero = vec![0.0; n];
            let g = grads[i].as_deref().unwrap_or(&zero);
            debug_assert_eq!(g.len(), n, "gradient shape mismatch for {}", p.name);
            let data = p.tensor.data_mut();
            for j in 0..n {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                data[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn frozen_parameter_is_never_touched() {
        let mut params =
            vec![Parameter::frozen("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap())];
        let before = params[0].tensor.data().to_vec();
        let mut opt = Adam::default_betas();
        for _ in 0..5 {
            opt.step(&mut params, &[Some(vec![1.0, 1.0])], 0.1).unwrap();
        }
        assert_eq!(params[0].tensor.data(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step with unit gradient moves by ~ -lr
        let mut params = vec![Parameter::new("w", Tensor::scalar(0.0))];
        let mut opt = Adam::default_betas();
        opt.step(&mut params, &[Some(vec![1.0])], 0.1).unwrap();
        let moved = params[0].tensor.data()[0];
        assert!((moved + 0.1).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameter_unchanged() {
        let mut params = vec![Parameter::new("w", Tensor::scalar(3.0))];
        let mut opt = Adam::default_betas();
        opt.step(&mut params, &[Some(vec![0.0])], 0.1).unwrap();
        assert_eq!(params[0].tensor.data()[0], 3.0);
    }

    #[test]
    fn non_positive_lr_rejected() {
        let mut params = vec![Parameter::new("w", Tensor::scalar(1.0))];
        let mut opt = Adam::default_betas();
        let err = opt.step(&mut params, &[Some(vec![1.0])], 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
