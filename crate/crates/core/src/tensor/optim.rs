//! AdamW: Adam with decoupled weight decay and bias correction.

use super::{real, Real, Tensor};
use crate::error::NumericsError;

/// Optimizer hyperparameters. Defaults target the small from-scratch networks
/// in this crate; weight decay is the one constant portable from large-scale
/// training recipes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Per-parameter moment state plus the step counter.
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    /// `param_dims` fixes the parameter order for the life of the optimizer.
    pub fn new(cfg: AdamWConfig, param_dims: &[&[usize]]) -> Self {
        AdamW {
            cfg,
            step: 0,
            m: param_dims.iter().map(|d| Tensor::zeros(d)).collect(),
            v: param_dims.iter().map(|d| Tensor::zeros(d)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update. `params` and `grads` must be
    /// aligned with the dims this optimizer was built from; a missing or
    /// mismatched gradient is a contract error.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Option<&Tensor<T>>],
    ) -> Result<(), NumericsError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumericsError::Contract(format!(
                "optimizer built for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let lr = real::<T>(self.cfg.lr);
        let b1 = real::<T>(self.cfg.beta1);
        let b2 = real::<T>(self.cfg.beta2);
        let eps = real::<T>(self.cfg.eps);
        let one = T::ONE;
        let bc1 = real::<T>(1.0 - self.cfg.beta1.powi(t as i32));
        let bc2 = real::<T>(1.0 - self.cfg.beta2.powi(t as i32));
        let decay = real::<T>(1.0 - self.cfg.lr * self.cfg.weight_decay);

        for (i, (param, grad)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let grad = grad.ok_or_else(|| {
                NumericsError::Contract(format!("missing gradient for parameter {i}"))
            })?;
            if grad.dims() != param.dims() || param.dims() != self.m[i].dims() {
                return Err(NumericsError::Contract(format!(
                    "parameter {i}: dims {:?} vs gradient {:?} vs state {:?}",
                    param.dims(),
                    grad.dims(),
                    self.m[i].dims()
                )));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((p, &g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p = decay * *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors and step counter, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor<T>], &[Tensor<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>) -> Result<(), NumericsError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(NumericsError::Contract("optimizer state length mismatch".into()));
        }
        for (have, want) in m.iter().zip(self.m.iter()).chain(v.iter().zip(self.v.iter())) {
            if have.dims() != want.dims() {
                return Err(NumericsError::Contract("optimizer state dims mismatch".into()));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut p = Tensor::from_vec(&[2], vec![1.5f64, -0.5]);
        let g = Tensor::zeros(&[2]);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &[&[2]]);
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        assert_eq!(p.data(), &[1.5, -0.5]);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // g = 1, lr = 0.1, wd = 0: bias correction makes m_hat = v_hat = 1,
        // so the update is -0.1 / (1 + eps).
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]);
        let g = Tensor::from_vec(&[1], vec![1.0f64]);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, &[&[1]]);
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15, "{} vs {expected}", p.item());
    }

    #[test]
    fn decoupled_decay_only() {
        // wd = 0.5, lr = 0.1, g = 0: theta <- theta * (1 - 0.05)
        let mut p = Tensor::from_vec(&[1], vec![2.0f64]);
        let g = Tensor::zeros(&[1]);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(cfg, &[&[1]]);
        opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
        assert!((p.item() - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = Tensor::from_vec(&[1], vec![0.0f32]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[&[1]]);
        let got = opt.step(&mut [&mut p], &[None]);
        assert!(matches!(got, Err(NumericsError::Contract(_))));
    }

    #[test]
    fn identical_inputs_are_bit_reproducible() {
        let run = || {
            let mut p = Tensor::from_vec(&[3], vec![0.1f32, -0.2, 0.3]);
            let g = Tensor::from_vec(&[3], vec![0.01f32, 0.02, -0.03]);
            let mut opt = AdamW::new(AdamWConfig::default(), &[&[3]]);
            for _ in 0..10 {
                opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
            }
            p.data().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut p = Tensor::from_vec(&[1], vec![0.0f64]);
        let g = Tensor::from_vec(&[1], vec![1.0f64]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[&[1]]);
        for want in 1..=5u64 {
            opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
            assert_eq!(opt.step_count(), want);
        }
    }
}
