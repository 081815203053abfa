//! Adam with bias correction, plus global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f64> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    skipped: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates skipped because a gradient was not finite.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Returns `Ok(false)` and leaves everything untouched
    /// when any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<bool> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: m.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            self.skipped += 1;
            return Ok(false);
        }
        self.step += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(c.beta1.powf(self.step as f64));
        let bc2 = T::one() - T::lit(c.beta2.powf(self.step as f64));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(true)
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&x| x * x)
        .sum::<T>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let cfg = AdamConfig::default();
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![0.3, -4.0, 1e-3])];
        let mut adam = Adam::new(cfg, &p);
        assert!(adam.step(&mut p, &g).unwrap());
        let d: Vec<f64> = p[0].data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (di, gi) in d.iter().zip(g[0].data()) {
            assert!((di + cfg.lr * gi.signum()).abs() < cfg.lr * 1e-4);
        }
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::zeros([2])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = vec![Tensor::vector(vec![1.0])];
        let mut adam = Adam::new(AdamConfig::default(), &p);
        assert!(!adam.step(&mut p, &[Tensor::vector(vec![f64::NAN])]).unwrap());
        assert_eq!(p[0].data(), &[1.0]);
        assert_eq!((adam.steps(), adam.skipped()), (0, 1));
        assert!(adam.step(&mut p, &[Tensor::zeros([2])]).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![3.0f64]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }
}
