//! Adam with global-norm clipping and decoupled weight decay, plus the
//! warm-up/linear-decay learning-rate schedule.

use graphtx::ParamStore;
use numkit::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{BenchError, Result};

/// Linear ramp from 0 to the peak over the warm-up, then linear decay to 0
/// at `max_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let (w, m) = (cfg.warmup_steps, cfg.max_steps);
    if step >= m {
        0.0
    } else if step < w {
        cfg.peak_lr * step as f64 / w as f64
    } else {
        cfg.peak_lr * (m - step) as f64 / (m - w) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(t: &TrainConfig) -> Self {
        Self { beta1: t.beta1, beta2: t.beta2, eps: t.adam_eps, weight_decay: t.weight_decay, clip_norm: t.clip_norm }
    }
}

/// Optimizer state; moments mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub lr: f64,
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

impl TrainState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let m: Vec<Matrix> = shapes.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { step: 0, v: m.clone(), m, lr: 0.0 }
    }

    pub fn for_store(store: &ParamStore) -> Self {
        Self::new(store.ids().map(|id| store.get(id)))
    }

    fn check(&self, grads: &[Matrix]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(BenchError::Shape(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        for (k, (g, m)) in grads.iter().zip(&self.m).enumerate() {
            if g.shape() != m.shape() {
                return Err(BenchError::Shape(format!("gradient {k} is {:?}, parameter {:?}", g.shape(), m.shape())));
            }
        }
        Ok(())
    }

    /// Returns the factor that brings the global norm within the clip.
    fn begin(&mut self, grads: &[Matrix], cfg: &AdamConfig, lr: f64) -> Result<f64> {
        self.check(grads)?;
        let norm = global_norm(grads);
        if !norm.is_finite() {
            return Err(BenchError::Numeric(format!("gradient norm is {norm}")));
        }
        self.step += 1;
        self.lr = lr;
        Ok(if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 })
    }

    fn update_one(&mut self, k: usize, p: &mut Matrix, g: &Matrix, clip: f64, cfg: &AdamConfig) {
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = self.lr;
        let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi * clip;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *pi -= lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * *pi);
        }
    }

    /// One update of `params` in place.
    pub fn adam_step(&mut self, params: &mut [Matrix], grads: &[Matrix], cfg: &AdamConfig, lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(BenchError::Shape(format!("{} parameters for {} gradients", params.len(), grads.len())));
        }
        let clip = self.begin(grads, cfg, lr)?;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update_one(k, p, g, clip, cfg);
        }
        Ok(())
    }

    /// [`TrainState::adam_step`] over a parameter store, in id order.
    pub fn adam_step_store(&mut self, store: &mut ParamStore, grads: &[Matrix], cfg: &AdamConfig, lr: f64) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if ids.len() != grads.len() {
            return Err(BenchError::Shape(format!("{} parameters for {} gradients", ids.len(), grads.len())));
        }
        let clip = self.begin(grads, cfg, lr)?;
        for (k, (id, g)) in ids.into_iter().zip(grads).enumerate() {
            self.update_one(k, store.get_mut(id), g, clip, cfg);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> AdamConfig {
        AdamConfig { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: wd, clip_norm: 5.0 }
    }

    #[test]
    fn schedule_endpoints() {
        let t = TrainConfig::default();
        assert_eq!(lr_at(0, &t), 0.0);
        assert_eq!(lr_at(t.warmup_steps, &t), 2e-4);
        assert_eq!(lr_at(t.max_steps, &t), 0.0);
        assert!((lr_at(t.warmup_steps / 2, &t) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Matrix::from_raw(1, 3, vec![1.0, 1.0, 1.0])];
        let g = vec![Matrix::from_raw(1, 3, vec![0.5, -2.0, 1e-3])];
        let mut s = TrainState::new(&p);
        s.adam_step(&mut p, &g, &cfg(0.0), 0.01).unwrap();
        for (x, gi) in p[0].data().iter().zip(g[0].data()) {
            let expect = 1.0 - 0.01 * gi.abs() / (gi.abs() + 1e-8) * gi.signum();
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![Matrix::from_raw(1, 2, vec![2.0, -4.0])];
        let g = vec![Matrix::zeros(1, 2)];
        let mut s = TrainState::new(&p);
        s.adam_step(&mut p, &g, &cfg(1e-3), 0.1).unwrap();
        assert_eq!(p[0].data(), &[2.0 * (1.0 - 0.1 * 1e-3), -4.0 * (1.0 - 0.1 * 1e-3)]);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let g = vec![Matrix::from_raw(1, 2, vec![30.0, 40.0])];
        let mut p = vec![Matrix::zeros(1, 2)];
        let mut s = TrainState::new(&p);
        s.adam_step(&mut p, &g, &cfg(0.0), 1.0).unwrap();
        // After clipping the gradient is (3, 4); the first moment stores 0.1 of it.
        assert!((s.m[0].get(0, 0) - 0.3).abs() < 1e-12);
        assert!((s.m[0].get(0, 1) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_misaligned_gradients() {
        let mut p = vec![Matrix::zeros(1, 2)];
        let mut s = TrainState::new(&p);
        assert!(s.adam_step(&mut p, &[Matrix::zeros(2, 1)], &cfg(0.0), 0.1).is_err());
        assert!(s.adam_step(&mut p, &[Matrix::from_raw(1, 2, vec![f64::NAN, 0.0])], &cfg(0.0), 0.1).is_err());
    }
}
