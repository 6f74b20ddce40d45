use serde::{Deserialize, Serialize};

use super::tensor::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Applies one Adam update with learning rate `lr` and clears the gradients.
///
/// Every parameter must carry a gradient buffer; a missing one means
/// `backward`/`accumulate` was skipped for this step.
pub fn adam_step(store: &mut ParameterStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
    for idx in 0..store.len() {
        if store.by_index(idx).grad.is_none() {
            return Err(Error::TrainingState(format!(
                "parameter {} has no gradient",
                store.name_of(idx)
            )));
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for idx in 0..store.len() {
        let grad = store.by_index_mut(idx).grad.take().expect("checked above");
        let (m, v) = &mut store.moments[idx];
        let mut deltas = Vec::with_capacity(grad.len());
        for ((mi, vi), g) in m.iter_mut().zip(v.iter_mut()).zip(&grad) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            deltas.push(lr * mhat / (vhat.sqrt() + cfg.eps));
        }
        for (p, d) in store.by_index_mut(idx).data_mut().iter_mut().zip(deltas) {
            *p -= d;
        }
    }
    Ok(())
}

/// Linear warmup followed by inverse square-root decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: u64,
}

impl LrSchedule {
    /// Learning rate for the 1-based update number `step`.
    pub fn at(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup == 0 {
            return self.base;
        }
        let w = self.warmup as f64;
        self.base * (s / w).min((w / s).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        s
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = scalar_store(1.0);
        assert!(matches!(
            adam_step(&mut s, 0.1, &AdamConfig::default()),
            Err(Error::TrainingState(_))
        ));
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut s = scalar_store(1.5);
        s.by_index_mut(0).grad = Some(vec![0.0]);
        adam_step(&mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(s.by_index(0).data(), &[1.5]);
        assert_eq!(s.updates(), 1);
        assert!(s.by_index(0).grad.is_none());
    }

    #[test]
    fn scalar_matches_hand_recurrence() {
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let grads = [0.5, -1.0, 2.0, 0.25, -0.75];
        let lr = 0.05;
        let mut s = scalar_store(0.3);
        let (mut x, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for (i, g) in grads.iter().enumerate() {
            s.by_index_mut(0).grad = Some(vec![*g]);
            adam_step(&mut s, lr, &cfg).unwrap();
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((s.by_index(0).data()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap()).unwrap();
        let loss = |p: &[f64]| p[0] * p[0] + 4.0 * p[1] * p[1];
        let mut last = loss(s.by_index(0).data());
        for _ in 0..100 {
            let p = s.by_index(0).data().to_vec();
            s.by_index_mut(0).grad = Some(vec![2.0 * p[0], 8.0 * p[1]]);
            adam_step(&mut s, 0.01, &AdamConfig::default()).unwrap();
            let l = loss(s.by_index(0).data());
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = LrSchedule {
            base: 1e-3,
            warmup: 100,
        };
        assert!(s.at(10) < s.at(50));
        assert!((s.at(100) - 1e-3).abs() < 1e-15);
        assert!(s.at(400) < s.at(100));
        assert!((s.at(400) - 5e-4).abs() < 1e-15);
    }
}
