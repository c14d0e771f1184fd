//! Adam with decoupled weight decay and a cosine learning-rate schedule.

use autodiff::ParamRegistry;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    /// Applies one update; `t` counts completed steps (0 for the first).
    /// Moment buffers live in each parameter's first two slots.
    pub fn step(&self, params: &mut ParamRegistry, grads: &[Vec<f64>], t: usize, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        let k = (t + 1) as i32;
        let c1 = 1.0 - self.beta1.powi(k);
        let c2 = 1.0 - self.beta2.powi(k);
        for (id, grad) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
            let p = params.param_mut(id);
            let n = p.value.numel();
            if grad.len() != n {
                return Err(Error::Contract("gradient length differs from parameter".into()));
            }
            if p.slots.len() < 2 {
                p.slots = vec![vec![0.0; n], vec![0.0; n]];
            }
            let (m, rest) = p.slots.split_at_mut(1);
            let (m, v) = (&mut m[0], &mut rest[0]);
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// `lr(t) = lr_final + ½ (lr_init − lr_final)(1 + cos(π t / (T − 1)))` for
/// `t` in `0..T`, so the first step uses `lr_init` and the last `lr_final`.
/// With `warmup_steps = W > 0` the rate is additionally scaled by
/// `min(1, (t + 1) / W)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_init: f64,
    pub lr_final: f64,
    pub total_steps: usize,
    #[serde(default)]
    pub warmup_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, t: usize) -> f64 {
        let ramp = if self.warmup_steps > 0 {
            ((t + 1) as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        if self.total_steps <= 1 {
            return ramp * self.lr_init;
        }
        let frac = (t.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        ramp * (self.lr_final + 0.5 * (self.lr_init - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Tensor;

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut reg = ParamRegistry::new();
        reg.add("w", Tensor::vector(vec![0.5, -2.0]));
        let opt = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        for t in 0..5 {
            opt.step(&mut reg, &[vec![0.0, 0.0]], t, 1e-2).unwrap();
        }
        assert_eq!(reg.value(reg.id("w").unwrap()).data(), &[0.5, -2.0]);
    }

    #[test]
    fn quadratic_converges() {
        let mut reg = ParamRegistry::new();
        let id = reg.add("w", Tensor::vector(vec![3.0]));
        let opt = AdamW::default();
        let sched = CosineSchedule {
            lr_init: 0.1,
            lr_final: 1e-6,
            total_steps: 500,
            warmup_steps: 0,
        };
        for t in 0..500 {
            let w = reg.value(id).data()[0];
            opt.step(&mut reg, &[vec![2.0 * w]], t, sched.lr(t)).unwrap();
        }
        assert!(reg.value(id).data()[0].abs() < 1e-3, "{}", reg.value(id).data()[0]);
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule {
            lr_init: 3e-4,
            lr_final: 1e-6,
            total_steps: 2000,
            warmup_steps: 0,
        };
        assert_eq!(s.lr(0), 3e-4);
        assert!((s.lr(1999) - 1e-6).abs() <= 1e-8);
        assert!((s.lr(1000) - (1e-6 + 0.5 * (3e-4 - 1e-6) * (1.0 + (std::f64::consts::PI * 1000.0 / 1999.0).cos()))).abs() < 1e-18);
        assert!(s.lr(500) > s.lr(501));
    }

    #[test]
    fn warmup_ramps_then_follows_cosine() {
        let plain = CosineSchedule {
            lr_init: 1e-3,
            lr_final: 1e-6,
            total_steps: 100,
            warmup_steps: 0,
        };
        let warm = CosineSchedule {
            warmup_steps: 10,
            ..plain
        };
        assert_eq!(warm.lr(0), plain.lr(0) / 10.0);
        assert_eq!(warm.lr(4), plain.lr(4) * 0.5);
        assert_eq!(warm.lr(9), plain.lr(9));
        assert_eq!(warm.lr(99), plain.lr(99));
    }
}
