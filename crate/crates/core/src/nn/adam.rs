use super::{Parameter, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// One bias-corrected Adam update of `p` at step `t` (1-based). The gradient
/// is left untouched.
pub fn adam_step<T: Scalar>(p: &mut Parameter<T>, cfg: &AdamConfig, t: u64) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one, wd, eps) = (T::one(), T::of(cfg.weight_decay), T::of(cfg.eps));
    let step = T::of(cfg.lr / c1);
    let inv_c2 = T::of(1.0 / c2);
    let Parameter { value, grad, m, v, .. } = p;
    for (((w, &g), m), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        let g = g + wd * *w;
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *w = *w - step * *m / ((*v * inv_c2).sqrt() + eps);
    }
}

/// Adam state shared across parameters: the configuration and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, t: 0 }
    }

    pub fn step<'a, T: Scalar>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        self.t += 1;
        for p in params {
            adam_step(p, &self.config, self.t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new("w", Tensor::new(vec![2], vec![1.0f64, -1.0]).unwrap());
        p.grad = Tensor::new(vec![2], vec![0.5, -3.0]).unwrap();
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        adam_step(&mut p, &cfg, 1);
        assert!((p.value.data()[0] - (1.0 - 3e-4)).abs() < 1e-9);
        assert!((p.value.data()[1] - (-1.0 + 3e-4)).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Parameter::new("w", Tensor::new(vec![1], vec![2.0f64]).unwrap());
        let cfg = AdamConfig { weight_decay: 0.1, ..Default::default() };
        adam_step(&mut p, &cfg, 1);
        assert!(p.value.data()[0] < 2.0);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Parameter::new("w", Tensor::new(vec![3], vec![0.5f32, -1.0, 2.0]).unwrap());
        let before = p.value.clone();
        let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            opt.step([&mut p]);
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn norm_shrinks_monotonically() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let init = Tensor::from_fn(&[8], |_| {
            let m: f64 = rng.random_range(1.0..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        });
        let norm = |p: &Parameter<f64>| p.value.data().iter().map(|w| w * w).sum::<f64>().sqrt();
        let mut p = Parameter::new("w", init);
        let start = norm(&p);
        let mut opt = Adam::new(AdamConfig { lr: 2e-3, weight_decay: 0.0, ..Default::default() });
        let mut prev = start;
        for step in 1..=500 {
            p.grad = Tensor::from_fn(&[8], |i| 2.0 * p.value.data()[i]);
            opt.step([&mut p]);
            let n = norm(&p);
            if step > 10 {
                assert!(n < prev, "step {step}: {n} >= {prev}");
            }
            prev = n;
        }
        assert!(prev < 0.6 * start, "{prev} vs {start}");
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Parameter::new("w", Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap());
        let mut opt = Adam::new(AdamConfig { lr: 0.05, weight_decay: 0.0, ..Default::default() });
        for _ in 0..2000 {
            let g: Vec<f32> = p.value.data().iter().map(|w| 2.0 * w).collect();
            p.grad = Tensor::new(vec![3], g).unwrap();
            opt.step([&mut p]);
        }
        let norm: f32 = p.value.data().iter().map(|w| w * w).sum();
        assert!(norm < 1e-4, "{norm}");
        assert_eq!(opt.t, 2000);
    }
}
