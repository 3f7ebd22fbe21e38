//! Adam with bias correction and the step learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::{Param, Parameterized};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam keyed by canonical parameter name.
///
/// Call [`Adam::begin_step`] once per optimization step, then
/// [`Adam::update`] for every module that takes part in the step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    t: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Number of completed `begin_step` calls.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update<P: Parameterized<T> + ?Sized>(&mut self, prefix: &str, module: &mut P, lr: f64) {
        assert!(self.t > 0, "begin_step must precede update");
        let cfg = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - cfg.beta1), T::lit(1.0 - cfg.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(cfg.eps);
        let state = &mut self.state;
        module.visit_params_mut(prefix, &mut |name, p: &mut Param<T>| {
            let mo = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); p.len()],
                v: vec![T::zero(); p.len()],
            });
            for i in 0..p.len() {
                let g = p.grad[i];
                mo.m[i] = b1 * mo.m[i] + one_b1 * g;
                mo.v[i] = b2 * mo.v[i] + one_b2 * g * g;
                let denom = mo.v[i].sqrt() * inv_sqrt_bc2 + eps;
                p.value[i] -= step_size * mo.m[i] / denom;
            }
        });
    }

    pub fn moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.state
    }

    /// Rebuilds optimizer state from saved moments.
    pub fn restore(config: AdamConfig, t: u64, state: BTreeMap<String, Moments<T>>) -> Result<Self> {
        for (name, mo) in &state {
            if mo.m.len() != mo.v.len() {
                return Err(Error::Checkpoint(format!("moment length mismatch for {name}")));
            }
        }
        Ok(Self { config, t, state })
    }
}

/// `lr0` before `half_epoch`, `lr0 / 2` from it on.
pub fn learning_rate(lr0: f64, half_epoch: u64, epoch: u64) -> f64 {
    if epoch < half_epoch {
        lr0
    } else {
        lr0 / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::join;

    struct One(Param<f64>);

    impl Parameterized<f64> for One {
        fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
            f(&join(prefix, "w"), &self.0)
        }
        fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            f(&join(prefix, "w"), &mut self.0)
        }
    }

    #[test]
    fn matches_scalar_reference_over_100_steps() {
        // minimise (w - 3)^2 from w = 0
        let mut model = One(Param::zeros(&[1]));
        let mut adam = Adam::new(AdamConfig::default());
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let lr = 0.05;
        for t in 1..=100 {
            model.0.grad[0] = 2.0 * (model.0.value[0] - 3.0);
            adam.begin_step();
            adam.update("", &mut model, lr);

            let g = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((model.0.value[0] - w).abs() < 1e-12, "step {t}");
        }
        assert!((w - 3.0).abs() < 0.5);
    }

    #[test]
    fn schedule_halves_at_boundary() {
        assert_eq!(learning_rate(2e-4, 150, 0), 2e-4);
        assert_eq!(learning_rate(2e-4, 150, 149), 2e-4);
        assert_eq!(learning_rate(2e-4, 150, 150), 1e-4);
        assert_eq!(learning_rate(2e-4, 150, 599), 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_weights_alone() {
        let mut model = One(Param::full(&[1], 1.5));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.begin_step();
            adam.update("", &mut model, 0.1);
        }
        assert_eq!(model.0.value[0], 1.5);
        assert_eq!(adam.t(), 5);
    }
}
