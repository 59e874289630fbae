use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<(), NnError> {
        params.check_same_layout(grads)?;
        params.check_same_layout(&self.m)?;
        self.step += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = 1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let step_size = T::of(c.learning_rate / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(c.epsilon);
        for idx in 0..params.len() {
            let g = grads.tensor(idx).data();
            let m = self.m.tensor_mut(idx).data_mut();
            let v = self.v.tensor_mut(idx).data_mut();
            let p = params.tensor_mut(idx).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p[i] -= step_size * m[i] / denom;
            }
        }
        if !params.is_finite() {
            let bad = params.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n.to_string());
            return Err(NnError::NonFinite(format!("parameter {} after Adam step", bad.unwrap_or_default())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(x: f64) -> ParamSet<f64> {
        ParamSet::from_parts(vec![("w".into(), Tensor::from_vec(&[1], vec![x]).unwrap())])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &single(0.0)).unwrap();
        assert_eq!(p.tensor(0).data()[0], 0.7);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [0.5, -3.0, 1e-2] {
            let mut p = single(1.0);
            let mut adam = AdamState::new(AdamConfig::default(), &p);
            adam.step(&mut p, &single(g)).unwrap();
            let delta = p.tensor(0).data()[0] - 1.0;
            assert!((delta.abs() - 1e-3).abs() < 1e-8, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn quadratic_loss_decreases_over_windows() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2
        let loss = |p: &ParamSet<f64>| {
            let d = p.tensor(0).data();
            (d[0] - 3.0).powi(2) + 10.0 * (d[1] + 1.0).powi(2)
        };
        let mut p = ParamSet::from_parts(vec![("w".into(), Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap())]);
        let cfg = AdamConfig { learning_rate: 0.05, ..AdamConfig::default() };
        let mut adam = AdamState::new(cfg, &p);
        let mut history = vec![loss(&p)];
        for _ in 0..100 {
            let d = p.tensor(0).data().to_vec();
            let g = ParamSet::from_parts(vec![(
                "w".into(),
                Tensor::from_vec(&[2], vec![2.0 * (d[0] - 3.0), 20.0 * (d[1] + 1.0)]).unwrap(),
            )]);
            adam.step(&mut p, &g).unwrap();
            history.push(loss(&p));
        }
        for w in 0..=(history.len() - 11) {
            assert!(history[w + 10] < history[w], "window at {w}: {} -> {}", history[w], history[w + 10]);
        }
        assert_eq!(adam.step, 100);
    }
}
