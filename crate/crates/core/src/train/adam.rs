use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{Scalar, Tensor};

/// Optimiser constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.alpha > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.alpha.is_finite()
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid Adam constants {self:?}")))
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<S>> = sizes.into_iter().map(|n| vec![S::zero(); n]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update of every tensor in `params` from the matching `grads`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: Vec<&mut Tensor<S>>,
        grads: &[(String, &Tensor<S>)],
        cfg: &AdamConfig,
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Config(format!(
                "optimiser tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, g), m) in grads.iter().zip(&self.m) {
            if g.len() != m.len() {
                return Err(TrainError::Config(format!("gradient {name} has the wrong size")));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as f64;
        let b1 = S::of(cfg.beta1);
        let b2 = S::of(cfg.beta2);
        let c1 = S::of(1.0 - cfg.beta1);
        let c2 = S::of(1.0 - cfg.beta2);
        let corr1 = S::of(1.0 / (1.0 - cfg.beta1.powf(t)));
        let corr2 = S::of(1.0 / (1.0 - cfg.beta2.powf(t)));
        let alpha = S::of(cfg.alpha);
        let eps = S::of(cfg.epsilon);
        for (((p, (_, g)), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                let mh = *mi * corr1;
                let vh = *vi * corr2;
                *w -= alpha * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
