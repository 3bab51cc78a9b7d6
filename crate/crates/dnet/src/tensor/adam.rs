//! ADAM optimizer with bias correction.

use super::params::ParamSet;
use crate::error::{Error, Result};

/// First/second moment estimates per parameter slot plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Standard coefficients: β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet) -> Self {
        AdamState::with_coefficients(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_coefficients(params: &ParamSet, beta1: f32, beta2: f32, eps: f32) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `p -= lr * m̂ / (sqrt(v̂) + ε)`; consumes and clears the
    /// accumulated gradients. Every slot must have a populated gradient.
    pub fn step(&mut self, params: &mut ParamSet, lr: f32) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} slots, parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for slot in 0..params.len() {
            if params.get(slot).grad.is_none() {
                return Err(Error::State(format!(
                    "missing gradient on '{}'; run backward before the optimizer step",
                    params.get(slot).name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for slot in 0..params.len() {
            let entry = params.get_mut(slot);
            let grad = entry.grad.take().expect("checked above");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = entry.value.data_mut();
            for i in 0..data.len() {
                let g = grad.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Raw moments for checkpointing, in slot order.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    /// Rebuilds saved optimizer state; moment lengths must match the params.
    pub fn from_parts(
        params: &ParamSet,
        step: u64,
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let lens_ok = m.len() == params.len()
            && v.len() == params.len()
            && params
                .iter()
                .zip(m.iter().zip(v.iter()))
                .all(|(p, (pm, pv))| pm.len() == p.value.len() && pv.len() == p.value.len());
        if !lens_ok {
            return Err(Error::State(
                "optimizer moments do not match parameter shapes".into(),
            ));
        }
        Ok(AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            m,
            v,
        })
    }
}
