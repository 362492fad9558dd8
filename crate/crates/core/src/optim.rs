//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0002,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Rebuilds a state from stored parts. Shapes are checked against `params`.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
        params: &Params<T>,
    ) -> Result<Self> {
        let ok = m.len() == params.len()
            && v.len() == params.len()
            && params
                .tensors()
                .iter()
                .zip(m.iter().zip(&v))
                .all(|(p, (a, b))| p.shape() == a.shape() && p.shape() == b.shape());
        if !ok {
            return Err(Error::Checkpoint(
                "optimizer moments do not match parameter shapes".into(),
            ));
        }
        Ok(AdamState {
            config,
            step,
            m,
            v,
        })
    }

    /// One update. Gradients are given in the same order as `params`.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                let bad = g.data().iter().position(|v| !v.is_finite()).unwrap_or(0);
                return Err(Error::NonFinite(format!(
                    "gradient of {name} (entry {bad} = {})",
                    g.data()[bad]
                )));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_b1 = T::from_f64(1.0 - c.beta1);
        let one_b2 = T::from_f64(1.0 - c.beta2);
        let inv_bias1 = T::from_f64(1.0 / bias1);
        let inv_bias2 = T::from_f64(1.0 / bias2);
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);

        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let m_hat = m[j] * inv_bias1;
                let v_hat = v[j] * inv_bias2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
