//! Ring-of-Gaussians target distribution and noise priors.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Isotropic Gaussians with equal variance whose means sit evenly on a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingSpec {
    pub n_modes: usize,
    pub radius: f64,
    /// Per-coordinate variance of every component.
    pub component_var: f64,
    /// Mixing weights; empty means uniform.
    pub mode_weights: Vec<f64>,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            n_modes: 8,
            radius: 2.0,
            component_var: 0.02,
            mode_weights: Vec::new(),
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::contract("ring needs at least one mode"));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::contract("ring radius must be finite and non-negative"));
        }
        if !(self.component_var.is_finite() && self.component_var > 0.0) {
            return Err(Error::contract("component variance must be positive"));
        }
        if !self.mode_weights.is_empty() {
            if self.mode_weights.len() != self.n_modes {
                return Err(Error::contract(format!(
                    "{} mode weights for {} modes",
                    self.mode_weights.len(),
                    self.n_modes
                )));
            }
            let total: f64 = self.mode_weights.iter().sum();
            if self.mode_weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::contract("mode weights must form a probability vector"));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.mode_weights.is_empty() {
            vec![1.0 / self.n_modes as f64; self.n_modes]
        } else {
            self.mode_weights.clone()
        }
    }

    pub fn weight(&self, k: usize) -> f64 {
        if self.mode_weights.is_empty() {
            1.0 / self.n_modes as f64
        } else {
            self.mode_weights[k]
        }
    }

    /// Mean of mode `k`, at angle `2 pi k / n_modes`.
    pub fn mean(&self, k: usize) -> (f64, f64) {
        let angle = 2.0 * PI * k as f64 / self.n_modes as f64;
        (self.radius * angle.cos(), self.radius * angle.sin())
    }

    pub fn means(&self) -> Vec<(f64, f64)> {
        (0..self.n_modes).map(|k| self.mean(k)).collect()
    }

    pub fn std(&self) -> f64 {
        self.component_var.sqrt()
    }

    /// Draws `n` points and the mode each came from.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Tensor<f32>, Vec<usize>) {
        let pick = WeightedIndex::new(self.weights()).expect("validated weights");
        let std = self.std();
        let mut data = Vec::with_capacity(2 * n);
        let mut modes = Vec::with_capacity(n);
        for _ in 0..n {
            let k = pick.sample(rng);
            let (mx, my) = self.mean(k);
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            data.push((mx + std * zx) as f32);
            data.push((my + std * zy) as f32);
            modes.push(k);
        }
        (Tensor::from_vec(n, 2, data).expect("n x 2"), modes)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor<f32> {
        self.sample_labeled(n, rng).0
    }

    /// Density of the mixture at `(x, y)`.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let var = self.component_var;
        let norm = 1.0 / (2.0 * PI * var);
        (0..self.n_modes)
            .map(|k| {
                let (mx, my) = self.mean(k);
                let d2 = (x - mx).powi(2) + (y - my).powi(2);
                self.weight(k) * norm * (-d2 / (2.0 * var)).exp()
            })
            .sum()
    }

    /// Density of component `k` alone.
    pub fn component_density(&self, k: usize, x: f64, y: f64) -> f64 {
        let var = self.component_var;
        let (mx, my) = self.mean(k);
        let d2 = (x - mx).powi(2) + (y - my).powi(2);
        (-d2 / (2.0 * var)).exp() / (2.0 * PI * var)
    }
}

/// Draws `n` points from the ring with a fresh seeded generator.
pub fn sample_ring(spec: &RingSpec, n: usize, seed: u64) -> Result<Tensor<f32>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::contract("sample_ring needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spec.sample_with(n, &mut rng))
}

pub fn ring_density(spec: &RingSpec, x: f64, y: f64) -> f64 {
    spec.density(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePrior {
    /// Isotropic standard normal.
    #[default]
    Gaussian,
    /// Independent `Uniform[-1, 1]` coordinates.
    Uniform,
}

impl NoisePrior {
    pub fn sample_with<R: Rng + ?Sized>(self, n: usize, dim: usize, rng: &mut R) -> Tensor<f32> {
        self.sample_as(n, dim, rng)
    }

    /// Draws in single precision and widens, so every `T` sees the same values.
    pub fn sample_as<T: Real, R: Rng + ?Sized>(self, n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
        let len = n * dim;
        let data: Vec<T> = match self {
            NoisePrior::Gaussian => (0..len)
                .map(|_| {
                    let v: f32 = StandardNormal.sample(rng);
                    T::from_f64(f64::from(v))
                })
                .collect(),
            NoisePrior::Uniform => {
                let u = Uniform::new_inclusive(-1.0f32, 1.0).expect("valid range");
                (0..len).map(|_| T::from_f64(f64::from(u.sample(rng)))).collect()
            }
        };
        Tensor::from_vec(n, dim, data).expect("n x dim")
    }
}

pub fn sample_noise(n: usize, dim: usize, prior: NoisePrior, seed: u64) -> Result<Tensor<f32>> {
    if n == 0 || dim == 0 {
        return Err(Error::contract("sample_noise needs n, dim >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(prior.sample_with(n, dim, &mut rng))
}

/// Writes `n x 2` points as CSV with an `x,y` header.
pub fn write_points_csv(path: &Path, points: &Tensor<f32>) -> Result<()> {
    let mut out = String::from("x,y\n");
    for r in 0..points.rows() {
        out.push_str(&format!("{},{}\n", points.get(r, 0), points.get(r, 1)));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
