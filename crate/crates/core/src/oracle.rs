//! Lattice-discretized densities and the optimal classifier/discriminator.
//!
//! Densities live on a regular 2D lattice and are evaluated at cell centers.
//! Expectations are midpoint-rule sums `sum_i p_i * A * f_i` with cell area
//! `A`. Cells whose density is below [`DENSITY_FLOOR`] carry no mass in any
//! integrand.
//!
//! With generator densities `p_k`, mixing weights `pi` and data density
//! `p_data`:
//!
//! - `C*_k = pi_k p_k / sum_j pi_j p_j`
//! - `D* = p_data / (p_data + p_model)` with `p_model = sum_k pi_k p_k`
//! - `JSD_pi = sum_k pi_k E_{p_k}[log C*_k] - sum_k pi_k log pi_k`
//! - `J(G, C*, D*) = 2 JSD(p_data, p_model) - log 4 - beta JSD_pi - beta sum_k pi_k log pi_k`

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NoisePrior, RingSpec};
use crate::error::{Error, Result};
use crate::metrics::{symmetric_kl, HistGrid, Histogram2D};
use crate::nn::GeneratorBank;
use crate::tensor::Tensor;

/// Densities below this value are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Regular lattice over a rectangle. Cell `i` has column `i % nx` and row `i / nx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Lattice {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice::square(3.0, 200)
    }
}

impl Lattice {
    /// `[-half, half]^2` with `n x n` cells.
    pub fn square(half: f64, n: usize) -> Self {
        Lattice {
            x_min: -half,
            x_max: half,
            y_min: -half,
            y_max: half,
            nx: n,
            ny: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.nx > 0
            && self.ny > 0
            && self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min;
        if !ok {
            return Err(Error::contract(format!("invalid lattice {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.x_max - self.x_min) / self.nx as f64,
            (self.y_max - self.y_min) / self.ny as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let (hx, hy) = self.spacing();
        hx * hy
    }

    pub fn center(&self, i: usize) -> (f64, f64) {
        let (hx, hy) = self.spacing();
        let (col, row) = (i % self.nx, i / self.nx);
        (
            self.x_min + (col as f64 + 0.5) * hx,
            self.y_min + (row as f64 + 0.5) * hy,
        )
    }

    /// Same extent with `factor` times as many cells along each axis.
    pub fn refined(&self, factor: usize) -> Self {
        Lattice {
            nx: self.nx * factor,
            ny: self.ny * factor,
            ..*self
        }
    }

    /// The equivalent histogram binning.
    pub fn hist_grid(&self) -> HistGrid {
        HistGrid {
            x_min: self.x_min,
            x_max: self.x_max,
            y_min: self.y_min,
            y_max: self.y_max,
            bins_x: self.nx,
            bins_y: self.ny,
        }
    }
}

/// Nonnegative density values per lattice cell, normalized so that
/// `sum values * cell_area = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GridDensity {
    /// Takes raw nonnegative values and rescales them to unit mass.
    pub fn normalized(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        lattice.validate()?;
        if values.len() != lattice.len() {
            return Err(Error::LatticeMismatch(format!(
                "{} values for a {}x{} lattice",
                values.len(),
                lattice.nx,
                lattice.ny
            )));
        }
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain {
                op: "grid_density",
                detail: "values must be finite and nonnegative".into(),
            });
        }
        let mass: f64 = values.iter().sum::<f64>() * lattice.cell_area();
        if mass <= 0.0 {
            return Err(Error::Domain {
                op: "grid_density",
                detail: "density has zero mass on the lattice".into(),
            });
        }
        Ok(GridDensity {
            lattice,
            values: values.into_iter().map(|v| v / mass).collect(),
        })
    }

    /// Evaluates `f` at every cell center, then normalizes.
    pub fn from_fn(lattice: Lattice, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        lattice.validate()?;
        let values = (0..lattice.len())
            .map(|i| {
                let (x, y) = lattice.center(i);
                f(x, y)
            })
            .collect();
        GridDensity::normalized(lattice, values)
    }

    /// Analytic ring density on the lattice.
    pub fn ring(lattice: Lattice, spec: &RingSpec) -> Result<Self> {
        spec.validate()?;
        GridDensity::from_fn(lattice, |x, y| spec.density(x, y))
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sum values * cell_area`.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_area()
    }

    /// Number of cells above the density floor.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|&&v| v >= DENSITY_FLOOR).count()
    }

    /// `sum_k pi_k p_k`.
    pub fn mixture(components: &[GridDensity], pi: &[f64]) -> Result<Self> {
        let lattice = shared_lattice(components)?;
        check_weights(pi, components.len())?;
        let mut values = vec![0.0; lattice.len()];
        for (c, &w) in components.iter().zip(pi) {
            for (v, &p) in values.iter_mut().zip(&c.values) {
                *v += w * p;
            }
        }
        GridDensity::normalized(lattice, values)
    }

    /// Writes `x,y,value` rows, one per cell.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid_csv(&self.lattice, &self.values, path)
    }

    fn histogram(&self) -> Result<Histogram2D> {
        Histogram2D::from_mass(self.lattice.hist_grid(), self.values.clone())
    }
}

/// Writes per-cell values as `x,y,value` rows at the cell centers.
pub fn write_grid_csv(lattice: &Lattice, values: &[f64], path: &Path) -> Result<()> {
    if values.len() != lattice.len() {
        return Err(Error::LatticeMismatch(format!(
            "{} values for {} cells",
            values.len(),
            lattice.len()
        )));
    }
    let mut out = String::from("x,y,value\n");
    for (i, v) in values.iter().enumerate() {
        let (x, y) = lattice.center(i);
        out.push_str(&format!("{x},{y},{v}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn same_lattice(a: &GridDensity, b: &GridDensity) -> Result<()> {
    if a.lattice != b.lattice {
        return Err(Error::LatticeMismatch(format!(
            "{:?} vs {:?}",
            a.lattice, b.lattice
        )));
    }
    Ok(())
}

fn shared_lattice(components: &[GridDensity]) -> Result<Lattice> {
    let first = components
        .first()
        .ok_or_else(|| Error::contract("at least one component density is required"))?;
    for c in &components[1..] {
        same_lattice(first, c)?;
    }
    Ok(first.lattice)
}

fn check_weights(pi: &[f64], k: usize) -> Result<()> {
    if pi.len() != k {
        return Err(Error::contract(format!("{} weights for {k} components", pi.len())));
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|&p| p.is_nan() || p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("weights {pi:?} are not on the simplex")));
    }
    Ok(())
}

/// Shannon entropy `-sum pi log pi` in nats.
pub fn entropy(pi: &[f64]) -> f64 {
    -pi.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Optimal classifier values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOracle {
    /// `values[k][i]` is `C*_k` at cell `i`.
    pub values: Vec<Vec<f64>>,
    /// Cells where every component vanishes; those get `1/K`.
    pub degenerate: Vec<bool>,
}

pub fn optimal_classifier(components: &[GridDensity], pi: &[f64]) -> Result<ClassifierOracle> {
    let lattice = shared_lattice(components)?;
    let k = components.len();
    check_weights(pi, k)?;
    let n = lattice.len();
    let mut values = vec![vec![0.0; n]; k];
    let mut degenerate = vec![false; n];
    for i in 0..n {
        let denom: f64 = components.iter().zip(pi).map(|(c, &w)| w * c.values[i]).sum();
        if denom < DENSITY_FLOOR {
            degenerate[i] = true;
            for row in values.iter_mut() {
                row[i] = 1.0 / k as f64;
            }
        } else {
            for (j, row) in values.iter_mut().enumerate() {
                row[i] = pi[j] * components[j].values[i] / denom;
            }
        }
    }
    Ok(ClassifierOracle { values, degenerate })
}

/// Optimal discriminator values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOracle {
    pub values: Vec<f64>,
    /// `1 - D*` computed as `p_model / (p_data + p_model)`, exact where `D*` rounds to 1.
    pub complement: Vec<f64>,
    /// Cells where both densities vanish; those get 0.5.
    pub degenerate: Vec<bool>,
}

pub fn optimal_discriminator(p_data: &GridDensity, p_model: &GridDensity) -> Result<DiscriminatorOracle> {
    same_lattice(p_data, p_model)?;
    let n = p_data.values.len();
    let mut values = vec![0.5; n];
    let mut complement = vec![0.5; n];
    let mut degenerate = vec![false; n];
    for i in 0..n {
        let (a, b) = (p_data.values[i], p_model.values[i]);
        if a + b < DENSITY_FLOOR {
            degenerate[i] = true;
        } else {
            values[i] = a / (a + b);
            complement[i] = b / (a + b);
        }
    }
    Ok(DiscriminatorOracle {
        values,
        complement,
        degenerate,
    })
}

/// `E_p[f]` over cells where `p` is above the floor.
fn expect(p: &GridDensity, f: impl Fn(usize) -> f64) -> f64 {
    let area = p.lattice.cell_area();
    p.values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= DENSITY_FLOOR)
        .map(|(i, &v)| v * f(i))
        .sum::<f64>()
        * area
}

/// `KL(p || q)` by quadrature. Infinite when `q` vanishes on the support of `p`.
pub fn kl(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    same_lattice(p, q)?;
    Ok(expect(p, |i| (p.values[i] / q.values[i]).ln()))
}

/// `(KL(p||m) + KL(q||m)) / 2` with `m = (p + q) / 2`.
pub fn jsd_pair(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    same_lattice(p, q)?;
    let m = |i: usize| 0.5 * (p.values[i] + q.values[i]);
    let a = expect(p, |i| (p.values[i] / m(i)).ln());
    let b = expect(q, |i| (q.values[i] / m(i)).ln());
    Ok(0.5 * (a + b))
}

/// `sum_k pi_k E_{p_k}[log C_k] - sum_k pi_k log pi_k` for an arbitrary
/// classifier `c` given as `c[k][i]`.
fn classifier_term(components: &[GridDensity], pi: &[f64], c: &[Vec<f64>]) -> f64 {
    components
        .iter()
        .zip(pi)
        .zip(c)
        .filter(|((_, &w), _)| w > 0.0)
        .map(|((p, &w), ck)| w * expect(p, |i| ck[i].ln()))
        .sum()
}

/// Generalized Jensen-Shannon divergence among components with weights `pi`.
pub fn jsd_mixture(components: &[GridDensity], pi: &[f64]) -> Result<f64> {
    let c = optimal_classifier(components, pi)?;
    Ok(classifier_term(components, pi, &c.values) + entropy(pi))
}

/// Sum of the discriminator terms `E_data[log D] + E_model[log(1 - D)]`.
fn discriminator_term(p_data: &GridDensity, p_model: &GridDensity, d: &[f64], one_minus_d: &[f64]) -> f64 {
    expect(p_data, |i| d[i].ln()) + expect(p_model, |i| one_minus_d[i].ln())
}

/// `2 JSD(p_data, p_model) - beta JSD_pi`, the objective minimized by the generators.
pub fn objective_value(p_data: &GridDensity, components: &[GridDensity], pi: &[f64], beta: f64) -> Result<f64> {
    let model = GridDensity::mixture(components, pi)?;
    Ok(2.0 * jsd_pair(p_data, &model)? - beta * jsd_mixture(components, pi)?)
}

/// `2 JSD(p_data, p_model) - beta JSD_pi - log 4 - beta sum_k pi_k log pi_k`.
pub fn closed_form_value(p_data: &GridDensity, components: &[GridDensity], pi: &[f64], beta: f64) -> Result<f64> {
    Ok(objective_value(p_data, components, pi, beta)? - 4f64.ln() + beta * entropy(pi))
}

/// `J(G, C*, D*)` evaluated directly from the optimal networks:
/// `E_data[log D*] + E_model[log(1 - D*)] - beta sum_k pi_k E_{p_k}[log C*_k]`.
pub fn direct_value(p_data: &GridDensity, components: &[GridDensity], pi: &[f64], beta: f64) -> Result<f64> {
    let model = GridDensity::mixture(components, pi)?;
    same_lattice(p_data, &model)?;
    let d = optimal_discriminator(p_data, &model)?;
    let c = optimal_classifier(components, pi)?;
    let class: f64 = components
        .iter()
        .zip(pi)
        .zip(&c.values)
        .map(|((p, &w), ck)| w * expect(p, |i| ck[i].ln()))
        .sum();
    Ok(discriminator_term(p_data, &model, &d.values, &d.complement) - beta * class)
}

/// Change in `sum_k pi_k E_{p_k}[log C_k]` when `C*` is replaced by a random
/// simplex-preserving perturbation of size `magnitude` per cell. Negative
/// means the perturbation is worse.
pub fn classifier_probe<R: Rng + ?Sized>(
    components: &[GridDensity],
    pi: &[f64],
    magnitude: f64,
    rng: &mut R,
) -> Result<f64> {
    let oracle = optimal_classifier(components, pi)?;
    let k = components.len();
    let n = components[0].lattice.len();
    let mut perturbed = oracle.values.clone();
    let mut delta = vec![0.0; k];
    for i in 0..n {
        for d in delta.iter_mut() {
            *d = rng.random_range(-1.0..1.0);
        }
        let mean = delta.iter().sum::<f64>() / k as f64;
        let peak = delta.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            continue;
        }
        let mut scale = magnitude / peak;
        // Shrink so every entry stays strictly positive.
        for (j, d) in delta.iter().enumerate() {
            let step = (d - mean) * scale;
            let c = oracle.values[j][i];
            if step < 0.0 && c + step <= 0.0 {
                scale = scale.min(0.5 * c / (mean - d));
            }
        }
        for ((row, base), d) in perturbed.iter_mut().zip(&oracle.values).zip(&delta) {
            row[i] = base[i] + (d - mean) * scale;
        }
    }
    Ok(classifier_term(components, pi, &perturbed) - classifier_term(components, pi, &oracle.values))
}

/// Change in `E_data[log D] + E_model[log(1 - D)]` when `D*` is replaced by a
/// random perturbation of size `magnitude` per cell, kept inside `(0, 1)`.
pub fn discriminator_probe<R: Rng + ?Sized>(
    p_data: &GridDensity,
    p_model: &GridDensity,
    magnitude: f64,
    rng: &mut R,
) -> Result<f64> {
    let oracle = optimal_discriminator(p_data, p_model)?;
    let (perturbed, perturbed_complement): (Vec<f64>, Vec<f64>) = oracle
        .values
        .iter()
        .zip(&oracle.complement)
        .map(|(&d, &e)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let step = sign * magnitude.min(0.5 * if sign > 0.0 { e } else { d });
            (d + step, e - step)
        })
        .unzip();
    Ok(discriminator_term(p_data, p_model, &perturbed, &perturbed_complement)
        - discriminator_term(p_data, p_model, &oracle.values, &oracle.complement))
}

/// Gaussian kernel density estimate on the lattice.
///
/// Each point deposits `weight` of mass spread over the cells within four
/// bandwidths of it, with the kernel normalized over those cells, so the
/// estimate is exactly linear in the weighted points. Points whose window
/// misses the lattice are dropped.
pub fn kde(lattice: Lattice, points: &Tensor<f32>, weights: &[f64], bandwidth: f64) -> Result<GridDensity> {
    lattice.validate()?;
    if points.cols() != 2 || weights.len() != points.rows() {
        return Err(Error::contract(format!(
            "kde needs n x 2 points with n weights (got {:?} and {})",
            points.shape(),
            weights.len()
        )));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::contract("kde bandwidth must be positive"));
    }
    let (hx, hy) = lattice.spacing();
    let mut values = vec![0.0; lattice.len()];
    let reach = 4.0 * bandwidth;
    let axis = |c: f64, lo: f64, h: f64, n: usize| -> (usize, Vec<f64>) {
        let first = (((c - reach - lo) / h).floor().max(0.0) as usize).min(n);
        let last = (((c + reach - lo) / h).ceil().max(0.0) as usize).min(n);
        let w: Vec<f64> = (first..last)
            .map(|j| {
                let t = (lo + (j as f64 + 0.5) * h - c) / bandwidth;
                (-0.5 * t * t).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        (first, if s > 0.0 { w.into_iter().map(|v| v / s).collect() } else { Vec::new() })
    };
    for (r, &wt) in weights.iter().enumerate() {
        let (px, py) = (points.get(r, 0) as f64, points.get(r, 1) as f64);
        let (x0, kx) = axis(px, lattice.x_min, hx, lattice.nx);
        let (y0, ky) = axis(py, lattice.y_min, hy, lattice.ny);
        for (dy, &wy) in ky.iter().enumerate() {
            let row = (y0 + dy) * lattice.nx + x0;
            for (dx, &wx) in kx.iter().enumerate() {
                values[row + dx] += wt * wy * wx;
            }
        }
    }
    GridDensity::normalized(lattice, values)
}

/// Which distribution a generator KDE should estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum KdeSource {
    Generator(usize),
    /// The mixture with the given weights.
    Mixture(Vec<f64>),
}

/// Kernel density estimate of a trained generator (or mixture) from
/// `n_samples` draws. Mixture draws are split across generators in
/// proportion to `pi` and each generator's points carry weight
/// `pi_k / n_k`.
pub fn model_density_kde(
    bank: &GeneratorBank<f32>,
    source: &KdeSource,
    n_samples: usize,
    bandwidth: f64,
    lattice: Lattice,
    prior: NoisePrior,
    seed: u64,
) -> Result<GridDensity> {
    if n_samples < 1000 {
        return Err(Error::contract("model_density_kde needs at least 1000 samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match source {
        KdeSource::Generator(k) => {
            let z = prior.sample_with(n_samples, bank.noise_dim(), &mut rng);
            let x = bank.generate(*k, &z)?;
            kde(lattice, &x, &vec![1.0 / n_samples as f64; n_samples], bandwidth)
        }
        KdeSource::Mixture(pi) => {
            check_weights(pi, bank.num_generators())?;
            let mut rows = Vec::new();
            let mut weights = Vec::new();
            for (k, &w) in pi.iter().enumerate().filter(|(_, &w)| w > 0.0) {
                let nk = ((w * n_samples as f64).round() as usize).max(1);
                let z = prior.sample_with(nk, bank.noise_dim(), &mut rng);
                let x = bank.generate(k, &z)?;
                rows.push(x);
                weights.extend(std::iter::repeat_n(w / nk as f64, nk));
            }
            let points = Tensor::concat_rows(&rows.iter().collect::<Vec<_>>())?;
            kde(lattice, &points, &weights, bandwidth)
        }
    }
}

/// Symmetric KL between two lattice densities, smoothed like the histogram metric.
pub fn grid_symmetric_kl(p: &GridDensity, q: &GridDensity, smoothing: f64) -> Result<f64> {
    same_lattice(p, q)?;
    symmetric_kl(&p.histogram()?, &q.histogram()?, smoothing)
}

/// Isotropic 2D Gaussian density.
pub fn gaussian_density(x: f64, y: f64, mx: f64, my: f64, std: f64) -> f64 {
    let (dx, dy) = (x - mx, y - my);
    let var = std * std;
    (-(dx * dx + dy * dy) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
}

/// The `k`th ring component restricted to the cells whose nearest mode is `k`.
/// Different `k` have disjoint supports.
pub fn separated_ring_component(lattice: Lattice, spec: &RingSpec, k: usize) -> Result<GridDensity> {
    spec.validate()?;
    let means = spec.means();
    let std = spec.std();
    GridDensity::from_fn(lattice, |x, y| {
        let nearest = means
            .iter()
            .enumerate()
            .map(|(j, &(mx, my))| (j, (x - mx).powi(2) + (y - my).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j);
        if nearest == Some(k) {
            gaussian_density(x, y, means[k].0, means[k].1, std)
        } else {
            0.0
        }
    })
}

/// A random smooth density: a weighted sum of one to three Gaussians with
/// means in `[-1.2, 1.2]^2` and standard deviations in `[0.2, 0.4]`.
pub fn random_smooth_density<R: Rng + ?Sized>(lattice: Lattice, rng: &mut R) -> Result<GridDensity> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.2..1.0),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(0.2..0.4),
            )
        })
        .collect();
    GridDensity::from_fn(lattice, |x, y| {
        bumps
            .iter()
            .map(|&(w, mx, my, s)| w * gaussian_density(x, y, mx, my, s))
            .sum()
    })
}

/// Random simplex weights from normalized draws in `[0.2, 1)`.
pub fn random_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Settings for [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub lattice: Lattice,
    pub beta: f64,
    /// Randomized density instances per check.
    pub trials: usize,
    /// Random perturbations per instance in the optimality probes.
    pub probes: usize,
    pub probe_magnitude: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub kde_bandwidth: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            lattice: Lattice::default(),
            beta: 0.125,
            trials: 10,
            probes: 10,
            probe_magnitude: 1e-2,
            tolerance: 1e-6,
            seed: 0,
            kde_bandwidth: 0.05,
        }
    }
}

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    /// The computed value of interest (for example `JSD_pi`).
    pub value: f64,
    /// Achieved error, or for probes the smallest objective decrease.
    pub achieved: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} value={:.6} achieved={:.3e} tolerance={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.achieved,
            self.tolerance
        )
    }
}

fn random_instance<R: Rng + ?Sized>(lattice: Lattice, rng: &mut R) -> Result<(GridDensity, Vec<GridDensity>, Vec<f64>)> {
    let k = rng.random_range(2..=5);
    let data = random_smooth_density(lattice, rng)?;
    let comps = (0..k)
        .map(|_| random_smooth_density(lattice, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((data, comps, random_weights(k, rng)))
}

/// Optimality probes for `C*` and `D*`. Reports the smallest decrease seen
/// over `trials x probes` perturbations and the largest `|sum_k C*_k - 1|`.
pub fn check_optimality(config: &OracleConfig) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut worst_c = f64::INFINITY;
    let mut worst_d = f64::INFINITY;
    let mut worst_sum: f64 = 0.0;
    for _ in 0..config.trials {
        let (data, comps, pi) = random_instance(config.lattice, &mut rng)?;
        let model = GridDensity::mixture(&comps, &pi)?;
        let c = optimal_classifier(&comps, &pi)?;
        for i in 0..config.lattice.len() {
            let s: f64 = c.values.iter().map(|row| row[i]).sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
        for _ in 0..config.probes {
            worst_c = worst_c.min(-classifier_probe(&comps, &pi, config.probe_magnitude, &mut rng)?);
            worst_d = worst_d.min(-discriminator_probe(&data, &model, config.probe_magnitude, &mut rng)?);
        }
    }
    Ok(vec![
        OracleCheck {
            name: "classifier_sums_to_one",
            value: 1.0,
            achieved: worst_sum,
            tolerance: 1e-9,
            pass: worst_sum <= 1e-9,
        },
        OracleCheck {
            name: "classifier_optimality",
            value: worst_c,
            achieved: worst_c,
            tolerance: 0.0,
            pass: worst_c > 0.0,
        },
        OracleCheck {
            name: "discriminator_optimality",
            value: worst_d,
            achieved: worst_d,
            tolerance: 0.0,
            pass: worst_d > 0.0,
        },
    ])
}

/// Compares `J(G, C*, D*)` evaluated directly on the configured lattice with
/// the closed form evaluated on a lattice refined twice along each axis. The
/// reported error covers both the algebraic identity and discretization.
pub fn check_value_identity(config: &OracleConfig) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let fine = config.lattice.refined(2);
    let mut worst: f64 = 0.0;
    let mut last = 0.0;
    for _ in 0..config.trials {
        // Draw parameters once, evaluate on both lattices.
        let seed = rng.random::<u64>();
        let (data, comps, pi) = random_instance(config.lattice, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let (fdata, fcomps, fpi) = random_instance(fine, &mut ChaCha8Rng::seed_from_u64(seed))?;
        debug_assert_eq!(pi, fpi);
        let direct = direct_value(&data, &comps, &pi, config.beta)?;
        let closed = closed_form_value(&fdata, &fcomps, &fpi, config.beta)?;
        let err = (direct - closed).abs();
        if err.is_nan() || err > worst {
            worst = err;
        }
        last = direct;
    }
    Ok(OracleCheck {
        name: "value_identity",
        value: last,
        achieved: worst,
        tolerance: config.tolerance,
        pass: worst <= config.tolerance,
    })
}

/// Equilibrium with eight disjoint ring components, generators equal to the
/// components and uniform weights: the objective equals `-beta H(pi)` and
/// `JSD_pi` equals `H(pi)`. Also checks `JSD_pi <= H(pi)` on random
/// overlapping instances.
pub fn check_equilibrium(config: &OracleConfig) -> Result<Vec<OracleCheck>> {
    let spec = RingSpec::default();
    let k = spec.n_modes;
    let comps = (0..k)
        .map(|j| separated_ring_component(config.lattice, &spec, j))
        .collect::<Result<Vec<_>>>()?;
    let pi = vec![1.0 / k as f64; k];
    let data = GridDensity::mixture(&comps, &pi)?;
    let h = entropy(&pi);
    let objective = objective_value(&data, &comps, &pi, config.beta)?;
    let jsd = jsd_mixture(&comps, &pi)?;
    let obj_err = (objective + config.beta * h).abs();
    let jsd_err = (jsd - h).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut excess = f64::NEG_INFINITY;
    for _ in 0..config.trials {
        let (_, comps, pi) = random_instance(config.lattice, &mut rng)?;
        excess = excess.max(jsd_mixture(&comps, &pi)? - entropy(&pi));
    }
    Ok(vec![
        OracleCheck {
            name: "equilibrium_objective",
            value: objective,
            achieved: obj_err,
            tolerance: config.tolerance,
            pass: obj_err <= config.tolerance,
        },
        OracleCheck {
            name: "equilibrium_jsd_pi",
            value: jsd,
            achieved: jsd_err,
            tolerance: config.tolerance,
            pass: jsd_err <= config.tolerance,
        },
        OracleCheck {
            name: "jsd_pi_entropy_bound",
            value: excess,
            achieved: excess.max(0.0),
            tolerance: 1e-9,
            pass: excess <= 1e-9,
        },
    ])
}

/// Runs every check.
pub fn verify(config: &OracleConfig) -> Result<Vec<OracleCheck>> {
    config.lattice.validate()?;
    let mut out = check_optimality(config)?;
    out.push(check_value_identity(config)?);
    out.extend(check_equilibrium(config)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Lattice {
        Lattice::square(3.0, 60)
    }

    fn bump(l: Lattice, mx: f64, my: f64, s: f64) -> GridDensity {
        GridDensity::from_fn(l, |x, y| gaussian_density(x, y, mx, my, s)).unwrap()
    }

    fn box_density(l: Lattice, x0: f64, x1: f64) -> GridDensity {
        GridDensity::from_fn(l, |x, _| if (x0..x1).contains(&x) { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn lattice_geometry() {
        let l = Lattice::default();
        assert_eq!(l.len(), 40_000);
        assert!((l.cell_area() - 0.0009).abs() < 1e-15);
        let (x, y) = l.center(0);
        assert!((x + 2.985).abs() < 1e-12 && (y + 2.985).abs() < 1e-12);
        let (x, y) = l.center(201);
        assert!((x + 2.955).abs() < 1e-12 && (y + 2.955).abs() < 1e-12);
        assert!(Lattice::square(3.0, 0).validate().is_err());
    }

    #[test]
    fn densities_are_normalized() {
        let d = bump(small(), 0.3, -0.2, 0.5);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!(d.values().iter().all(|&v| v >= 0.0));
        assert!(GridDensity::normalized(small(), vec![0.0; 3600]).is_err());
        assert!(GridDensity::normalized(small(), vec![1.0; 10]).is_err());
    }

    #[test]
    fn lattice_mismatch_is_an_error() {
        let a = bump(small(), 0.0, 0.0, 0.5);
        let b = bump(Lattice::square(3.0, 30), 0.0, 0.0, 0.5);
        assert!(matches!(jsd_pair(&a, &b), Err(Error::LatticeMismatch(_))));
        assert!(matches!(optimal_discriminator(&a, &b), Err(Error::LatticeMismatch(_))));
        assert!(matches!(optimal_classifier(&[a, b], &[0.5, 0.5]), Err(Error::LatticeMismatch(_))));
    }

    #[test]
    fn identical_components_give_half() {
        let a = bump(small(), 0.0, 0.0, 0.5);
        let c = optimal_classifier(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
        for row in &c.values {
            assert!(row.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
        let d = optimal_discriminator(&a, &a).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.5));
        assert_eq!(jsd_pair(&a, &a).unwrap(), 0.0);
        assert!(jsd_mixture(&[a.clone(), a.clone(), a], &[0.2, 0.3, 0.5]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn disjoint_supports() {
        let a = box_density(small(), -2.0, 0.0);
        let b = box_density(small(), 0.0, 2.0);
        let c = optimal_classifier(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        for i in 0..small().len() {
            let ind = (a.values()[i] > 0.0) as u8 as f64;
            if !c.degenerate[i] {
                assert_eq!(c.values[0][i], ind);
            } else {
                assert_eq!(c.values[0][i], 0.5);
            }
        }
        assert!(c.degenerate.iter().any(|&d| d));
        assert!((jsd_pair(&a, &b).unwrap() - 2f64.ln()).abs() < 1e-12);
        let d = optimal_discriminator(&a, &b).unwrap();
        for i in 0..small().len() {
            if a.values()[i] > 0.0 {
                assert_eq!(d.values[i], 1.0);
            }
        }
    }

    #[test]
    fn discriminator_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = random_smooth_density(small(), &mut rng).unwrap();
            let b = random_smooth_density(small(), &mut rng).unwrap();
            let d = optimal_discriminator(&a, &b).unwrap();
            assert!(d.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn two_component_jsd_matches_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let a = random_smooth_density(small(), &mut rng).unwrap();
            let b = random_smooth_density(small(), &mut rng).unwrap();
            let pair = jsd_pair(&a, &b).unwrap();
            let mix = jsd_mixture(&[a, b], &[0.5, 0.5]).unwrap();
            assert!((pair - mix).abs() < 1e-6, "{pair} vs {mix}");
        }
    }

    #[test]
    fn jsd_of_unit_gaussians_is_resolution_stable() {
        let l = Lattice::default();
        let at = |l: Lattice| {
            let p = bump(l, -0.5, 0.0, 1.0);
            let q = bump(l, 0.5, 0.0, 1.0);
            jsd_pair(&p, &q).unwrap()
        };
        let coarse = at(l);
        let fine = at(l.refined(4));
        assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
    }

    #[test]
    fn single_component_equals_data() {
        let a = bump(small(), 0.2, 0.1, 0.4);
        let v = objective_value(&a, std::slice::from_ref(&a), &[1.0], 0.125).unwrap();
        assert!(v.abs() < 1e-12);
        let closed = closed_form_value(&a, std::slice::from_ref(&a), &[1.0], 0.125).unwrap();
        assert!((closed + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_value_for_eight_disjoint_modes() {
        let config = OracleConfig {
            trials: 2,
            ..OracleConfig::default()
        };
        let checks = check_equilibrium(&config).unwrap();
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        assert!((checks[0].value + 0.25993).abs() < 1e-5);
        assert!((checks[1].value - 2.07944).abs() < 1e-5);
    }

    #[test]
    fn probes_decrease_objectives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comps: Vec<_> = (0..3).map(|_| random_smooth_density(small(), &mut rng).unwrap()).collect();
        let pi = random_weights(3, &mut rng);
        let data = random_smooth_density(small(), &mut rng).unwrap();
        let model = GridDensity::mixture(&comps, &pi).unwrap();
        for _ in 0..5 {
            assert!(classifier_probe(&comps, &pi, 1e-2, &mut rng).unwrap() < 0.0);
            assert!(discriminator_probe(&data, &model, 1e-2, &mut rng).unwrap() < 0.0);
        }
    }

    #[test]
    fn coarse_lattice_fails_identity() {
        let config = OracleConfig {
            lattice: Lattice::square(3.0, 10),
            trials: 3,
            ..OracleConfig::default()
        };
        let check = check_value_identity(&config).unwrap();
        assert!(!check.pass && check.achieved > 1e-6, "{check:?}");
    }

    #[test]
    fn kde_concentrates_around_a_single_point() {
        let l = Lattice::default();
        let points = Tensor::from_vec(1000, 2, [0.5f32, -0.4].repeat(1000)).unwrap();
        let d = kde(l, &points, &vec![1e-3; 1000], 0.05).unwrap();
        let area = l.cell_area();
        let near: f64 = (0..l.len())
            .filter(|&i| {
                let (x, y) = l.center(i);
                (x - 0.5).hypot(y + 0.4) <= 0.2
            })
            .map(|i| d.values()[i] * area)
            .sum();
        assert!(near > 0.99, "{near}");
    }

    #[test]
    fn kde_is_linear_in_weighted_points() {
        let l = small();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = RingSpec::default().sample_with(300, &mut rng);
        let b = RingSpec::default().sample_with(200, &mut rng);
        let ka = kde(l, &a, &vec![1.0 / 300.0; 300], 0.1).unwrap();
        let kb = kde(l, &b, &vec![1.0 / 200.0; 200], 0.1).unwrap();
        let both = Tensor::concat_rows(&[&a, &b]).unwrap();
        let mut w = vec![0.3 / 300.0; 300];
        w.extend(vec![0.7 / 200.0; 200]);
        let kab = kde(l, &both, &w, 0.1).unwrap();
        let expected = GridDensity::mixture(&[ka, kb], &[0.3, 0.7]).unwrap();
        for (x, y) in kab.values().iter().zip(expected.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let l = Lattice::square(1.0, 4);
        bump(l, 0.0, 0.0, 0.5).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert_eq!(text.lines().next(), Some("x,y,value"));
    }
}
