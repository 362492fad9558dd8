//! Sample-quality metrics on normalized 2D histograms.
//!
//! - [`symmetric_kl`]: `KL(p||q) + KL(q||p)` after additive smoothing
//! - [`wasserstein`]: entropic optimal transport with a Euclidean ground cost,
//!   solved by log-stabilized Sinkhorn scaling
//! - [`mode_coverage`]: how many ring modes receive high-quality samples
//!
//! All logarithms are natural, so divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::data::RingSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Regular binning of a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub bins_x: usize,
    pub bins_y: usize,
}

impl Default for HistGrid {
    fn default() -> Self {
        HistGrid {
            x_min: -3.0,
            x_max: 3.0,
            y_min: -3.0,
            y_max: 3.0,
            bins_x: 64,
            bins_y: 64,
        }
    }
}

impl HistGrid {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::contract(format!("degenerate histogram grid {self:?}")));
        }
        if self.bins_x == 0 || self.bins_y == 0 {
            return Err(Error::contract("histogram grid needs at least one bin per axis"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bins_x * self.bins_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_width(&self) -> (f64, f64) {
        (
            (self.x_max - self.x_min) / self.bins_x as f64,
            (self.y_max - self.y_min) / self.bins_y as f64,
        )
    }

    /// Center of flat bin index `i` (row-major over `y`, then `x`).
    pub fn center(&self, i: usize) -> (f64, f64) {
        let (wx, wy) = self.bin_width();
        let (iy, ix) = (i / self.bins_x, i % self.bins_x);
        (
            self.x_min + (ix as f64 + 0.5) * wx,
            self.y_min + (iy as f64 + 0.5) * wy,
        )
    }

    /// Bin of `(x, y)` with out-of-range coordinates clamped to the edge
    /// bins. The flag reports whether clamping happened.
    pub fn locate(&self, x: f64, y: f64) -> (usize, bool) {
        let (wx, wy) = self.bin_width();
        let fx = ((x - self.x_min) / wx).floor();
        let fy = ((y - self.y_min) / wy).floor();
        let clamp = |f: f64, n: usize| -> (usize, bool) {
            if f.is_nan() || f < 0.0 {
                (0, true)
            } else if f >= n as f64 {
                (n - 1, true)
            } else {
                (f as usize, false)
            }
        };
        let (ix, cx) = clamp(fx, self.bins_x);
        let (iy, cy) = clamp(fy, self.bins_y);
        (iy * self.bins_x + ix, cx || cy)
    }
}

/// Normalized bin masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub grid: HistGrid,
    pub mass: Vec<f64>,
    /// Number of input points that fell outside the grid and were clamped.
    pub clamped: usize,
}

impl Histogram2D {
    pub fn from_points(points: &Tensor<f32>, grid: HistGrid) -> Result<Self> {
        grid.validate()?;
        if points.cols() != 2 {
            return Err(Error::Shape {
                op: "histogram2d",
                left: points.shape(),
                right: (points.rows(), 2),
            });
        }
        let n = points.rows();
        if n == 0 {
            return Err(Error::contract("histogram needs at least one point"));
        }
        let mut counts = vec![0usize; grid.len()];
        let mut clamped = 0;
        for r in 0..n {
            let (i, c) = grid.locate(points.get(r, 0) as f64, points.get(r, 1) as f64);
            counts[i] += 1;
            clamped += c as usize;
        }
        let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Histogram2D {
            grid,
            mass,
            clamped,
        })
    }

    /// Builds a histogram from raw nonnegative masses, normalizing them.
    pub fn from_mass(grid: HistGrid, mass: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if mass.len() != grid.len() {
            return Err(Error::contract(format!(
                "{} masses for {} bins",
                mass.len(),
                grid.len()
            )));
        }
        if mass.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::contract("histogram masses must be finite and nonnegative"));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::contract("histogram has zero total mass"));
        }
        Ok(Histogram2D {
            grid,
            mass: mass.into_iter().map(|m| m / total).collect(),
            clamped: 0,
        })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}

pub fn histogram2d(points: &Tensor<f32>, grid: HistGrid) -> Result<Histogram2D> {
    Histogram2D::from_points(points, grid)
}

fn same_grid(a: &Histogram2D, b: &Histogram2D) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::LatticeMismatch(format!(
            "histogram grids differ: {:?} vs {:?}",
            a.grid, b.grid
        )));
    }
    Ok(())
}

/// Default additive smoothing for [`symmetric_kl`].
pub const KL_SMOOTHING: f64 = 1e-9;

/// `KL(p||q) + KL(q||p)` after adding `smoothing` to every bin and renormalizing.
pub fn symmetric_kl(h1: &Histogram2D, h2: &Histogram2D, smoothing: f64) -> Result<f64> {
    same_grid(h1, h2)?;
    let smooth = |m: &[f64]| -> Vec<f64> {
        let total: f64 = m.iter().map(|v| v + smoothing).sum();
        m.iter().map(|v| (v + smoothing) / total).collect()
    };
    let p = smooth(&h1.mass);
    let q = smooth(&h2.mass);
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        if pi > 0.0 && qi > 0.0 {
            total += (pi - qi) * (pi.ln() - qi.ln());
        }
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    /// Entropic regularization strength, in ground-cost units.
    pub reg: f64,
    pub max_iters: usize,
    /// L1 marginal violation at which iteration stops.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            reg: 0.05,
            max_iters: 2000,
            tol: 1e-6,
        }
    }
}

/// Result of one Sinkhorn solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportSolution {
    /// Transport cost of the entropic plan, `<P, C>`.
    pub cost: f64,
    /// Regularized objective `<P, C> + reg * KL(P || a x b)`.
    pub objective: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

/// Dot product with four independent partial sums, which lets the compiler
/// vectorize it.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Log-stabilized Sinkhorn between weight vectors `a` (n) and `b` (m) with a
/// row-major `n x m` cost matrix.
///
/// Scalings are periodically absorbed into dual potentials so the kernel
/// never overflows.
pub fn sinkhorn(a: &[f64], b: &[f64], cost: &[f64], config: &SinkhornConfig) -> TransportSolution {
    let (n, m) = (a.len(), b.len());
    assert_eq!(cost.len(), n * m);
    let reg = config.reg;
    const ABSORB: f64 = 1e50;

    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kernel = vec![0.0; n * m];
    let rebuild = |kernel: &mut [f64], alpha: &[f64], beta: &[f64]| {
        for i in 0..n {
            let row = &mut kernel[i * m..(i + 1) * m];
            let crow = &cost[i * m..(i + 1) * m];
            for j in 0..m {
                row[j] = ((alpha[i] + beta[j] - crow[j]) / reg).exp();
            }
        }
    };
    rebuild(&mut kernel, &alpha, &beta);

    let mut ktu = vec![0.0; m];
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        // One pass over the kernel: u <- a / K v, accumulating K^T u as we go.
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let row = &kernel[i * m..(i + 1) * m];
            u[i] = a[i] / dot(row, &v);
            let ui = u[i];
            for (acc, k) in ktu.iter_mut().zip(row) {
                *acc += k * ui;
            }
        }
        for j in 0..m {
            v[j] = b[j] / ktu[j];
        }

        let blown = u.iter().chain(&v).any(|x| !x.is_finite() || *x > ABSORB);
        if blown {
            for i in 0..n {
                alpha[i] += reg * u[i].ln();
                u[i] = 1.0;
            }
            for j in 0..m {
                beta[j] += reg * v[j].ln();
                v[j] = 1.0;
            }
            rebuild(&mut kernel, &alpha, &beta);
        }

        if iterations % 10 == 0 || iterations == config.max_iters {
            // Columns match exactly after the v-update; measure the rows.
            err = (0..n)
                .map(|i| (u[i] * dot(&kernel[i * m..(i + 1) * m], &v) - a[i]).abs())
                .sum();
            if err < config.tol {
                break;
            }
        }
    }

    let mut transport = 0.0;
    let mut kl = 0.0;
    for i in 0..n {
        if a[i] <= 0.0 {
            continue;
        }
        let row = &kernel[i * m..(i + 1) * m];
        for j in 0..m {
            let p = u[i] * row[j] * v[j];
            if p > 0.0 && b[j] > 0.0 {
                transport += p * cost[i * m + j];
                kl += p * (p / (a[i] * b[j])).ln();
            }
        }
    }
    TransportSolution {
        cost: transport,
        objective: transport + reg * kl,
        iterations,
        marginal_error: err,
        converged: err < config.tol,
    }
}

/// Nonzero bins of a histogram: (flat index, mass).
fn support(h: &Histogram2D) -> Vec<(usize, f64)> {
    h.mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, &m)| (i, m))
        .collect()
}

fn euclidean_cost(grid: &HistGrid, rows: &[(usize, f64)], cols: &[(usize, f64)]) -> Vec<f64> {
    let rc: Vec<(f64, f64)> = rows.iter().map(|(i, _)| grid.center(*i)).collect();
    let cc: Vec<(f64, f64)> = cols.iter().map(|(i, _)| grid.center(*i)).collect();
    let mut cost = Vec::with_capacity(rc.len() * cc.len());
    for (x1, y1) in &rc {
        for (x2, y2) in &cc {
            cost.push(((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt());
        }
    }
    cost
}

/// Entropic transport between two histograms restricted to their supports.
pub fn transport(h1: &Histogram2D, h2: &Histogram2D, config: &SinkhornConfig) -> Result<TransportSolution> {
    same_grid(h1, h2)?;
    if h1.mass == h2.mass {
        return self_transport(h1, config);
    }
    let s1 = support(h1);
    let s2 = support(h2);
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::contract("wasserstein: empty histogram"));
    }
    let cost = euclidean_cost(&h1.grid, &s1, &s2);
    let a: Vec<f64> = s1.iter().map(|(_, m)| *m).collect();
    let b: Vec<f64> = s2.iter().map(|(_, m)| *m).collect();
    Ok(sinkhorn(&a, &b, &cost, config))
}

/// Entropic transport of a histogram onto itself.
///
/// Uses the symmetric fixed point `u <- sqrt(u * a / (K u))`, which converges
/// in a few dozen iterations where alternating updates oscillate. Falls back to
/// [`sinkhorn`] if the scalings leave the representable range.
pub fn self_transport(h: &Histogram2D, config: &SinkhornConfig) -> Result<TransportSolution> {
    let s = support(h);
    if s.is_empty() {
        return Err(Error::contract("wasserstein: empty histogram"));
    }
    let cost = euclidean_cost(&h.grid, &s, &s);
    let a: Vec<f64> = s.iter().map(|(_, m)| *m).collect();
    Ok(symmetric_sinkhorn(&a, &cost, config).unwrap_or_else(|| sinkhorn(&a, &a, &cost, config)))
}

fn symmetric_sinkhorn(a: &[f64], cost: &[f64], config: &SinkhornConfig) -> Option<TransportSolution> {
    let n = a.len();
    let kernel: Vec<f64> = cost.iter().map(|c| (-c / config.reg).exp()).collect();
    let mut u = a.to_vec();
    let mut ku = vec![0.0; n];
    let apply = |u: &[f64], ku: &mut [f64]| {
        for i in 0..n {
            ku[i] = dot(&kernel[i * n..(i + 1) * n], u);
        }
    };
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        apply(&u, &mut ku);
        err = (0..n).map(|i| (u[i] * ku[i] - a[i]).abs()).sum();
        if !err.is_finite() {
            return None;
        }
        if err < config.tol {
            break;
        }
        for i in 0..n {
            u[i] = (u[i] * a[i] / ku[i]).sqrt();
        }
    }
    let mut transport = 0.0;
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = u[i] * kernel[i * n + j] * u[j];
            if p > 0.0 {
                transport += p * cost[i * n + j];
                kl += p * (p / (a[i] * a[j])).ln();
            }
        }
    }
    Some(TransportSolution {
        cost: transport,
        objective: transport + config.reg * kl,
        iterations,
        marginal_error: err,
        converged: err < config.tol,
    })
}

/// Wasserstein estimate returned by [`wasserstein`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinEstimate {
    pub distance: f64,
    pub converged: bool,
}

/// Debiased entropic Wasserstein distance between two histograms:
/// `<P_ab, C> - (<P_aa, C> + <P_bb, C>) / 2`, where `P_xy` is the Sinkhorn plan
/// between `x` and `y`. Subtracting the self-transport costs removes the
/// entropic blur, so identical inputs give exactly zero.
pub fn wasserstein(h1: &Histogram2D, h2: &Histogram2D, config: &SinkhornConfig) -> Result<WassersteinEstimate> {
    let cross = transport(h1, h2, config)?;
    let self1 = self_transport(h1, config)?;
    let self2 = self_transport(h2, config)?;
    Ok(combine_debiased(cross, self1, self2))
}

/// Same as [`wasserstein`] with the second self-term supplied by the caller,
/// for repeated comparisons against one fixed reference.
pub fn wasserstein_with_reference(
    h: &Histogram2D,
    reference: &Histogram2D,
    reference_self: TransportSolution,
    config: &SinkhornConfig,
) -> Result<WassersteinEstimate> {
    let cross = transport(h, reference, config)?;
    let self1 = self_transport(h, config)?;
    Ok(combine_debiased(cross, self1, reference_self))
}

fn combine_debiased(
    cross: TransportSolution,
    self1: TransportSolution,
    self2: TransportSolution,
) -> WassersteinEstimate {
    let d = cross.cost - 0.5 * (self1.cost + self2.cost);
    WassersteinEstimate {
        distance: d.max(0.0),
        converged: cross.converged && self1.converged && self2.converged,
    }
}

/// Mode coverage diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoverage {
    pub modes_covered: usize,
    /// Fraction of points within three standard deviations of their nearest mode.
    pub hq_fraction: f64,
}

/// A point is high quality when it lies within `3 * std` of the nearest mode
/// mean; a mode is covered when at least 1% of all points are high quality
/// and nearest to it.
pub fn mode_coverage(points: &Tensor<f32>, spec: &RingSpec) -> Result<ModeCoverage> {
    if points.rows() == 0 || points.cols() != 2 {
        return Err(Error::contract("mode_coverage needs a nonempty n x 2 point set"));
    }
    let means = spec.means();
    let limit = 3.0 * spec.std();
    let mut per_mode = vec![0usize; means.len()];
    let mut hq = 0usize;
    for r in 0..points.rows() {
        let (x, y) = (points.get(r, 0) as f64, points.get(r, 1) as f64);
        let (best, dist) = means
            .iter()
            .enumerate()
            .map(|(k, (mx, my))| (k, ((x - mx).powi(2) + (y - my).powi(2)).sqrt()))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        if dist <= limit {
            hq += 1;
            per_mode[best] += 1;
        }
    }
    let n = points.rows() as f64;
    let modes_covered = per_mode.iter().filter(|&&c| c as f64 >= 0.01 * n).count();
    Ok(ModeCoverage {
        modes_covered,
        hq_fraction: hq as f64 / n,
    })
}
