//! Generator bank and classifier/discriminator network.
//!
//! Both models keep their parameters in a named, ordered [`Params`] list so
//! the optimizer and checkpoint code can treat them uniformly. To run a
//! forward pass on a tape, `bind` the parameters first; the returned handle
//! set is then passed to the forward functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;
/// Negative slope of the classifier/discriminator activation.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Real> Params<T> {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every tensor on the tape, tracked or not.
    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if tracked {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Like [`Params::bind`], but moves the tensors onto the tape instead of
    /// copying them. They must be returned with [`Params::reclaim`] before the
    /// parameters are read again.
    pub fn lend(&mut self, tape: &mut Tape<T>, tracked: bool) -> Vec<Var> {
        self.tensors
            .iter_mut()
            .map(|t| {
                let t = std::mem::replace(t, Tensor::zeros(0, 0));
                if tracked {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    pub fn reclaim(&mut self, tape: &mut Tape<T>, vars: &[Var]) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            *t = tape.take_value(*v);
        }
    }
}

fn init_weight<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Tensor::from_fn(rows, cols, |_, _| T::from_f64(normal.sample(rng)))
}

fn push_linear<T: Real>(
    params: &mut Params<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    params.push(format!("{prefix}.weight"), init_weight(rng, fan_in, fan_out));
    params.push(format!("{prefix}.bias"), Tensor::zeros(1, fan_out));
}

fn nonzero(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::contract(format!("{what} must be at least 1")));
    }
    Ok(())
}

/// K generators with unshared input layers and a shared two-layer trunk.
///
/// Generator `k` maps noise `z` to `trunk(relu(z * W_k + b_k))`, where the
/// trunk is `relu(h * W_h + b_h) * W_o + b_o` with a linear 2D output.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorBank<T: Real = f32> {
    k: usize,
    noise_dim: usize,
    hidden: usize,
    params: Params<T>,
}

/// Tape handles for a bound [`GeneratorBank`].
#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub vars: Vec<Var>,
    k: usize,
}

impl GeneratorVars {
    fn input(&self, k: usize) -> (Var, Var) {
        (self.vars[2 * k], self.vars[2 * k + 1])
    }

    fn trunk(&self) -> [Var; 4] {
        let base = 2 * self.k;
        [
            self.vars[base],
            self.vars[base + 1],
            self.vars[base + 2],
            self.vars[base + 3],
        ]
    }
}

impl<T: Real> GeneratorBank<T> {
    pub fn new(k: usize, noise_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        nonzero("generator count", k)?;
        nonzero("noise dimension", noise_dim)?;
        nonzero("hidden width", hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        for i in 0..k {
            push_linear(&mut params, &mut rng, &format!("gen.input.{i}"), noise_dim, hidden);
        }
        push_linear(&mut params, &mut rng, "gen.hidden", hidden, hidden);
        push_linear(&mut params, &mut rng, "gen.out", hidden, 2);
        Ok(GeneratorBank {
            k,
            noise_dim,
            hidden,
            params,
        })
    }

    /// Rebuilds a bank from a parameter list, inferring its dimensions.
    pub fn from_params(params: Params<T>) -> Result<Self> {
        let k = params
            .names()
            .iter()
            .filter(|n| n.starts_with("gen.input.") && n.ends_with(".weight"))
            .count();
        let w0 = params
            .get("gen.input.0.weight")
            .ok_or_else(|| Error::Checkpoint("missing gen.input.0.weight".into()))?;
        let (noise_dim, hidden) = w0.shape();
        let template = GeneratorBank::<T>::new(k.max(1), noise_dim.max(1), hidden.max(1), 0)?;
        check_layout(template.params(), &params)?;
        Ok(GeneratorBank {
            k,
            noise_dim,
            hidden,
            params,
        })
    }

    pub fn num_generators(&self) -> usize {
        self.k
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> GeneratorBank<U> {
        GeneratorBank {
            k: self.k,
            noise_dim: self.noise_dim,
            hidden: self.hidden,
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> GeneratorVars {
        GeneratorVars {
            vars: self.params.bind(tape, tracked),
            k: self.k,
        }
    }

    pub fn lend(&mut self, tape: &mut Tape<T>, tracked: bool) -> GeneratorVars {
        GeneratorVars {
            vars: self.params.lend(tape, tracked),
            k: self.k,
        }
    }

    pub fn reclaim(&mut self, tape: &mut Tape<T>, vars: &GeneratorVars) {
        self.params.reclaim(tape, &vars.vars);
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.k {
            return Err(Error::contract(format!(
                "generator index {k} out of range for {} generators",
                self.k
            )));
        }
        Ok(())
    }

    /// Output of generator `k` for the noise rows in `z`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &GeneratorVars, k: usize, z: Var) -> Result<Var> {
        self.forward_groups(tape, vars, &[(k, z)])
    }

    /// Runs several (generator, noise) groups and stacks their outputs in
    /// order. The shared trunk runs once over all rows.
    pub fn forward_groups(
        &self,
        tape: &mut Tape<T>,
        vars: &GeneratorVars,
        groups: &[(usize, Var)],
    ) -> Result<Var> {
        let mut hidden = Vec::with_capacity(groups.len());
        for &(k, z) in groups {
            self.check_index(k)?;
            let (w, b) = vars.input(k);
            let pre = tape.affine(z, w, b)?;
            hidden.push(tape.relu(pre)?);
        }
        let h = if hidden.len() == 1 {
            hidden[0]
        } else {
            tape.concat_rows(&hidden)?
        };
        let [wh, bh, wo, bo] = vars.trunk();
        let pre = tape.affine(h, wh, bh)?;
        let h2 = tape.relu(pre)?;
        tape.affine(h2, wo, bo)
    }

    /// Untracked forward pass of generator `k`.
    pub fn generate(&self, k: usize, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.forward(&mut tape, &vars, k, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// Closed-form parameter count of a generator bank.
pub fn generator_param_count(k: usize, noise_dim: usize, hidden: usize) -> usize {
    k * (noise_dim * hidden + hidden) + (hidden * hidden + hidden) + (hidden * 2 + 2)
}

/// Closed-form parameter count of a classifier/discriminator network.
pub fn cd_param_count(k: usize, hidden: usize) -> usize {
    (2 * hidden + hidden) + (hidden + 1) + (hidden * k + k)
}

fn check_layout<T: Real>(expected: &Params<T>, got: &Params<T>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    for ((en, et), (gn, gt)) in expected.iter().zip(got.iter()) {
        if en != gn || et.shape() != gt.shape() {
            return Err(Error::Checkpoint(format!(
                "expected {en} {:?}, found {gn} {:?}",
                et.shape(),
                gt.shape()
            )));
        }
    }
    Ok(())
}

/// Discriminator and classifier sharing one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CdNet<T: Real = f32> {
    k: usize,
    hidden: usize,
    slope: f64,
    params: Params<T>,
}

#[derive(Debug, Clone)]
pub struct CdVars {
    pub vars: Vec<Var>,
}

/// Forward outputs of [`CdNet`]: discriminator probabilities (`n x 1`) and
/// classifier log-probabilities (`n x K`).
#[derive(Debug, Clone, Copy)]
pub struct CdOutput {
    pub d: Var,
    pub c_logprob: Var,
}

impl<T: Real> CdNet<T> {
    pub fn new(k: usize, hidden: usize, seed: u64) -> Result<Self> {
        nonzero("class count", k)?;
        nonzero("hidden width", hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::default();
        push_linear(&mut params, &mut rng, "cd.trunk", 2, hidden);
        push_linear(&mut params, &mut rng, "cd.d_head", hidden, 1);
        push_linear(&mut params, &mut rng, "cd.c_head", hidden, k);
        Ok(CdNet {
            k,
            hidden,
            slope: LEAKY_SLOPE,
            params,
        })
    }

    pub fn from_params(params: Params<T>) -> Result<Self> {
        let c = params
            .get("cd.c_head.weight")
            .ok_or_else(|| Error::Checkpoint("missing cd.c_head.weight".into()))?;
        let (hidden, k) = c.shape();
        let template = CdNet::<T>::new(k.max(1), hidden.max(1), 0)?;
        check_layout(template.params(), &params)?;
        Ok(CdNet {
            k,
            hidden,
            slope: LEAKY_SLOPE,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> CdNet<U> {
        CdNet {
            k: self.k,
            hidden: self.hidden,
            slope: self.slope,
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, tracked: bool) -> CdVars {
        CdVars {
            vars: self.params.bind(tape, tracked),
        }
    }

    pub fn lend(&mut self, tape: &mut Tape<T>, tracked: bool) -> CdVars {
        CdVars {
            vars: self.params.lend(tape, tracked),
        }
    }

    pub fn reclaim(&mut self, tape: &mut Tape<T>, vars: &CdVars) {
        self.params.reclaim(tape, &vars.vars);
    }

    pub fn forward(&self, tape: &mut Tape<T>, vars: &CdVars, x: Var) -> Result<CdOutput> {
        let v = &vars.vars;
        let pre = tape.affine(x, v[0], v[1])?;
        let h = tape.leaky_relu(pre, self.slope)?;
        let d_logit = tape.affine(h, v[2], v[3])?;
        let d = tape.sigmoid(d_logit)?;
        let c_logit = tape.affine(h, v[4], v[5])?;
        let c_logprob = tape.log_softmax(c_logit)?;
        Ok(CdOutput { d, c_logprob })
    }

    /// Untracked evaluation: `(D(x), log C(x))`.
    pub fn evaluate(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &vars, xv)?;
        Ok((tape.value(out.d).clone(), tape.value(out.c_logprob).clone()))
    }
}
