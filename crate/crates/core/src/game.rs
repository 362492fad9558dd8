//! The three-party game: mixture sampling, losses and alternating training.
//!
//! Each iteration performs two updates:
//!
//! 1. Draw `M` real points and `N` generated points with their generator
//!    indices. Descend the classifier/discriminator parameters along the
//!    gradient of `L_C + L_D`.
//! 2. Draw a fresh batch of `N` generated points and descend the generator
//!    parameters along the gradient of `L_G`.
//!
//! The generator loss uses the non-saturating form `-log D(x')`, so
//! *descending* it increases `log D` on generated samples.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::TrainingState;
use crate::data::{NoisePrior, RingSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    histogram2d, mode_coverage, self_transport, symmetric_kl, wasserstein_with_reference, HistGrid,
    Histogram2D, SinkhornConfig, TransportSolution, KL_SMOOTHING,
};
use crate::nn::{CdNet, GeneratorBank, GeneratorVars};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::{Real, Tensor};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    /// Number of generators.
    pub k: usize,
    /// Mixing weights; empty means uniform `1/K`.
    pub pi: Vec<f64>,
    /// Weight of the classifier term in the generator loss.
    pub beta: f64,
    pub batch_real: usize,
    pub batch_per_generator: usize,
    pub iterations: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub noise_dim: usize,
    pub hidden: usize,
    pub prior: NoisePrior,
    pub adam: AdamConfig,
    /// Checkpoint interval in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            k: 8,
            pi: Vec::new(),
            beta: 0.125,
            batch_real: 512,
            batch_per_generator: 128,
            iterations: 25_000,
            eval_every: 500,
            seed: 0,
            noise_dim: 256,
            hidden: 128,
            prior: NoisePrior::Gaussian,
            adam: AdamConfig::default(),
            checkpoint_every: 5000,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("k must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::contract("beta must be finite and nonnegative"));
        }
        if !self.pi.is_empty() {
            check_simplex(&self.pi, self.k)?;
        }
        for (name, v) in [
            ("batch_real", self.batch_real),
            ("batch_per_generator", self.batch_per_generator),
            ("noise_dim", self.noise_dim),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be at least 1")));
            }
        }
        let a = self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps >= 0.0) {
            return Err(Error::contract(format!("invalid adam settings {a:?}")));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.pi.is_empty() {
            vec![1.0 / self.k as f64; self.k]
        } else {
            self.pi.clone()
        }
    }

    pub fn is_uniform(&self) -> bool {
        let w = self.weights();
        w.iter().all(|&p| (p - w[0]).abs() < 1e-12)
    }

    /// Generated minibatch size `N`.
    pub fn batch_fake(&self) -> usize {
        self.k * self.batch_per_generator
    }
}

fn check_simplex(pi: &[f64], k: usize) -> Result<()> {
    if pi.len() != k {
        return Err(Error::contract(format!("{} mixing weights for {k} generators", pi.len())));
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|&p| p.is_nan() || p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("mixing weights {pi:?} are not on the simplex")));
    }
    Ok(())
}

/// Per-generator sample counts for a minibatch of `n`.
fn draw_counts<R: Rng + ?Sized>(pi: &[f64], n: usize, rng: &mut R, stratified: bool) -> Result<Vec<usize>> {
    let k = pi.len();
    if stratified {
        if n % k != 0 {
            return Err(Error::contract(format!(
                "stratified sampling needs n divisible by K (n = {n}, K = {k})"
            )));
        }
        return Ok(vec![n / k; k]);
    }
    let pick = WeightedIndex::new(pi).map_err(|e| Error::contract(format!("mixing weights: {e}")))?;
    let mut counts = vec![0; k];
    for _ in 0..n {
        counts[pick.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Generated points for the given per-generator counts, built on `tape`.
/// Rows are grouped by generator in index order.
fn generate_on_tape<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    bank: &GeneratorBank<T>,
    vars: &GeneratorVars,
    counts: &[usize],
    prior: NoisePrior,
    rng: &mut R,
) -> Result<(Var, Vec<usize>)> {
    let mut groups = Vec::new();
    let mut indices = Vec::with_capacity(counts.iter().sum());
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let z = prior.sample_as::<T, R>(c, bank.noise_dim(), rng);
        groups.push((k, tape.constant(z)));
        indices.extend(std::iter::repeat_n(k, c));
    }
    let x = bank.forward_groups(tape, vars, &groups)?;
    Ok((x, indices))
}

/// Draws `n` points from the generator mixture with their generator indices.
///
/// With `stratified`, every generator contributes exactly `n / K` points.
/// Otherwise each index is drawn from `Mult(pi)` and the output keeps the
/// draw order.
pub fn sample_mixture<R: Rng + ?Sized>(
    bank: &GeneratorBank<f32>,
    pi: &[f64],
    n: usize,
    prior: NoisePrior,
    rng: &mut R,
    stratified: bool,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::contract("sample_mixture needs n >= 1"));
    }
    check_simplex(pi, bank.num_generators())?;
    if stratified {
        let counts = draw_counts(pi, n, rng, true)?;
        let mut tape = Tape::new();
        let vars = bank.bind(&mut tape, false);
        let (x, idx) = generate_on_tape(&mut tape, bank, &vars, &counts, prior, rng)?;
        return Ok((tape.value(x).clone(), idx));
    }
    let pick = WeightedIndex::new(pi).map_err(|e| Error::contract(format!("mixing weights: {e}")))?;
    let order: Vec<usize> = (0..n).map(|_| pick.sample(rng)).collect();
    let mut counts = vec![0; pi.len()];
    for &u in &order {
        counts[u] += 1;
    }
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, false);
    let (x, _) = generate_on_tape(&mut tape, bank, &vars, &counts, prior, rng)?;
    let grouped = tape.value(x);
    // Scatter the generator-grouped rows back into draw order.
    let mut next = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for c in &counts {
        next.push(offset);
        offset += c;
    }
    let mut out = Tensor::zeros(n, 2);
    for (row, &u) in order.iter().enumerate() {
        let src = next[u];
        next[u] += 1;
        out.set(row, 0, grouped.get(src, 0));
        out.set(row, 1, grouped.get(src, 1));
    }
    Ok((out, order))
}

/// Classifier and discriminator losses:
///
/// `L_C = -mean_n log C_{u_n}(x'_n)`
/// `L_D = -mean_m log D(x_m) - mean_n log(1 - D(x'_n))`
pub fn loss_cd<T: Real>(
    tape: &mut Tape<T>,
    d_real: Var,
    d_fake: Var,
    c_logprob_fake: Var,
    indices: &[usize],
) -> Result<(Var, Var)> {
    let picked = tape.pick(c_logprob_fake, indices)?;
    let mean_c = tape.mean(picked)?;
    let loss_c = tape.neg(mean_c)?;

    let log_real = tape.log(d_real)?;
    let mean_real = tape.mean(log_real)?;
    let neg_fake = tape.neg(d_fake)?;
    let one_minus = tape.add_scalar(neg_fake, 1.0)?;
    let log_fake = tape.log(one_minus)?;
    let mean_fake = tape.mean(log_fake)?;
    let sum = tape.add(mean_real, mean_fake)?;
    let loss_d = tape.neg(sum)?;
    Ok((loss_c, loss_d))
}

/// Generator loss `-mean_n log D(x'_n) - beta * mean_n log C_{u_n}(x'_n)`.
pub fn loss_g<T: Real>(
    tape: &mut Tape<T>,
    d_fake: Var,
    c_logprob_fake: Var,
    indices: &[usize],
    beta: f64,
) -> Result<Var> {
    let log_d = tape.log(d_fake)?;
    let mean_d = tape.mean(log_d)?;
    let adv = tape.neg(mean_d)?;
    let picked = tape.pick(c_logprob_fake, indices)?;
    let mean_c = tape.mean(picked)?;
    let div = tape.scale(mean_c, -beta)?;
    tape.add(adv, div)
}

fn finite_loss(name: &str, v: f32) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss {name}")));
    }
    // Adding zero folds -0.0 into 0.0.
    Ok(v as f64 + 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
}

/// One row of the metric trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub sym_kl: f64,
    pub wasserstein: f64,
    pub modes: usize,
    pub hq_frac: f64,
}

pub const METRICS_HEADER: &str = "iter,loss_c,loss_d,loss_g,sym_kl,wasserstein,modes,hq_frac";

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            self.loss_c,
            self.loss_d,
            self.loss_g,
            self.sym_kl,
            self.wasserstein,
            self.modes,
            self.hq_frac
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTrace {
    pub records: Vec<MetricRecord>,
}

impl MetricTrace {
    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iter <= last.iter {
                return Err(Error::contract(format!(
                    "metric iteration {} does not follow {}",
                    record.iter, last.iter
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub grid: HistGrid,
    /// Points drawn from the model (and from the data) per evaluation.
    pub samples: usize,
    pub kl_smoothing: f64,
    pub sinkhorn: SinkhornConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid: HistGrid::default(),
            samples: 10_000,
            kl_smoothing: KL_SMOOTHING,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

/// Compares model samples against a fixed histogram of true samples.
#[derive(Debug, Clone)]
pub struct Evaluator {
    config: EvalConfig,
    spec: RingSpec,
    reference: Histogram2D,
    reference_self: TransportSolution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleQuality {
    pub sym_kl: f64,
    pub wasserstein: f64,
    pub wasserstein_converged: bool,
    pub modes: usize,
    pub hq_frac: f64,
}

impl Evaluator {
    pub fn new(config: EvalConfig, spec: RingSpec, seed: u64) -> Result<Self> {
        config.grid.validate()?;
        spec.validate()?;
        if config.samples == 0 {
            return Err(Error::contract("evaluation needs at least one sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = spec.sample_with(config.samples, &mut rng);
        let reference = histogram2d(&truth, config.grid)?;
        let reference_self = self_transport(&reference, &config.sinkhorn)?;
        Ok(Evaluator {
            config,
            spec,
            reference,
            reference_self,
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn reference(&self) -> &Histogram2D {
        &self.reference
    }

    pub fn assess(&self, points: &Tensor<f32>) -> Result<SampleQuality> {
        let h = histogram2d(points, self.config.grid)?;
        let sym_kl = symmetric_kl(&h, &self.reference, self.config.kl_smoothing)?;
        let w = wasserstein_with_reference(
            &h,
            &self.reference,
            self.reference_self,
            &self.config.sinkhorn,
        )?;
        let cov = mode_coverage(points, &self.spec)?;
        Ok(SampleQuality {
            sym_kl,
            wasserstein: w.distance,
            wasserstein_converged: w.converged,
            modes: cov.modes_covered,
            hq_frac: cov.hq_fraction,
        })
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over (seed, stream).
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Alternating trainer holding the full game state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: MixtureConfig,
    spec: RingSpec,
    pi: Vec<f64>,
    stratified: bool,
    generators: GeneratorBank<f32>,
    cd: CdNet<f32>,
    adam_g: AdamState<f32>,
    adam_cd: AdamState<f32>,
    rng: Xoshiro256PlusPlus,
    eval_rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: MixtureConfig, spec: RingSpec) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let seed = config.seed;
        let generators = GeneratorBank::new(config.k, config.noise_dim, config.hidden, derive_seed(seed, 1))?;
        let cd = CdNet::new(config.k, config.hidden, derive_seed(seed, 2))?;
        let adam_g = AdamState::new(config.adam, generators.params());
        let adam_cd = AdamState::new(config.adam, cd.params());
        Ok(Trainer {
            pi: config.weights(),
            // Equal per-generator counts only make sense for uniform weights.
            stratified: config.is_uniform(),
            rng: Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, 3)),
            eval_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 4)),
            config,
            spec,
            generators,
            cd,
            adam_g,
            adam_cd,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &MixtureConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn generators(&self) -> &GeneratorBank<f32> {
        &self.generators
    }

    pub fn generators_mut(&mut self) -> &mut GeneratorBank<f32> {
        &mut self.generators
    }

    pub fn cd(&self) -> &CdNet<f32> {
        &self.cd
    }

    pub fn cd_mut(&mut self) -> &mut CdNet<f32> {
        &mut self.cd
    }

    pub fn state(&self) -> TrainingState {
        TrainingState {
            generators: self.generators.clone(),
            cd: self.cd.clone(),
            adam_g: Some(self.adam_g.clone()),
            adam_cd: Some(self.adam_cd.clone()),
        }
    }

    /// Classifier/discriminator update. Returns `(L_C, L_D)`.
    pub fn step_cd(&mut self) -> Result<(f64, f64)> {
        let cfg = &self.config;
        let m = cfg.batch_real;
        let real = self.spec.sample_with(m, &mut self.rng);
        let counts = draw_counts(&self.pi, cfg.batch_fake(), &mut self.rng, self.stratified)?;

        let mut tape = Tape::new();
        let gvars = self.generators.lend(&mut tape, false);
        let cd_vars = self.cd.lend(&mut tape, true);
        let outcome = (|| {
            let (fake, indices) =
                generate_on_tape(&mut tape, &self.generators, &gvars, &counts, cfg.prior, &mut self.rng)?;
            let real_var = tape.constant(real);
            let x = tape.concat_rows(&[real_var, fake])?;
            let out = self.cd.forward(&mut tape, &cd_vars, x)?;
            let total = m + indices.len();
            let d_real = tape.slice_rows(out.d, 0, m)?;
            let d_fake = tape.slice_rows(out.d, m, total)?;
            let c_fake = tape.slice_rows(out.c_logprob, m, total)?;
            let (loss_c, loss_d) = loss_cd(&mut tape, d_real, d_fake, c_fake, &indices)?;
            let lc = finite_loss("L_C", tape.value(loss_c).item()?)?;
            let ld = finite_loss("L_D", tape.value(loss_d).item()?)?;
            let objective = tape.add(loss_c, loss_d)?;
            Ok((lc, ld, tape.backward(objective)?))
        })();
        self.generators.reclaim(&mut tape, &gvars);
        self.cd.reclaim(&mut tape, &cd_vars);
        let (lc, ld, mut grads) = outcome?;

        let g: Vec<Tensor<f32>> = cd_vars
            .vars
            .iter()
            .map(|v| grads.take(*v).unwrap_or_else(|| Tensor::zeros(1, 1)))
            .collect();
        self.adam_cd.step(self.cd.params_mut(), &g)?;
        Ok((lc, ld))
    }

    /// Generator update on a fresh generated minibatch. Returns `L_G`.
    pub fn step_g(&mut self) -> Result<f64> {
        let cfg = &self.config;
        let counts = draw_counts(&self.pi, cfg.batch_fake(), &mut self.rng, self.stratified)?;
        let mut tape = Tape::new();
        let gvars = self.generators.lend(&mut tape, true);
        let cd_vars = self.cd.lend(&mut tape, false);
        let outcome = (|| {
            let (fake, indices) =
                generate_on_tape(&mut tape, &self.generators, &gvars, &counts, cfg.prior, &mut self.rng)?;
            let out = self.cd.forward(&mut tape, &cd_vars, fake)?;
            let loss = loss_g(&mut tape, out.d, out.c_logprob, &indices, cfg.beta)?;
            let lg = finite_loss("L_G", tape.value(loss).item()?)?;
            Ok((lg, tape.backward(loss)?))
        })();
        self.generators.reclaim(&mut tape, &gvars);
        self.cd.reclaim(&mut tape, &cd_vars);
        let (lg, mut grads) = outcome?;

        let g: Vec<Tensor<f32>> = gvars
            .vars
            .iter()
            .zip(self.generators.params().tensors())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        self.adam_g.step(self.generators.params_mut(), &g)?;
        Ok(lg)
    }

    /// One full iteration: classifier/discriminator update, then generator update.
    pub fn step(&mut self) -> Result<StepLosses> {
        let (loss_c, loss_d) = self.step_cd()?;
        let loss_g = self.step_g()?;
        self.iteration += 1;
        Ok(StepLosses {
            loss_c,
            loss_d,
            loss_g,
        })
    }

    /// Draws `n` evaluation samples from the mixture (multinomial indices).
    pub fn sample(&mut self, n: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
        sample_mixture(&self.generators, &self.pi, n, self.config.prior, &mut self.eval_rng, false)
    }

    pub fn evaluate(&mut self, evaluator: &Evaluator, losses: StepLosses) -> Result<MetricRecord> {
        let (points, _) = self.sample(evaluator.config().samples)?;
        let q = evaluator.assess(&points)?;
        Ok(MetricRecord {
            iter: self.iteration,
            loss_c: losses.loss_c,
            loss_d: losses.loss_d,
            loss_g: losses.loss_g,
            sym_kl: q.sym_kl,
            wasserstein: q.wasserstein,
            modes: q.modes,
            hq_frac: q.hq_frac,
        })
    }
}

/// Trained models and their metric trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainingState,
    pub trace: MetricTrace,
}

/// Hooks called by [`run`] as training progresses.
pub trait RunObserver {
    /// Whether to evaluate after iteration `iter`. Evaluation draws from its
    /// own random stream, so the schedule never changes the training
    /// trajectory.
    fn wants_metrics(&self, iter: usize, eval_every: usize) -> bool {
        eval_every > 0 && iter % eval_every == 0
    }
    fn on_metrics(&mut self, _trainer: &Trainer, _record: &MetricRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

/// Runs `config.iterations` training iterations, evaluating whenever the
/// observer asks for it (by default every `config.eval_every` iterations).
pub fn run(
    config: MixtureConfig,
    spec: RingSpec,
    eval: EvalConfig,
    observer: &mut dyn RunObserver,
) -> Result<TrainOutcome> {
    let evaluator = Evaluator::new(eval, spec.clone(), derive_seed(config.seed, 5))?;
    let mut trainer = Trainer::new(config, spec)?;
    let mut trace = MetricTrace::default();
    let iterations = trainer.config.iterations;
    let eval_every = trainer.config.eval_every;
    let ckpt_every = trainer.config.checkpoint_every;
    for _ in 0..iterations {
        let losses = trainer.step()?;
        let it = trainer.iteration();
        if observer.wants_metrics(it, eval_every) {
            let record = trainer.evaluate(&evaluator, losses)?;
            trace.push(record)?;
            observer.on_metrics(&trainer, &record)?;
        }
        if ckpt_every > 0 && it % ckpt_every == 0 && it != iterations {
            observer.on_checkpoint(&trainer)?;
        }
    }
    observer.on_checkpoint(&trainer)?;
    Ok(TrainOutcome {
        state: trainer.state(),
        trace,
    })
}

/// Trains without writing anything to disk.
pub fn train(config: MixtureConfig, spec: RingSpec) -> Result<TrainOutcome> {
    run(config, spec, EvalConfig::default(), &mut ())
}

/// Writes `metrics.csv` rows and `ckpt_<iter>.mgan` files into a directory.
#[derive(Debug)]
pub struct DirObserver {
    dir: PathBuf,
    metrics: File,
    pub last_checkpoint: Option<PathBuf>,
}

impl DirObserver {
    /// Creates the directory and truncates `metrics.csv` to its header.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        std::fs::write(&path, format!("{METRICS_HEADER}\n")).map_err(|e| Error::io(&path, e))?;
        let metrics = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(DirObserver {
            dir: dir.to_path_buf(),
            metrics,
            last_checkpoint: None,
        })
    }
}

impl RunObserver for DirObserver {
    fn on_metrics(&mut self, _trainer: &Trainer, record: &MetricRecord) -> Result<()> {
        let path = self.dir.join("metrics.csv");
        writeln!(self.metrics, "{}", record.csv_row()).map_err(|e| Error::io(&path, e))
    }

    fn on_checkpoint(&mut self, trainer: &Trainer) -> Result<()> {
        let path = self.dir.join(format!("ckpt_{}.mgan", trainer.iteration()));
        trainer.state().save(&path)?;
        self.last_checkpoint = Some(path);
        Ok(())
    }
}
