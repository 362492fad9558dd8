use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use mgan::checkpoint::TrainingState;
use mgan::game::{run, sample_mixture, DirObserver, MetricRecord, RunObserver, Trainer};
use mgan::oracle::{
    optimal_classifier, separated_ring_component, verify, write_grid_csv, GridDensity,
};
use mgan::plot::{scatter_svg, write_svg, ScatterStyle};
use mgan::{GeneratorBank, MixtureConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;

/// An error that maps to a specific process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn failure(code: u8, message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code,
        message: message.into(),
    })
}

/// 2 for bad input, 3 for training divergence, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(mgan::Error::NonFinite(_)) = cause.downcast_ref::<mgan::Error>() {
            return 3;
        }
    }
    1
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| failure(2, format!("{e:#}"))),
        None => Ok(ExperimentConfig::default()),
    }
}

fn output_root(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("MGAN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| config.output.dir.clone())
}

/// Parses `1,2,7`, `1..5` (inclusive) or a mix of both.
pub fn parse_seeds(text: &str) -> anyhow::Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().with_context(|| format!("bad seed range {part:?}"))?;
            let b: u64 = b.trim().parse().with_context(|| format!("bad seed range {part:?}"))?;
            if b < a {
                return Err(anyhow!("empty seed range {part:?}"));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().with_context(|| format!("bad seed {part:?}"))?);
        }
    }
    Ok(seeds)
}

fn resolve_seeds(flag: Option<&str>, config: &ExperimentConfig) -> anyhow::Result<Vec<u64>> {
    match flag {
        Some(text) => parse_seeds(text).map_err(|e| failure(2, format!("{e:#}"))),
        None => Ok(config.seeds()),
    }
}

fn workers(config: &ExperimentConfig, jobs: usize) -> usize {
    let n = if config.output.workers > 0 {
        config.output.workers
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    };
    n.clamp(1, jobs.max(1))
}

/// Runs `jobs` on a bounded pool and returns results in job order.
fn run_pool<J: Sync, R: Send>(jobs: &[J], workers: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

struct Progress {
    label: String,
    dir: DirObserver,
}

impl RunObserver for Progress {
    fn on_metrics(&mut self, trainer: &Trainer, r: &MetricRecord) -> mgan::Result<()> {
        println!(
            "[{}] iter {:>6}  L_C {:.4}  L_D {:.4}  L_G {:.4}  KL {:.3}  W {:.3}  modes {}  hq {:.3}",
            self.label, r.iter, r.loss_c, r.loss_d, r.loss_g, r.sym_kl, r.wasserstein, r.modes, r.hq_frac
        );
        self.dir.on_metrics(trainer, r)
    }

    fn on_checkpoint(&mut self, trainer: &Trainer) -> mgan::Result<()> {
        self.dir.on_checkpoint(trainer)
    }
}

/// Red true samples and blue generated samples for a trained bank.
pub fn render_scatter(
    bank: &GeneratorBank<f32>,
    config: &ExperimentConfig,
    pi: &[f64],
    seed: u64,
) -> anyhow::Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = config.data.sample_with(config.output.plot_true_samples, &mut rng);
    let (points, idx) = sample_mixture(
        bank,
        pi,
        config.output.plot_samples,
        config.mixture.prior,
        &mut rng,
        false,
    )?;
    let style = ScatterStyle {
        per_generator_hues: config.output.per_generator_hues,
        ..ScatterStyle::default()
    };
    Ok(scatter_svg(&truth, &points, Some(&idx), &style)?)
}

/// Final metrics of one finished run.
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub last: Option<MetricRecord>,
}

/// Trains one seed into `dir`.
fn train_one(config: &ExperimentConfig, seed: u64, dir: &Path, label: String) -> anyhow::Result<RunSummary> {
    let mut resolved = config.clone();
    resolved.mixture.seed = seed;
    resolved.output.seeds = vec![seed];
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), resolved.to_toml()?)
        .with_context(|| format!("cannot write config into {}", dir.display()))?;
    let mut obs = Progress {
        label,
        dir: DirObserver::create(dir)?,
    };
    let outcome = match run(
        resolved.mixture.clone(),
        resolved.data.clone(),
        resolved.metrics.clone(),
        &mut obs,
    ) {
        Ok(o) => o,
        Err(e) => {
            let kept = obs
                .dir
                .last_checkpoint
                .as_ref()
                .map_or("no checkpoint written yet".to_string(), |p| format!("last checkpoint {}", p.display()));
            return Err(anyhow::Error::new(e).context(format!("seed {seed} diverged ({kept})")));
        }
    };
    let svg = render_scatter(&outcome.state.generators, &resolved, &resolved.mixture.weights(), seed)?;
    write_svg(&dir.join("scatter.svg"), &svg)?;
    Ok(RunSummary {
        seed,
        dir: dir.to_path_buf(),
        last: outcome.trace.last().copied(),
    })
}

fn finish(results: Vec<anyhow::Result<RunSummary>>) -> anyhow::Result<Vec<RunSummary>> {
    let mut ok = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => {
                eprintln!("error: {e:#}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

pub fn train(config_path: Option<&Path>, out: Option<PathBuf>, seeds: Option<&str>) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    let root = output_root(out, &config);
    let seeds = resolve_seeds(seeds, &config)?;
    let jobs: Vec<(u64, PathBuf)> = seeds.iter().map(|&s| (s, root.join(format!("seed_{s}")))).collect();
    let results = run_pool(&jobs, workers(&config, jobs.len()), |(seed, dir)| {
        train_one(&config, *seed, dir, format!("seed {seed}"))
    });
    for s in finish(results)? {
        if let Some(r) = s.last {
            println!(
                "seed {} done: modes {} hq {:.3} KL {:.3} W {:.3} -> {}",
                s.seed,
                r.modes,
                r.hq_frac,
                r.sym_kl,
                r.wasserstein,
                s.dir.display()
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParam {
    Beta,
    K,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::K => "k",
        }
    }

    fn apply(self, mixture: &MixtureConfig, value: f64) -> anyhow::Result<MixtureConfig> {
        let mut m = mixture.clone();
        match self {
            SweepParam::Beta => m.beta = value,
            SweepParam::K => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(failure(2, format!("K must be a positive integer, got {value}")));
                }
                m.k = value as usize;
                m.pi.clear();
            }
        }
        m.validate().map_err(|e| failure(2, e.to_string()))?;
        Ok(m)
    }
}

pub const SUMMARY_HEADER: &str = "rank,param,value,seed,modes,hq_frac,sym_kl,wasserstein,loss_c,loss_d,loss_g";

pub fn sweep(
    config_path: Option<&Path>,
    out: Option<PathBuf>,
    seeds: Option<&str>,
    param: SweepParam,
    values: &str,
) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    let parsed: Vec<f64> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|_| failure(2, format!("bad sweep value {v:?}"))))
        .collect::<anyhow::Result<_>>()?;
    if parsed.is_empty() {
        return Err(failure(2, "sweep needs at least one value"));
    }
    let root = output_root(out, &config);
    let seeds = resolve_seeds(seeds, &config)?;
    let mut jobs = Vec::new();
    for &v in &parsed {
        let mut c = config.clone();
        c.mixture = param.apply(&config.mixture, v)?;
        for &s in &seeds {
            let dir = root.join(format!("{}_{v}", param.name())).join(format!("seed_{s}"));
            jobs.push((v, s, c.clone(), dir));
        }
    }
    let results = run_pool(&jobs, workers(&config, jobs.len()), |(v, s, c, dir)| {
        train_one(c, *s, dir, format!("{}={v} seed {s}", param.name())).map(|r| (*v, r))
    });
    let mut rows: Vec<(f64, RunSummary)> = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(x) => rows.push(x),
            Err(e) => {
                eprintln!("error: {e:#}");
                first_err.get_or_insert(e);
            }
        }
    }
    rows.sort_by(|(va, a), (vb, b)| {
        let (ra, rb) = (a.last.unwrap_or_else(empty_record), b.last.unwrap_or_else(empty_record));
        rb.modes
            .cmp(&ra.modes)
            .then(rb.hq_frac.total_cmp(&ra.hq_frac))
            .then(ra.sym_kl.total_cmp(&rb.sym_kl))
            .then(va.total_cmp(vb))
            .then(a.seed.cmp(&b.seed))
    });
    let mut csv = format!("{SUMMARY_HEADER}\n");
    for (rank, (v, s)) in rows.iter().enumerate() {
        let r = s.last.unwrap_or_else(empty_record);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            param.name(),
            v,
            s.seed,
            r.modes,
            r.hq_frac,
            r.sym_kl,
            r.wasserstein,
            r.loss_c,
            r.loss_d,
            r.loss_g
        ));
    }
    std::fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    let path = root.join("summary.csv");
    std::fs::write(&path, &csv).with_context(|| format!("cannot write {}", path.display()))?;
    print!("{csv}");
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn empty_record() -> MetricRecord {
    MetricRecord {
        iter: 0,
        loss_c: f64::NAN,
        loss_d: f64::NAN,
        loss_g: f64::NAN,
        sym_kl: f64::NAN,
        wasserstein: f64::NAN,
        modes: 0,
        hq_frac: 0.0,
    }
}

pub fn oracle(config_path: Option<&Path>, dump: Option<&Path>) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    let oc = &config.oracle;
    let checks = verify(oc)?;
    for c in &checks {
        println!("{c}");
    }
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let k = config.data.n_modes;
        let comps = (0..k)
            .map(|j| separated_ring_component(oc.lattice, &config.data, j))
            .collect::<mgan::Result<Vec<_>>>()?;
        let pi = vec![1.0 / k as f64; k];
        GridDensity::ring(oc.lattice, &config.data)?.write_csv(&dir.join("ring_density.csv"))?;
        GridDensity::mixture(&comps, &pi)?.write_csv(&dir.join("separated_mixture.csv"))?;
        let c = optimal_classifier(&comps, &pi)?;
        write_grid_csv(&oc.lattice, &c.values[0], &dir.join("classifier_0.csv"))?;
        println!("lattice dumps written to {}", dir.display());
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(failure(1, format!("{failed} of {} oracle checks failed", checks.len())));
    }
    Ok(())
}

pub fn plot(checkpoint: &Path, out: &Path, config_path: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let config = load_config(config_path)?;
    let state = TrainingState::load(checkpoint)
        .map_err(|e| failure(2, format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let k = state.generators.num_generators();
    let pi = if config.mixture.k == k {
        config.mixture.weights()
    } else {
        vec![1.0 / k as f64; k]
    };
    let svg = render_scatter(&state.generators, &config, &pi, seed.unwrap_or(config.mixture.seed))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    write_svg(out, &svg)?;
    println!("wrote {}", out.display());
    Ok(())
}
