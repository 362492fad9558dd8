//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test -p mgan --test acceptance -- 1 7`.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mgan::game::{run, DirObserver, EvalConfig, RunObserver, TrainOutcome};
use mgan::metrics::{symmetric_kl, wasserstein, HistGrid, Histogram2D, SinkhornConfig};
use mgan::oracle::{check_equilibrium, check_optimality, check_value_identity, OracleConfig};
use mgan::{MixtureConfig, RingSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Evaluates only at the listed iterations.
struct EvalAt(&'static [usize]);

impl RunObserver for EvalAt {
    fn wants_metrics(&self, iter: usize, _eval_every: usize) -> bool {
        self.0.contains(&iter)
    }
}

/// Trains every configuration, spreading runs over the available cores.
/// Metrics are computed only at `eval_at`.
fn train_all(configs: &[MixtureConfig], eval_at: &'static [usize]) -> Vec<TrainOutcome> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<TrainOutcome>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                let out = run(configs[i].clone(), RingSpec::default(), EvalConfig::default(), &mut EvalAt(eval_at))
                    .unwrap_or_else(|e| panic!("run {i} failed: {e}"));
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|o| o.unwrap()).collect()
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn gradient_correctness() -> Verdict {
    let tally = common::check_games(20);
    verdict(
        tally.worst < common::REL_TOL && tally.skipped * 100 < tally.checked,
        format!(
            "20 networks, {} coordinates, worst relative error {:.2e} (limit 1e-4), {} breakpoint-straddling coordinates skipped",
            tally.checked, tally.worst, tally.skipped
        ),
    )
}

fn optimality_probes() -> Verdict {
    let checks = check_optimality(&OracleConfig::default()).unwrap();
    let pass = checks.iter().all(|c| c.pass);
    verdict(
        pass,
        format!(
            "10 instances x 10 probes; max |sum C* - 1| = {:.1e}, smallest decrease C* {:.3e}, D* {:.3e}",
            checks[0].achieved, checks[1].achieved, checks[2].achieved
        ),
    )
}

fn value_identity() -> Verdict {
    let c = check_value_identity(&OracleConfig::default()).unwrap();
    verdict(
        c.pass,
        format!("10 instances on 200x200, worst |J direct - closed form (2x refined)| = {:.2e} (limit 1e-6)", c.achieved),
    )
}

fn equilibrium_value() -> Verdict {
    let checks = check_equilibrium(&OracleConfig::default()).unwrap();
    let (obj, jsd) = (&checks[0], &checks[1]);
    let pinned = (obj.value - (-0.25993)).abs() < 5e-6;
    verdict(
        obj.pass && jsd.pass && pinned,
        format!(
            "objective {:.6} (target -0.125 ln 8, error {:.1e}), JSD_pi {:.6} (target ln 8, error {:.1e})",
            obj.value, obj.achieved, jsd.value, jsd.achieved
        ),
    )
}

fn full_config(k: usize, beta: f64, seed: u64) -> MixtureConfig {
    MixtureConfig {
        k,
        beta,
        seed,
        checkpoint_every: 0,
        ..MixtureConfig::default()
    }
}

fn mode_coverage_runs() -> Verdict {
    let seeds: Vec<u64> = (1..=5).collect();
    let mut configs: Vec<MixtureConfig> = seeds.iter().map(|&s| full_config(8, 0.125, s)).collect();
    configs.extend(seeds.iter().map(|&s| full_config(1, 0.0, s)));
    let out = train_all(&configs, &[500, 25_000]);
    let (mgan, gan) = out.split_at(seeds.len());
    let mut good = 0;
    let mut lines = Vec::new();
    for (seed, o) in seeds.iter().zip(mgan) {
        let first = o.trace.records.first().unwrap();
        let last = o.trace.last().unwrap();
        assert_eq!((first.iter, last.iter), (500, 25_000));
        let ok = last.modes == 8
            && last.hq_frac >= 0.9
            && last.sym_kl < 0.2 * first.sym_kl
            && last.wasserstein < 0.2;
        good += ok as usize;
        lines.push(format!(
            "seed {seed}: modes {} hq {:.3} kl {:.2}->{:.2} w {:.3}",
            last.modes, last.hq_frac, first.sym_kl, last.sym_kl, last.wasserstein
        ));
    }
    let mgan_median = median(mgan.iter().map(|o| o.trace.last().unwrap().modes).collect());
    let gan_modes: Vec<usize> = gan.iter().map(|o| o.trace.last().unwrap().modes).collect();
    let gan_median = median(gan_modes.clone());
    verdict(
        good >= 4 && gan_median < mgan_median,
        format!(
            "{good}/5 seeds cover 8 modes with hq >= 0.9, KL below 20% of iter 500 and W < 0.2 [{}]; median modes MGAN {mgan_median} vs GAN {gan_median} {gan_modes:?}",
            lines.join("; ")
        ),
    )
}

fn beta_sweep() -> Verdict {
    let seeds = [1u64, 2, 3];
    let mut configs = Vec::new();
    for beta in [0.0, 0.5] {
        for &s in &seeds {
            configs.push(full_config(4, beta, s));
        }
    }
    let out = train_all(&configs, &[25_000]);
    let modes: Vec<usize> = out.iter().map(|o| o.trace.last().unwrap().modes).collect();
    let (zero, half) = modes.split_at(seeds.len());
    let (m0, m5) = (median(zero.to_vec()), median(half.to_vec()));
    verdict(
        m5 > m0,
        format!("K=4 median modes: beta=0.5 -> {m5} {half:?}, beta=0 -> {m0} {zero:?}"),
    )
}

fn exact_1d_wasserstein(a: &[f64], b: &[f64], width: f64) -> f64 {
    let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        total += (ca - cb).abs() * width;
    }
    total
}

fn metric_oracles() -> Verdict {
    let bins = 30;
    let width = 0.1;
    let grid = HistGrid {
        x_min: -1.5,
        x_max: -1.5 + bins as f64 * width,
        y_min: 0.0,
        y_max: width,
        bins_x: bins,
        bins_y: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut exact_kl = true;
    let cfg = SinkhornConfig::default();
    let random_mass = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..bins)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    for _ in 0..20 {
        let a = Histogram2D::from_mass(grid, random_mass(&mut rng)).unwrap();
        let b = Histogram2D::from_mass(grid, random_mass(&mut rng)).unwrap();
        let exact = exact_1d_wasserstein(&a.mass, &b.mass, width);
        let approx = wasserstein(&a, &b, &cfg).unwrap().distance;
        worst = worst.max((approx - exact).abs());
        exact_kl &= symmetric_kl(&a, &a, 1e-9).unwrap() == 0.0
            && symmetric_kl(&a, &b, 1e-9).unwrap() == symmetric_kl(&b, &a, 1e-9).unwrap();
    }
    verdict(
        worst < 0.05 && exact_kl,
        format!("20 1D pairs, worst |Sinkhorn - exact W1| = {worst:.4} (limit 0.05); KL identity and swap symmetry exact: {exact_kl}"),
    )
}

fn determinism() -> Verdict {
    let config = MixtureConfig {
        iterations: 1000,
        seed: 7,
        checkpoint_every: 0,
        ..MixtureConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| {
        let path = dir.path().join(name);
        let mut obs = DirObserver::create(&path).unwrap();
        run(config.clone(), RingSpec::default(), EvalConfig::default(), &mut obs).unwrap();
        std::fs::read(path.join("metrics.csv")).unwrap()
    };
    let (a, b) = (read("a"), read("b"));
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    verdict(
        a == b && rows == 2,
        format!("two 1000-iteration runs, {rows} metric rows, metrics.csv byte-identical: {}", a == b),
    )
}

/// Number, name, check and runtime budget in seconds.
type Criterion = (usize, &'static str, fn() -> Verdict, f64);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "gradient correctness", gradient_correctness, 10.0),
        (2, "optimal classifier/discriminator probes", optimality_probes, 30.0),
        (3, "value identity", value_identity, 60.0),
        (4, "equilibrium value", equilibrium_value, 10.0),
        (5, "mode coverage", mode_coverage_runs, 1800.0),
        (6, "beta sweep", beta_sweep, 900.0),
        (7, "metric oracles", metric_oracles, 30.0),
        (8, "determinism", determinism, 120.0),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        let in_budget = secs <= budget;
        let pass = v.pass && in_budget;
        let status = if pass { "PASS" } else { "FAIL" };
        let timing = if in_budget {
            format!("{secs:.1}s (budget {budget:.0}s, {cores} cores)")
        } else {
            format!("{secs:.1}s, over the {budget:.0}s budget on {cores} cores")
        };
        println!("criterion {n} ({name}): {status} in {timing}: {}", v.detail);
        failed += (!pass) as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
