//! Finite-difference harness shared by the gradient and acceptance tests.
#![allow(dead_code)]

use mgan::game::{loss_cd, loss_g};
use mgan::nn::{CdNet, GeneratorBank, Params};
use mgan::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;

fn randomize(params: &mut Params<f64>, std: f64, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

pub fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A small randomized instance of the full game.
struct Game {
    bank: GeneratorBank<f64>,
    cd: CdNet<f64>,
    real: Tensor<f64>,
    noise: Vec<(usize, Tensor<f64>)>,
    indices: Vec<usize>,
    beta: f64,
}

impl Game {
    fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=4);
        let noise_dim = rng.random_range(2..=5);
        let hidden = rng.random_range(3..=7);
        let mut bank = GeneratorBank::<f32>::new(k, noise_dim, hidden, seed).unwrap().cast::<f64>();
        let mut cd = CdNet::<f32>::new(k, hidden, seed + 1).unwrap().cast::<f64>();
        randomize(bank.params_mut(), 0.6, &mut rng);
        randomize(cd.params_mut(), 0.6, &mut rng);
        let real = normal(rng.random_range(2..=6), 2, &mut rng);
        let mut noise = Vec::new();
        let mut indices = Vec::new();
        for g in 0..k {
            let n = rng.random_range(1..=3);
            noise.push((g, normal(n, noise_dim, &mut rng)));
            indices.extend(std::iter::repeat_n(g, n));
        }
        Game {
            bank,
            cd,
            real,
            noise,
            indices,
            beta: rng.random_range(0.0..1.0),
        }
    }

    /// `L_C + L_D + L_G`, with both networks tracked. Returns the loss, the
    /// gradients in generator-then-cd parameter order, and the kink pattern.
    fn eval(&self) -> (f64, Vec<Tensor<f64>>, Vec<bool>) {
        let mut tape = Tape::<f64>::new();
        let gv = self.bank.bind(&mut tape, true);
        let groups: Vec<_> = self.noise.iter().map(|(k, z)| (*k, tape.constant(z.clone()))).collect();
        let fake = self.bank.forward_groups(&mut tape, &gv, &groups).unwrap();
        let cv = self.cd.bind(&mut tape, true);
        let real = tape.constant(self.real.clone());
        let x = tape.concat_rows(&[real, fake]).unwrap();
        let out = self.cd.forward(&mut tape, &cv, x).unwrap();
        let m = self.real.rows();
        let total = m + self.indices.len();
        let d_real = tape.slice_rows(out.d, 0, m).unwrap();
        let d_fake = tape.slice_rows(out.d, m, total).unwrap();
        let c_fake = tape.slice_rows(out.c_logprob, m, total).unwrap();
        let (lc, ld) = loss_cd(&mut tape, d_real, d_fake, c_fake, &self.indices).unwrap();
        let lg = loss_g(&mut tape, d_fake, c_fake, &self.indices, self.beta).unwrap();
        let s = tape.add(lc, ld).unwrap();
        let loss = tape.add(s, lg).unwrap();
        let value = tape.value(loss).item().unwrap();
        let pattern = tape.kink_pattern();
        let mut grads = tape.backward(loss).unwrap();
        let g = gv.vars.iter().chain(&cv.vars).map(|v| grads.take(*v).unwrap()).collect();
        (value, g, pattern)
    }

    fn param_mut(&mut self, which: usize) -> &mut Tensor<f64> {
        let ng = self.bank.params().len();
        if which < ng {
            &mut self.bank.params_mut().tensors_mut()[which]
        } else {
            &mut self.cd.params_mut().tensors_mut()[which - ng]
        }
    }

    fn names(&self) -> Vec<String> {
        self.bank.params().names().iter().chain(self.cd.params().names()).cloned().collect()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Default)]
pub struct Tally {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
}

pub fn check_game(seed: u64, tally: &mut Tally) {
    let mut game = Game::random(seed);
    let (_, analytic, base) = game.eval();
    let names = game.names();
    for (p, name) in names.iter().enumerate() {
        for j in 0..analytic[p].len() {
            let orig = game.param_mut(p).data()[j];
            game.param_mut(p).data_mut()[j] = orig + H;
            let (plus, _, pat_plus) = game.eval();
            game.param_mut(p).data_mut()[j] = orig - H;
            let (minus, _, pat_minus) = game.eval();
            game.param_mut(p).data_mut()[j] = orig;
            // A difference quotient straddling a breakpoint is not a derivative.
            if pat_plus != base || pat_minus != base {
                tally.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * H);
            let err = relative_error(analytic[p].data()[j], fd);
            tally.checked += 1;
            if err > tally.worst {
                tally.worst = err;
                tally.worst_at = format!("seed {seed} {name}[{j}]: analytic {} vs fd {fd}", analytic[p].data()[j]);
            }
        }
    }
}

/// Checks every parameter coordinate of `count` randomized games.
pub fn check_games(count: u64) -> Tally {
    let mut tally = Tally::default();
    for seed in 0..count {
        check_game(seed, &mut tally);
    }
    tally
}
