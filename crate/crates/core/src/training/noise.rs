//! Two regression tasks sharing nothing but the loss: one with clean targets,
//! one with ten times the noise. Learned log-weights should rank the noisy
//! task higher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{uncertainty_weighted, Adam, AdamConfig};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::nn::{linear, Init, LinearParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseExperimentConfig {
    pub samples: usize,
    pub features: usize,
    pub clean_sigma: f64,
    pub noisy_sigma: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NoiseExperimentConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            features: 4,
            clean_sigma: 0.1,
            noisy_sigma: 1.0,
            steps: 600,
            learning_rate: 0.05,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseOutcome {
    pub s_clean: f64,
    pub s_noisy: f64,
    pub mse_clean: f64,
    pub mse_noisy: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn mse(g: &mut Graph, store: &ParamStore, head: &LinearParams, x: Var, y: Var, n: usize) -> Result<Var> {
    let pred = linear(g, store, head, x)?;
    let diff = g.sub(pred, y)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq)?;
    g.scale(total, 1.0 / n as f64)
}

pub fn noise_experiment(cfg: &NoiseExperimentConfig) -> Result<NoiseOutcome> {
    let (n, f) = (cfg.samples, cfg.features);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x: Vec<f64> = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let coef: Vec<f64> = (0..2 * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = |rng: &mut ChaCha8Rng, task: usize, sigma: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let clean: f64 = (0..f).map(|j| x[i * f + j] * coef[task * f + j]).sum();
                clean + sigma * normal(rng)
            })
            .collect()
    };
    let y_clean = target(&mut rng, 0, cfg.clean_sigma);
    let y_noisy = target(&mut rng, 1, cfg.noisy_sigma);

    let mut store = ParamStore::new();
    let mut init = Init::new(cfg.seed ^ 0x5eed);
    let clean_head = LinearParams::new(&mut store, "clean", f, 1, &mut init);
    let noisy_head = LinearParams::new(&mut store, "noisy", f, 1, &mut init);
    let s_clean = store.add("s_clean", Tensor::scalar(0.0));
    let s_noisy = store.add("s_noisy", Tensor::scalar(0.0));
    let mut adam = Adam::new(&store, cfg.learning_rate, AdamConfig::default());

    let x = Tensor::new(vec![n, f], x)?;
    let y_clean = Tensor::new(vec![n, 1], y_clean)?;
    let y_noisy = Tensor::new(vec![n, 1], y_noisy)?;
    let mut last = (0.0, 0.0);
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let yc = g.constant(y_clean.clone());
        let yn = g.constant(y_noisy.clone());
        let lc = mse(&mut g, &store, &clean_head, xv, yc, n)?;
        let ln = mse(&mut g, &store, &noisy_head, xv, yn, n)?;
        let sc = g.param(&store, s_clean);
        let sn = g.param(&store, s_noisy);
        let total = uncertainty_weighted(&mut g, &[lc, ln], &[sc, sn])?;
        last = (g.value(lc).item(), g.value(ln).item());
        g.backward(total)?;
        g.accumulate_into(&mut store);
        adam.step(&mut store);
        store.zero_grad();
    }
    Ok(NoiseOutcome {
        s_clean: store.get(s_clean).item(),
        s_noisy: store.get(s_noisy).item(),
        mse_clean: last.0,
        mse_noisy: last.1,
    })
}
