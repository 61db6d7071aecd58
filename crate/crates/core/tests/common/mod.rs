#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares an analytic gradient with central differences of `f`.
pub fn grad_check(x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    rel_err(analytic, &numeric_grad(x, f))
}

/// A three-dataset, single-seed suite small enough for pipeline tests.
pub fn quick_config() -> xferlab::config::ChainConfig {
    use xferlab::toy::LrSchedule;
    let mut cfg = xferlab::config::default_toy_suite();
    cfg.experiment = "quick".into();
    cfg.seeds = vec![0];
    cfg.datasets
        .retain(|d| ["alpha-a", "alpha-b", "delta-a"].contains(&d.id.as_str()));
    for d in &mut cfg.datasets {
        d.n_train = 24;
        d.n_val = 8;
    }
    cfg.pretrain.n_train = 32;
    cfg.pretrain.n_val = 8;
    for (stage, steps) in [
        (&mut cfg.stages.pretrain, 20),
        (&mut cfg.stages.source, 20),
        (&mut cfg.stages.target, 6),
    ] {
        stage.steps = steps;
        stage.schedule = LrSchedule::Constant;
        stage.lr_candidates = vec![0.1];
    }
    cfg
}
