//! Noiseless exact-recovery suite behind the `selftest` subcommand.

use serde::{Deserialize, Serialize};

use super::experiment::{evaluate, map_jobs, trial_seed, worker_count};
use super::metrics::to_db;
use crate::channel::steer_ula;
use crate::dsmdt::Algorithm;
use crate::scenario::{measure, sample_separated_scenario, ScenarioConfig};
use crate::subspace::{mdl_detect, music_ula, MusicGrid, SignalSubspace};
use crate::tensor::{CMatrix, C64};

/// Reconstruction NMSE a noiseless trial must reach.
pub const EXACT_DB: f64 = -60.0;
/// Fraction of noiseless trials that must reach [`EXACT_DB`].
pub const REQUIRED_RATE: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Noiseless desk measurement with every parameter at least 4 BS-beamwidths
/// apart.
pub fn noiseless_desk_trial(seed: u64) -> (ScenarioConfig, crate::scenario::MeasurementSet) {
    let mut cfg = ScenarioConfig::desk();
    cfg.snr_db = f64::INFINITY;
    let sc = sample_separated_scenario(&cfg, seed, 4.0 / cfg.m as f64);
    let ms = measure(&cfg, sc, seed).expect("desk preset is valid");
    (cfg, ms)
}

/// Runs `alg` on `trials` noiseless scenarios; returns the per-trial NMSE in
/// dB (`None` for failed trials).
pub fn noiseless_nmse_db(
    alg: Algorithm,
    trials: usize,
    seed: u64,
    workers: Option<usize>,
) -> Vec<Option<f64>> {
    map_jobs(trials, worker_count(workers), |t| {
        let s = trial_seed(seed, t);
        let (cfg, ms) = noiseless_desk_trial(s);
        evaluate(&ms, &cfg, alg, 0.0, s).nmse.map(to_db)
    })
}

fn recovery_check(alg: Algorithm, trials: usize, seed: u64, workers: Option<usize>) -> Check {
    let res = noiseless_nmse_db(alg, trials, seed, workers);
    let ok = res
        .iter()
        .filter(|v| v.is_some_and(|db| db < EXACT_DB))
        .count();
    let worst = res
        .iter()
        .map(|v| v.unwrap_or(f64::INFINITY))
        .fold(f64::NEG_INFINITY, f64::max);
    let rate = ok as f64 / trials.max(1) as f64;
    Check {
        name: format!("noiseless recovery ({})", alg.name()),
        passed: rate >= REQUIRED_RATE,
        detail: format!("{ok}/{trials} trials below {EXACT_DB} dB, worst {worst:.1} dB"),
    }
}

fn music_check() -> Check {
    let m = 16;
    let truth = [0.3, -0.45];
    // two uncorrelated snapshots per source
    let x = CMatrix::from_fn(m, 4, |i, t| {
        let a = steer_ula(m, truth[t % 2]);
        a[i] * C64::from_polar(1.0, 0.7 * t as f64)
    });
    let sub = SignalSubspace::from_snapshots(&x, 2);
    let grid = MusicGrid::new(-1.0, 1.0, true);
    let est = music_ula(&sub, &grid, 2);
    let mut want = truth.to_vec();
    want.sort_by(f64::total_cmp);
    let err = est
        .params
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Check {
        name: "MUSIC two-tone".into(),
        passed: est.params.len() == 2 && err <= grid.resolution(),
        detail: format!("estimates {:?}, max error {err:.2e}", est.params),
    }
}

fn mdl_check() -> Check {
    let mut eig = vec![10.0, 7.0, 4.0];
    eig.extend(std::iter::repeat_n(1e-9, 13));
    let got = mdl_detect(&eig, 1000, 15);
    Check {
        name: "MDL exact low rank".into(),
        passed: got == Ok(3),
        detail: format!("detected {got:?}, expected 3"),
    }
}

/// Every check in order; `trials` noiseless scenarios per algorithm.
pub fn run_selftest(trials: usize, seed: u64, workers: Option<usize>) -> Vec<Check> {
    vec![
        music_check(),
        mdl_check(),
        recovery_check(Algorithm::DsmdtKpn, trials, seed, workers),
        recovery_check(Algorithm::Dsmdt, trials, seed, workers),
    ]
}
