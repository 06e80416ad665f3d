//! Monte-Carlo sweeps.
//!
//! Every trial draws its scenario, RIS configuration and noise from streams
//! keyed by `(seed, trial)` only, so all sweep points see the same random
//! draws and all algorithms run on the same measurements.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::metrics::{mean, nmse_kruskal, std_dev, to_db};
use super::output;
use crate::dsmdt::{run_ds_mdt, Algorithm, DsMdtOptions, StageTimes};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, domain};
use crate::scenario::{generate, MeasurementSet, ScenarioConfig};

/// Version of the CSV column layout.
pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "RISCHAN_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    P,
    Snr,
    Q,
    M,
    Pmis,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::P => "p",
            SweepKind::Snr => "snr",
            SweepKind::Q => "q",
            SweepKind::M => "m",
            SweepKind::Pmis => "pmis",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" => Ok(SweepKind::P),
            "snr" | "snr_db" => Ok(SweepKind::Snr),
            "q" => Ok(SweepKind::Q),
            "m" => Ok(SweepKind::M),
            "pmis" | "p_mis" => Ok(SweepKind::Pmis),
            other => Err(Error::Config(format!(
                "unknown sweep `{other}` (expected p, snr, q, m or pmis)"
            ))),
        }
    }

    /// Scenario for sweep value `v` (the mis-selection probability leaves
    /// the scenario unchanged).
    pub fn apply(self, base: &ScenarioConfig, v: f64) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "sweep value {v} must be a positive integer"
                )))
            }
        };
        match self {
            SweepKind::P => cfg.p = count(v)?,
            SweepKind::Q => cfg.q = count(v)?,
            SweepKind::M => cfg.m = count(v)?,
            SweepKind::Snr => cfg.snr_db = v,
            SweepKind::Pmis => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("p_mis {v} must lie in [0, 1]")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: ScenarioConfig,
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub output_path: Option<PathBuf>,
    /// Optional per-trial JSON-lines dump.
    pub dump_path: Option<PathBuf>,
    pub workers: Option<usize>,
    pub progress: bool,
}

impl ExperimentSpec {
    pub fn new(
        base: ScenarioConfig,
        sweep: SweepKind,
        values: Vec<f64>,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self {
            base,
            sweep,
            values,
            trials,
            seed,
            algorithms: vec![Algorithm::Dsmdt],
            output_path: None,
            dump_path: None,
            workers: None,
            progress: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        for &v in &self.values {
            self.sweep.apply(&self.base, v)?;
        }
        Ok(())
    }
}

/// Outcome of one algorithm on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Mean linear NMSE over UEs; `None` for failed trials.
    pub nmse: Option<f64>,
    pub nmse_per_ue: Vec<f64>,
    pub l1_true: usize,
    pub l1_hat: usize,
    pub l2_true: Vec<usize>,
    pub l2_hat: Vec<usize>,
    pub reference: usize,
    pub valid: bool,
    pub fallback: bool,
    pub mis_selected: bool,
    pub failure: Option<String>,
    pub times: StageTimes,
    pub wall_time: f64,
}

/// Aggregated metrics for one (sweep value, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub sweep: SweepKind,
    #[serde(deserialize_with = "nan_as_null")]
    pub sweep_value: f64,
    pub algorithm: Algorithm,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    /// dB of the linear NMSE averaged over UEs and successful trials.
    #[serde(deserialize_with = "nan_as_null")]
    pub mean_nmse_db: f64,
    /// Standard deviation of the per-trial NMSE in dB.
    #[serde(deserialize_with = "nan_as_null")]
    pub nmse_std_db: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub pesr_l1: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub pesr_l2_ref: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub pesr_l2_other: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l1_mean: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l1_std: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l2_ref_mean: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l2_ref_std: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l2_other_mean: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub encp_l2_other_std: f64,
    /// Fraction of successful trials whose first estimate passed the vote.
    #[serde(deserialize_with = "nan_as_null")]
    pub validity_rate: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub fallback_rate: f64,
    #[serde(deserialize_with = "nan_as_null")]
    pub mis_selection_rate: f64,
    /// Mean seconds per trial.
    #[serde(deserialize_with = "nan_as_null")]
    pub wall_time: f64,
}

// serde_json writes non-finite floats as null; read them back as NaN.
fn nan_as_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub fn worker_count(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| {
            std::env::var(WORKERS_ENV)
                .ok()
                .and_then(|v| v.trim().parse().ok())
        })
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Evaluates `f(0..n)` on up to `workers` threads, preserving order.
pub fn map_jobs<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(|| (0..n).into_par_iter().map(&f).collect());
            }
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = std::time::Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, &[domain::TRIAL, trial as u64])
}

/// Runs one algorithm on a prepared measurement set and scores it.
pub fn evaluate(
    ms: &MeasurementSet,
    cfg: &ScenarioConfig,
    alg: Algorithm,
    p_mis: f64,
    seed: u64,
) -> TrialRecord {
    let mut opts = DsMdtOptions::for_algorithm(alg, cfg.l2_overestimate, &ms.scenario);
    opts.p_mis = p_mis;
    opts.seed = seed;
    let (report, wall) = timed(|| run_ds_mdt(ms, &opts));
    let sc = &ms.scenario;
    let mut rec = TrialRecord {
        sweep_value: f64::NAN,
        trial: 0,
        seed,
        algorithm: alg,
        nmse: None,
        nmse_per_ue: Vec::new(),
        l1_true: sc.bs.path_count(),
        l1_hat: report.l1,
        l2_true: sc.ues.iter().map(|u| u.path_count()).collect(),
        l2_hat: report.ues.iter().map(|u| u.l2).collect(),
        reference: report.reference,
        valid: report.valid,
        fallback: report.fallback_used,
        mis_selected: report.mis_selected,
        failure: report.failure.clone(),
        times: report.times,
        wall_time: wall,
    };
    if report.is_failure() {
        return rec;
    }
    let per_ue: Result<Vec<f64>> = (0..ms.k())
        .map(|k| {
            let truth = sc.cascaded(k).channel_kruskal(cfg.p, cfg.m, cfg.n1, cfg.n2);
            nmse_kruskal(&report.channel(k), &truth)
        })
        .collect();
    match per_ue {
        Ok(v) => {
            rec.nmse = Some(mean(&v));
            rec.nmse_per_ue = v;
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

fn failed_record(value: f64, trial: usize, seed: u64, alg: Algorithm, err: &Error) -> TrialRecord {
    TrialRecord {
        sweep_value: value,
        trial,
        seed,
        algorithm: alg,
        nmse: None,
        nmse_per_ue: Vec::new(),
        l1_true: 0,
        l1_hat: 0,
        l2_true: Vec::new(),
        l2_hat: Vec::new(),
        reference: 0,
        valid: false,
        fallback: false,
        mis_selected: false,
        failure: Some(err.to_string()),
        times: StageTimes::default(),
        wall_time: 0.0,
    }
}

/// All per-trial records, ordered by (sweep value, trial, algorithm).
pub fn run_trials(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let total = spec.values.len() * spec.trials;
    let done = AtomicUsize::new(0);
    let step = (total / 10).max(1);
    let workers = worker_count(spec.workers);
    let per_job = map_jobs(total, workers, |job| {
        let (vi, trial) = (job / spec.trials, job % spec.trials);
        let value = spec.values[vi];
        let seed = trial_seed(spec.seed, trial);
        let cfg = spec
            .sweep
            .apply(&spec.base, value)
            .expect("validated above");
        let p_mis = if spec.sweep == SweepKind::Pmis {
            value
        } else {
            0.0
        };
        let recs: Vec<TrialRecord> = match generate(&cfg, seed) {
            Ok(ms) => spec
                .algorithms
                .iter()
                .map(|&alg| {
                    let mut r = evaluate(&ms, &cfg, alg, p_mis, seed);
                    r.sweep_value = value;
                    r.trial = trial;
                    r
                })
                .collect(),
            Err(e) => spec
                .algorithms
                .iter()
                .map(|&alg| failed_record(value, trial, seed, alg, &e))
                .collect(),
        };
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        if spec.progress && (n.is_multiple_of(step) || n == total) {
            eprintln!("[{}] {n}/{total} trials", spec.sweep.name());
        }
        recs
    });
    Ok(per_job.into_iter().flatten().collect())
}

/// Aggregates records into one row per (sweep value, algorithm), in the
/// order given by `values` and `algorithms`.
pub fn aggregate(
    records: &[TrialRecord],
    sweep: SweepKind,
    values: &[f64],
    algorithms: &[Algorithm],
) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &v in values {
        for &alg in algorithms {
            let recs: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.algorithm == alg && r.sweep_value.to_bits() == v.to_bits())
                .collect();
            rows.push(aggregate_group(&recs, sweep, v, alg));
        }
    }
    rows
}

fn aggregate_group(
    recs: &[&TrialRecord],
    sweep: SweepKind,
    value: f64,
    alg: Algorithm,
) -> ResultRow {
    let trials = recs.len();
    let ok: Vec<&TrialRecord> = recs
        .iter()
        .copied()
        .filter(|r| r.failure.is_none() && r.nmse.is_some())
        .collect();
    let lin: Vec<f64> = ok.iter().map(|r| r.nmse.unwrap()).collect();
    let db: Vec<f64> = lin.iter().map(|&v| to_db(v)).collect();
    let frac = |n: usize, d: usize| {
        if d == 0 {
            f64::NAN
        } else {
            n as f64 / d as f64
        }
    };

    let l1: Vec<f64> = ok.iter().map(|r| r.l1_hat as f64).collect();
    let l2_ref: Vec<f64> = ok.iter().map(|r| r.l2_hat[r.reference] as f64).collect();
    let l2_other: Vec<f64> = ok
        .iter()
        .flat_map(|r| {
            r.l2_hat
                .iter()
                .enumerate()
                .filter(move |(k, _)| *k != r.reference)
                .map(|(_, &v)| v as f64)
        })
        .collect();
    let other_pairs = ok
        .iter()
        .map(|r| r.l2_hat.len().saturating_sub(1))
        .sum::<usize>()
        + recs
            .iter()
            .filter(|r| r.failure.is_some() || r.nmse.is_none())
            .map(|r| r.l2_true.len().saturating_sub(1))
            .sum::<usize>();
    let hits_l1 = ok.iter().filter(|r| r.l1_hat == r.l1_true).count();
    let hits_ref = ok
        .iter()
        .filter(|r| r.l2_hat[r.reference] == r.l2_true[r.reference])
        .count();
    let hits_other = ok
        .iter()
        .map(|r| {
            (0..r.l2_hat.len())
                .filter(|&k| k != r.reference && r.l2_hat[k] == r.l2_true[k])
                .count()
        })
        .sum::<usize>();

    ResultRow {
        schema_version: SCHEMA_VERSION,
        sweep,
        sweep_value: value,
        algorithm: alg,
        trials,
        successes: ok.len(),
        failures: trials - ok.len(),
        mean_nmse_db: if lin.is_empty() {
            f64::NAN
        } else {
            to_db(mean(&lin))
        },
        nmse_std_db: std_dev(&db),
        pesr_l1: frac(hits_l1, trials),
        pesr_l2_ref: frac(hits_ref, trials),
        pesr_l2_other: frac(hits_other, other_pairs),
        encp_l1_mean: mean(&l1),
        encp_l1_std: std_dev(&l1),
        encp_l2_ref_mean: mean(&l2_ref),
        encp_l2_ref_std: std_dev(&l2_ref),
        encp_l2_other_mean: mean(&l2_other),
        encp_l2_other_std: std_dev(&l2_other),
        validity_rate: frac(
            ok.iter().filter(|r| r.valid && !r.fallback).count(),
            ok.len(),
        ),
        fallback_rate: frac(ok.iter().filter(|r| r.fallback).count(), ok.len()),
        mis_selection_rate: frac(ok.iter().filter(|r| r.mis_selected).count(), ok.len()),
        wall_time: mean(&recs.iter().map(|r| r.wall_time).collect::<Vec<_>>()),
    }
}

/// Runs the sweep and aggregates; also returns the per-trial records.
/// Writes the summary and the per-trial dump when output paths are set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(Vec<ResultRow>, Vec<TrialRecord>)> {
    let records = run_trials(spec)?;
    let rows = aggregate(&records, spec.sweep, &spec.values, &spec.algorithms);
    if let Some(path) = &spec.output_path {
        output::save_rows(path, &rows, output::Format::from_path(path))?;
    }
    if let Some(path) = &spec.dump_path {
        output::save_trials(path, &records)?;
    }
    Ok((rows, records))
}
