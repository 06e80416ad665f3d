//! Source-count overestimation study for ULA MUSIC.
//!
//! Two equal-power sources at ±5° off broadside (cosine-domain ±sin 5°),
//! SNR 10 dB. For every array size and assumed source count the two
//! largest pseudospectrum peaks are taken as the estimates; angle NMSE is
//! `Σ(x̂ − x)² / Σx²` averaged linearly over trials.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::experiment::SCHEMA_VERSION;
use super::metrics::to_db;
use super::output;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::scenario::complex_normal;
use crate::subspace::{music_ula, ula_spectrum, MusicGrid, SignalSubspace};
use crate::tensor::{CMatrix, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverestimateSpec {
    pub m_list: Vec<usize>,
    pub counts: Vec<usize>,
    /// Source locations in the `exp(-jπ i x)` domain.
    pub sources: Vec<f64>,
    pub snr_db: f64,
    pub snapshots: usize,
    pub trials: usize,
    pub seed: u64,
    pub spectrum_points: usize,
}

impl OverestimateSpec {
    pub fn new(seed: u64) -> Self {
        let x = 5f64.to_radians().sin();
        Self {
            m_list: vec![8, 16, 32, 64, 128],
            counts: vec![2, 3, 4, 5],
            sources: vec![-x, x],
            snr_db: 10.0,
            snapshots: 64,
            trials: 200,
            seed,
            spectrum_points: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0
            || self.snapshots == 0
            || self.m_list.is_empty()
            || self.counts.is_empty()
        {
            return Err(Error::Config(
                "trials, snapshots, array sizes and counts must be non-empty".into(),
            ));
        }
        if self.sources.is_empty() || self.sources.iter().any(|x| !(-1.0..1.0).contains(x)) {
            return Err(Error::Config("sources must lie in [-1, 1)".into()));
        }
        for &m in &self.m_list {
            if let Some(&c) = self
                .counts
                .iter()
                .find(|&&c| c < self.sources.len() || c >= m)
            {
                return Err(Error::Config(format!(
                    "assumed count {c} must be at least {} and below M = {m}",
                    self.sources.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverestimateRow {
    pub schema_version: u32,
    pub m: usize,
    pub assumed: usize,
    pub trials: usize,
    pub nmse_db: f64,
    /// Mean of `|x̂| − |x|`: negative when the estimates are pulled together.
    pub mean_bias: f64,
    pub degraded_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumDump {
    pub m: usize,
    pub assumed: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverestimateReport {
    pub rows: Vec<OverestimateRow>,
    /// Pseudospectra of the first trial.
    pub spectra: Vec<SpectrumDump>,
}

impl OverestimateReport {
    /// Max minus min NMSE (dB) across assumed counts at one array size.
    pub fn spread_db(&self, m: usize) -> f64 {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.m == m)
            .map(|r| r.nmse_db)
            .collect();
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    pub fn row(&self, m: usize, assumed: usize) -> Option<&OverestimateRow> {
        self.rows.iter().find(|r| r.m == m && r.assumed == assumed)
    }

    /// `summary.csv` plus one `spectrum_m{M}_l{L}.txt` per setting.
    pub fn save(&self, dir: &Path) -> Result<()> {
        output::save_table(&dir.join("summary.csv"), &self.rows)?;
        for s in &self.spectra {
            output::save_spectrum(
                &dir.join(format!("spectrum_m{}_l{}.txt", s.m, s.assumed)),
                &s.points,
            )?;
        }
        Ok(())
    }
}

/// `M x T` snapshots of unit-power sources at `sources` (steering
/// `exp(-jπ i x)`) in white noise of power `10^(-snr_db/10)`.
pub fn ula_snapshots(
    m: usize,
    sources: &[f64],
    snr_db: f64,
    t: usize,
    seed: u64,
    trial: u64,
) -> CMatrix {
    let mut rng = stream(seed, &[domain::OVERESTIMATE, m as u64, trial]);
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let k = sources.len();
    let steer = DMatrix::from_fn(m, k, |i, s| {
        C64::from_polar(1.0, -std::f64::consts::PI * i as f64 * sources[s])
    });
    let sig = DMatrix::from_fn(k, t, |_, _| complex_normal(&mut rng, 1.0));
    let noise = DMatrix::from_fn(m, t, |_, _| complex_normal(&mut rng, noise_var));
    steer * sig + noise
}

/// Two largest peaks paired in ascending order with the sorted truth.
fn estimate(sub: &SignalSubspace, grid: &MusicGrid, want: usize) -> (Vec<f64>, bool) {
    let est = music_ula(sub, grid, want);
    let mut x = est.params;
    if x.is_empty() {
        x.push(0.0);
    }
    while x.len() < want {
        x.push(x[x.len() - 1]);
    }
    x.sort_by(f64::total_cmp);
    (x, est.degraded)
}

pub fn run_appendix_c(spec: &OverestimateSpec) -> Result<OverestimateReport> {
    spec.validate()?;
    let grid = MusicGrid::new(-1.0, 1.0, true);
    let mut truth = spec.sources.clone();
    truth.sort_by(f64::total_cmp);
    let energy: f64 = truth.iter().map(|x| x * x).sum();
    let want = truth.len();

    let mut rows = Vec::new();
    let mut spectra = Vec::new();
    for &m in &spec.m_list {
        // [count][(err, bias, degraded)] accumulated over trials
        let mut acc = vec![(0.0, 0.0, 0usize); spec.counts.len()];
        for trial in 0..spec.trials {
            let x = ula_snapshots(
                m,
                &spec.sources,
                spec.snr_db,
                spec.snapshots,
                spec.seed,
                trial as u64,
            );
            let full = SignalSubspace::from_snapshots(&x, *spec.counts.iter().max().unwrap());
            for (ci, &c) in spec.counts.iter().enumerate() {
                let sub = SignalSubspace {
                    basis: full.basis.columns(0, c).into_owned(),
                    eigenvalues: full.eigenvalues.clone(),
                };
                let (est, degraded) = estimate(&sub, &grid, want);
                let err: f64 = est.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
                let bias: f64 = est
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| a.abs() - b.abs())
                    .sum::<f64>()
                    / want as f64;
                acc[ci].0 += err / energy;
                acc[ci].1 += bias;
                acc[ci].2 += degraded as usize;
                if trial == 0 {
                    spectra.push(SpectrumDump {
                        m,
                        assumed: c,
                        points: ula_spectrum(&sub, -1.0, 1.0, spec.spectrum_points),
                    });
                }
            }
        }
        let n = spec.trials as f64;
        for (ci, &c) in spec.counts.iter().enumerate() {
            rows.push(OverestimateRow {
                schema_version: SCHEMA_VERSION,
                m,
                assumed: c,
                trials: spec.trials,
                nmse_db: to_db(acc[ci].0 / n),
                mean_bias: acc[ci].1 / n,
                degraded_rate: acc[ci].2 as f64 / n,
            });
        }
    }
    Ok(OverestimateReport { rows, spectra })
}
