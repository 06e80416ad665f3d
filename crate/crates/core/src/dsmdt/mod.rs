//! Double-structured multi-user estimation.
//!
//! Pipeline: pick the strongest UE as reference, estimate the shared BS
//! angles from all UEs jointly, decompose the reference UE fully (delays per
//! row, RIS angles, gains) to learn the per-row offsets of the RIS-BS link,
//! then estimate only one row per remaining UE and extend it by those
//! offsets. A row-structure vote decides whether the result is trusted; if
//! not, every UE is re-estimated independently.

pub mod stages;
pub mod validity;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{steering_columns, upa_columns};
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::scenario::{ChannelScenario, MeasurementSet};
use crate::subspace::{AoaSearcher, MusicGrid};
use crate::tensor::{CMatrix, Kruskal, C64};

use stages::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dsmdt,
    DsmdtKpn,
    IndependentFallback,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::Dsmdt,
        Algorithm::DsmdtKpn,
        Algorithm::IndependentFallback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dsmdt => "dsmdt",
            Algorithm::DsmdtKpn => "dsmdt_kpn",
            Algorithm::IndependentFallback => "independent_fallback",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm `{s}` (expected dsmdt, dsmdt_kpn or independent_fallback)"
                ))
            })
    }
}

/// True path counts for the known-path-number variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCounts {
    pub l1: usize,
    pub l2: Vec<usize>,
}

impl KnownCounts {
    pub fn from_scenario(sc: &ChannelScenario) -> Self {
        Self {
            l1: sc.bs.path_count(),
            l2: sc.ues.iter().map(|u| u.path_count()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsMdtOptions {
    /// Estimate every UE as its own reference (no offset sharing).
    pub independent: bool,
    /// Skip count detection and use these path counts.
    pub known: Option<KnownCounts>,
    /// Initial (over-)estimate of the UE-RIS path count.
    pub l2_init: usize,
    pub epsilon: f64,
    /// Reliable-UE vote threshold; defaults to `⌈K/2⌉`.
    pub k0: Option<usize>,
    /// Re-run independently when the validity vote fails.
    pub fallback: bool,
    /// Probability of forcing the weakest UE as reference.
    pub p_mis: f64,
    /// Seed for the mis-selection draw.
    pub seed: u64,
    pub phi_grid: MusicGrid,
    pub delay_grid: MusicGrid,
    pub ris_grid: MusicGrid,
}

impl Default for DsMdtOptions {
    fn default() -> Self {
        Self {
            independent: false,
            known: None,
            l2_init: 4,
            epsilon: validity::DEFAULT_EPSILON,
            k0: None,
            fallback: true,
            p_mis: 0.0,
            seed: 0,
            phi_grid: MusicGrid::bs_angle(),
            delay_grid: MusicGrid::delay(),
            ris_grid: MusicGrid::ris_axis(),
        }
    }
}

impl DsMdtOptions {
    /// Options for `alg`; the known-count variant reads the true counts
    /// from `truth`.
    pub fn for_algorithm(alg: Algorithm, l2_init: usize, truth: &ChannelScenario) -> Self {
        let mut o = Self {
            l2_init,
            ..Self::default()
        };
        match alg {
            Algorithm::Dsmdt => {}
            Algorithm::DsmdtKpn => o.known = Some(KnownCounts::from_scenario(truth)),
            Algorithm::IndependentFallback => o.independent = true,
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeEstimate {
    pub tau: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub beta: DMatrix<C64>,
    pub l2: usize,
    pub reliable: bool,
    pub tau_deviation: Option<f64>,
    pub beta_deviation: Option<f64>,
    /// Candidate columns removed by offset or gain screening.
    pub outliers: usize,
    /// Relative least-squares residual of the final fit.
    pub residual: f64,
    pub ridge: bool,
    pub degraded: bool,
    /// Normalized correlation of each explicitly searched RIS column.
    pub aoa_scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub aod: f64,
    pub delay: f64,
    pub aoa: f64,
    pub gain: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.aod + self.delay + self.aoa + self.gain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// `(P, M, N1, N2)`.
    pub dims: (usize, usize, usize, usize),
    pub phi: Vec<f64>,
    pub l1: usize,
    pub reference: usize,
    pub anchor_row: usize,
    pub offsets: Offsets,
    pub ues: Vec<UeEstimate>,
    pub valid: bool,
    pub fallback_used: bool,
    pub mis_selected: bool,
    pub failure: Option<String>,
    pub warnings: Vec<String>,
    pub aod_eigenvalues: Vec<f64>,
    pub times: StageTimes,
}

impl EstimateReport {
    fn failed(dims: (usize, usize, usize, usize), err: &Error) -> Self {
        Self {
            dims,
            phi: Vec::new(),
            l1: 0,
            reference: 0,
            anchor_row: 0,
            offsets: Offsets::default(),
            ues: Vec::new(),
            valid: false,
            fallback_used: false,
            mis_selected: false,
            failure: Some(err.to_string()),
            warnings: Vec::new(),
            aod_eigenvalues: Vec::new(),
            times: StageTimes::default(),
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    /// Reconstructed channel of UE `k` (`P x M x N`) in factored form.
    pub fn channel(&self, k: usize) -> Kruskal {
        let (p, m, n1, n2) = self.dims;
        let ue = &self.ues[k];
        let u = ue.tau.len();
        let flat_phi: Vec<f64> = (0..u).map(|i| self.phi[i % self.l1]).collect();
        Kruskal::new(
            steering_columns(p, ue.tau.as_slice()),
            steering_columns(m, &flat_phi),
            upa_columns(n1, n2, ue.omega.as_slice(), ue.psi.as_slice()),
            ue.beta.as_slice().to_vec(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Index of the tensor with the largest energy (smallest index on ties).
pub fn select_reference(tensors: &[crate::tensor::Tensor3]) -> usize {
    energies_argmax(&tensors.iter().map(|t| t.frobenius_sq()).collect::<Vec<_>>())
}

fn energies_argmax(e: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in e.iter().enumerate() {
        if v > e[best] {
            best = i;
        }
    }
    best
}

fn energies_argmin(e: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in e.iter().enumerate() {
        if v < e[best] {
            best = i;
        }
    }
    best
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(std::time::Instant);
#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start() -> Self {
        Clock(std::time::Instant::now())
    }
    fn lap(&mut self) -> f64 {
        let now = std::time::Instant::now();
        let dt = (now - self.0).as_secs_f64();
        self.0 = now;
        dt
    }
}

// no monotonic clock on the bare wasm target
#[cfg(target_arch = "wasm32")]
struct Clock;
#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start() -> Self {
        Clock
    }
    fn lap(&mut self) -> f64 {
        0.0
    }
}

struct Context<'a> {
    ms: &'a MeasurementSet,
    opts: &'a DsMdtOptions,
    phi: &'a [f64],
    rows: Vec<Vec<CMatrix>>,
    anchor: usize,
    searcher: &'a AoaSearcher,
    times: StageTimes,
}

/// Runs the full estimator. Never panics on bad data: stage errors end up
/// in `failure` and the report carries no UE estimates.
pub fn run_ds_mdt(ms: &MeasurementSet, opts: &DsMdtOptions) -> EstimateReport {
    let (p, m, _) = if ms.tensors.is_empty() {
        (0, 0, 0)
    } else {
        ms.dims()
    };
    let dims = (p, m, ms.n1, ms.n2);
    if let Err(e) = ms.validate() {
        return EstimateReport::failed(dims, &e);
    }
    let mut clock = Clock::start();
    let energies: Vec<f64> = ms.tensors.iter().map(|t| t.frobenius_sq()).collect();
    let mut mis_selected = false;
    let mut reference = energies_argmax(&energies);
    if opts.p_mis > 0.0 {
        let draw: f64 = stream(opts.seed, &[domain::MIS_SELECTION]).random();
        if draw < opts.p_mis {
            reference = energies_argmin(&energies);
            mis_selected = true;
        }
    }
    let searcher = AoaSearcher::new(&ms.theta, ms.n1, ms.n2, opts.ris_grid, opts.ris_grid);
    let snapshots = p * ms.dims().2 * ms.k();
    let aod = match estimate_common_aod_from(
        ms.mode2_covariance(),
        snapshots,
        opts.known.as_ref().map(|k| k.l1),
        &opts.phi_grid,
    ) {
        Ok(a) => a,
        Err(e) => return EstimateReport::failed(dims, &e),
    };
    let rows: Result<Vec<Vec<CMatrix>>> = ms
        .tensors
        .iter()
        .map(|y| project_rows(y, &aod.phi))
        .collect();
    let rows = match rows {
        Ok(r) => r,
        Err(e) => return EstimateReport::failed(dims, &e),
    };
    let row_energy: Vec<f64> = rows[reference].iter().map(|x| x.norm_squared()).collect();
    let mut ctx = Context {
        ms,
        opts,
        phi: &aod.phi,
        anchor: energies_argmax(&row_energy),
        rows,
        searcher: &searcher,
        times: StageTimes {
            aod: clock.lap(),
            ..StageTimes::default()
        },
    };

    let mut warnings = Vec::new();
    if aod.degraded {
        warnings.push("BS-angle spectrum had fewer peaks than detected paths".to_string());
    }
    if aod.phi.len() < 2 {
        warnings.push(
            "single RIS-BS path: row structure unavailable, validity check is vacuous".to_string(),
        );
    }
    let primary = estimate_all(&mut ctx, reference, opts.independent);
    let mut report = match primary {
        Ok(r) if r.valid || !opts.fallback || opts.independent => Ok(r),
        Ok(r) => {
            warnings.push("validity vote failed; switched to independent estimation".to_string());
            match estimate_all(&mut ctx, reference, true) {
                Ok(mut fb) => {
                    fb.fallback_used = true;
                    Ok(fb)
                }
                Err(_) => Ok(r),
            }
        }
        Err(e) if opts.fallback && !opts.independent => {
            warnings.push(format!(
                "structured estimation failed ({e}); switched to independent estimation"
            ));
            estimate_all(&mut ctx, reference, true).map(|mut fb| {
                fb.fallback_used = true;
                fb
            })
        }
        Err(e) => Err(e),
    };
    match &mut report {
        Ok(r) => {
            r.mis_selected = mis_selected;
            r.aod_eigenvalues = aod.eigenvalues.clone();
            r.warnings.splice(0..0, warnings);
            r.times = ctx.times;
            report.unwrap()
        }
        Err(e) => {
            let mut f = EstimateReport::failed(dims, e);
            f.warnings = warnings;
            f.times = ctx.times;
            f
        }
    }
}

fn estimate_all(
    ctx: &mut Context<'_>,
    reference: usize,
    independent: bool,
) -> Result<EstimateReport> {
    let ms = ctx.ms;
    let k_total = ms.k();
    let l1 = ctx.phi.len();
    let (reference_est, offsets) = estimate_as_reference(ctx, reference)?;
    let mut ues: Vec<Option<UeEstimate>> = vec![None; k_total];
    ues[reference] = Some(reference_est);
    let mut warnings = Vec::new();
    for k in 0..k_total {
        if k == reference {
            continue;
        }
        let est = if independent {
            estimate_as_reference(ctx, k)?.0
        } else {
            estimate_structured(ctx, k, &offsets, &mut warnings)?
        };
        ues[k] = Some(est);
    }
    let ues: Vec<UeEstimate> = ues
        .into_iter()
        .map(|u| u.expect("every UE estimated"))
        .collect();
    let k0 = ctx.opts.k0.unwrap_or_else(|| validity::default_k0(k_total));
    let reliable: Vec<bool> = ues.iter().map(|u| u.reliable).collect();
    let valid = l1 < 2 || validity::vote(&reliable, k0);
    let (p, m, _) = ms.dims();
    Ok(EstimateReport {
        dims: (p, m, ms.n1, ms.n2),
        phi: ctx.phi.to_vec(),
        l1,
        reference,
        anchor_row: ctx.anchor,
        offsets,
        ues,
        valid,
        fallback_used: false,
        mis_selected: false,
        failure: None,
        warnings,
        aod_eigenvalues: Vec::new(),
        times: StageTimes::default(),
    })
}

fn finish_ue(
    tau: DMatrix<f64>,
    omega: DMatrix<f64>,
    psi: DMatrix<f64>,
    gains: GainEstimate,
    outliers: usize,
    degraded: bool,
    aoa_scores: Vec<f64>,
    epsilon: f64,
) -> UeEstimate {
    let tau_dev = validity::tau_deviation(&tau);
    let beta_dev = validity::beta_deviation(&gains.beta);
    UeEstimate {
        l2: tau.ncols(),
        reliable: validity::ue_reliable(&tau, &gains.beta, epsilon),
        tau_deviation: tau_dev,
        beta_deviation: beta_dev,
        tau,
        omega,
        psi,
        beta: gains.beta,
        outliers,
        residual: gains.residual,
        ridge: gains.ridge,
        degraded,
        aoa_scores,
    }
}

fn l2_for(ctx: &Context<'_>, k: usize) -> usize {
    match &ctx.opts.known {
        Some(known) => known.l2[k],
        None => ctx.opts.l2_init,
    }
}

fn estimate_as_reference(ctx: &mut Context<'_>, k: usize) -> Result<(UeEstimate, Offsets)> {
    let mut clock = Clock::start();
    let y = &ctx.ms.tensors[k];
    let (p, m, _) = y.dims();
    let delays = estimate_reference_delays(
        &ctx.rows[k],
        ctx.anchor,
        l2_for(ctx, k),
        &ctx.opts.delay_grid,
        ctx.opts.known.is_none(),
    )?;
    ctx.times.delay += clock.lap();

    let (a, b) = delay_bs_factors(ctx.phi, &delays.tau, p, m);
    let c = ris_factor_ls(y, &a, &b)?;
    let all: Vec<usize> = (0..delays.tau.len()).collect();
    let (om, ps, scores) = correlate_columns(&c, &all, ctx.searcher);
    let (l1, l2) = delays.tau.shape();
    let omega = DMatrix::from_column_slice(l1, l2, &om);
    let psi = DMatrix::from_column_slice(l1, l2, &ps);
    let offsets = Offsets {
        tau: delays.offsets.clone(),
        omega: row_offsets(&omega, ctx.anchor),
        psi: row_offsets(&psi, ctx.anchor),
    };
    ctx.times.aoa += clock.lap();

    let gains = estimate_gains(
        y,
        ctx.phi,
        &delays.tau,
        &omega,
        &psi,
        &ctx.ms.theta,
        ctx.ms.n1,
        ctx.ms.n2,
    )?;
    ctx.times.gain += clock.lap();
    let est = finish_ue(
        delays.tau,
        omega,
        psi,
        gains,
        delays.outliers,
        delays.degraded,
        scores,
        ctx.opts.epsilon,
    );
    Ok((est, offsets))
}

fn estimate_structured(
    ctx: &mut Context<'_>,
    k: usize,
    offsets: &Offsets,
    warnings: &mut Vec<String>,
) -> Result<UeEstimate> {
    let mut clock = Clock::start();
    let y = &ctx.ms.tensors[k];
    let (p, m, _) = y.dims();
    let l1 = ctx.phi.len();
    let anchor = ctx.anchor;
    let (tau, degraded) = estimate_other_delays(
        &ctx.rows[k],
        anchor,
        &offsets.tau,
        l2_for(ctx, k),
        &ctx.opts.delay_grid,
    );
    ctx.times.delay += clock.lap();

    let (a, b) = delay_bs_factors(ctx.phi, &tau, p, m);
    let c = ris_factor_ls(y, &a, &b)?;
    let l2 = tau.ncols();
    let anchor_cols: Vec<usize> = (0..l2).map(|l| l * l1 + anchor).collect();
    let (om, ps, scores) = correlate_columns(&c, &anchor_cols, ctx.searcher);
    let omega = extend_rows(&om, &offsets.omega, 2.0);
    let psi = extend_rows(&ps, &offsets.psi, 2.0);
    ctx.times.aoa += clock.lap();

    let (theta, n1, n2) = (&ctx.ms.theta, ctx.ms.n1, ctx.ms.n2);
    let mut gains = estimate_gains(y, ctx.phi, &tau, &omega, &psi, theta, n1, n2)?;
    let (mut tau, mut omega, mut psi) = (tau, omega, psi);
    let mut outliers = 0;
    if ctx.opts.known.is_none() && l1 >= 2 {
        let keep = consistent_gain_columns(&gains.beta, anchor);
        let kept = keep.iter().filter(|&&v| v).count();
        if kept == 0 {
            warnings.push(format!("UE {k}: no gain-consistent columns, keeping all"));
        } else if kept < keep.len() {
            // single re-solve on the retained columns
            outliers = keep.len() - kept;
            tau = select_columns(&tau, &keep);
            omega = select_columns(&omega, &keep);
            psi = select_columns(&psi, &keep);
            gains = estimate_gains(y, ctx.phi, &tau, &omega, &psi, theta, n1, n2)?;
        }
    }
    ctx.times.gain += clock.lap();
    Ok(finish_ue(
        tau,
        omega,
        psi,
        gains,
        outliers,
        degraded,
        scores,
        ctx.opts.epsilon,
    ))
}
