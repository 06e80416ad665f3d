//! Seeded scenario generation: link paths, RIS configurations and noisy
//! measurement tensors.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize};

use crate::channel::{map_cascaded, BsLink, CascadedParams, UeLink};
use crate::error::{Error, Result};
use crate::rng::{domain, stream};
use crate::tensor::{mode2_covariance, CMatrix, Tensor3, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// How the noise variance is tied to the requested SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// One noise variance for all UEs, set from the mean per-element power
    /// over every UE's noiseless tensor. UEs with weaker links see lower SNR.
    #[default]
    SystemMean,
    /// Each UE's noise variance is set from its own per-element power.
    PerUe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub m: usize,
    pub n1: usize,
    pub n2: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    pub l1: usize,
    /// UE-RIS path count, one entry per UE or a single value for all UEs.
    #[serde(deserialize_with = "one_or_many")]
    pub l2: Vec<usize>,
    pub carrier_freq: f64,
    pub dist_bs: f64,
    pub dist_ue_min: f64,
    pub dist_ue_max: f64,
    pub snr_db: f64,
    pub l2_overestimate: usize,
    pub noise_reference: NoiseReference,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ScenarioConfig {
    /// Full-size profile: 28 GHz, M = 64, 16x16 RIS, K = 8, P = 128, Q = 16.
    pub fn full() -> Self {
        Self {
            m: 64,
            n1: 16,
            n2: 16,
            k: 8,
            p: 128,
            q: 16,
            l1: 3,
            l2: vec![3],
            carrier_freq: 28e9,
            dist_bs: 30.0,
            dist_ue_min: 20.0,
            dist_ue_max: 40.0,
            snr_db: 10.0,
            l2_overestimate: 4,
            noise_reference: NoiseReference::SystemMean,
        }
    }

    /// Reduced profile for quick runs: M = 32, 8x8 RIS, K = 4, P = 64, Q = 12.
    pub fn desk() -> Self {
        Self {
            m: 32,
            n1: 8,
            n2: 8,
            k: 4,
            p: 64,
            q: 12,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected full or desk)"
            ))),
        }
    }

    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn l2_for(&self, ue: usize) -> usize {
        if self.l2.len() == 1 {
            self.l2[0]
        } else {
            self.l2[ue]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("n1", self.n1),
            ("n2", self.n2),
            ("k", self.k),
            ("p", self.p),
            ("q", self.q),
            ("l1", self.l1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.l2.is_empty() || (self.l2.len() != 1 && self.l2.len() != self.k) {
            return Err(Error::Config(format!(
                "l2 must have 1 or k={} entries (got {})",
                self.k,
                self.l2.len()
            )));
        }
        if self.l2.contains(&0) {
            return Err(Error::Config("l2 entries must be positive".into()));
        }
        if self.q <= self.l2_overestimate {
            return Err(Error::Config(format!(
                "q={} must exceed l2_overestimate={}",
                self.q, self.l2_overestimate
            )));
        }
        if self.m <= self.l1 {
            return Err(Error::Config(format!(
                "m={} must exceed l1={}",
                self.m, self.l1
            )));
        }
        if self.p <= self.l2_overestimate {
            return Err(Error::Config(format!(
                "p={} must exceed l2_overestimate={}",
                self.p, self.l2_overestimate
            )));
        }
        if self.l2_overestimate == 0 {
            return Err(Error::Config("l2_overestimate must be positive".into()));
        }
        if !(self.carrier_freq > 0.0 && self.dist_bs > 0.0) {
            return Err(Error::Config(
                "carrier_freq and dist_bs must be positive".into(),
            ));
        }
        if !(self.dist_ue_min > 0.0 && self.dist_ue_min <= self.dist_ue_max) {
            return Err(Error::Config(
                "dist_ue range must satisfy 0 < min <= max".into(),
            ));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db must be a number".into()));
        }
        Ok(())
    }

    /// Free-space gain variance `(c / (4π d f_c))²`.
    pub fn gain_variance(&self, distance: f64) -> f64 {
        let s = SPEED_OF_LIGHT / (4.0 * PI * distance * self.carrier_freq);
        s * s
    }
}

/// Ground-truth link paths of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub bs: BsLink,
    pub ues: Vec<UeLink>,
    pub ue_distances: Vec<f64>,
}

impl ChannelScenario {
    pub fn cascaded(&self, ue: usize) -> CascadedParams {
        map_cascaded(&self.bs, &self.ues[ue])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(s)?;
        if !sc.bs.is_consistent() || sc.ues.iter().any(|u| !u.is_consistent()) {
            return Err(Error::Parse("inconsistent path lists in scenario".into()));
        }
        Ok(sc)
    }
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

pub fn sample_scenario(cfg: &ScenarioConfig, seed: u64) -> ChannelScenario {
    let mut rng = stream(seed, &[domain::SCENARIO]);
    let l1 = cfg.l1;
    let var_bs = cfg.gain_variance(cfg.dist_bs);
    let bs = BsLink {
        gains: (0..l1).map(|_| complex_normal(&mut rng, var_bs)).collect(),
        delays: (0..l1).map(|_| rng.random::<f64>()).collect(),
        aoa_bs: (0..l1).map(|_| rng.random::<f64>()).collect(),
        aod_omega: (0..l1).map(|_| rng.random::<f64>()).collect(),
        aod_psi: (0..l1).map(|_| rng.random::<f64>()).collect(),
    };
    let mut ues = Vec::with_capacity(cfg.k);
    let mut ue_distances = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let l2 = cfg.l2_for(k);
        let d = rng.random_range(cfg.dist_ue_min..=cfg.dist_ue_max);
        let var = cfg.gain_variance(d);
        ue_distances.push(d);
        ues.push(UeLink {
            gains: (0..l2).map(|_| complex_normal(&mut rng, var)).collect(),
            delays: (0..l2).map(|_| rng.random::<f64>()).collect(),
            aoa_omega: (0..l2).map(|_| rng.random::<f64>()).collect(),
            aoa_psi: (0..l2).map(|_| rng.random::<f64>()).collect(),
        });
    }
    ChannelScenario {
        bs,
        ues,
        ue_distances,
    }
}

fn circular_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

fn min_pairwise_gap(xs: &[f64], period: f64) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            best = best.min(circular_gap(xs[i], xs[j], period));
        }
    }
    best
}

/// Whether BS angles, per-UE delays and per-UE RIS angle pairs are pairwise
/// at least `min_gap` apart (delays and RIS angles compared circularly).
pub fn is_well_separated(sc: &ChannelScenario, min_gap: f64) -> bool {
    if min_pairwise_gap(&sc.bs.aoa_bs, f64::INFINITY) < min_gap {
        return false;
    }
    sc.ues.iter().all(|ue| {
        let l = ue.path_count();
        // RIS angles are 2-D: a pair is separated if either coordinate is
        let angles_ok = (0..l).all(|i| {
            (i + 1..l).all(|j| {
                circular_gap(ue.aoa_omega[i], ue.aoa_omega[j], 2.0).max(circular_gap(
                    ue.aoa_psi[i],
                    ue.aoa_psi[j],
                    2.0,
                )) >= min_gap
            })
        });
        min_pairwise_gap(&ue.delays, 2.0) >= min_gap && angles_ok
    })
}

/// Rejection-samples a scenario whose angles/delays are `min_gap` apart.
pub fn sample_separated_scenario(cfg: &ScenarioConfig, seed: u64, min_gap: f64) -> ChannelScenario {
    (0u64..)
        .map(|attempt| {
            sample_scenario(
                cfg,
                crate::rng::derive_seed(seed, &[domain::SEPARATION, attempt]),
            )
        })
        .find(|sc| is_well_separated(sc, min_gap))
        .expect("unbounded search")
}

/// `N x Q` unit-modulus configuration with i.i.d. uniform phases.
pub fn sample_ris_config(n: usize, q: usize, seed: u64) -> CMatrix {
    let mut rng = stream(seed, &[domain::RIS_CONFIG]);
    let phases: Vec<f64> = (0..n * q)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    CMatrix::from_fn(n, q, |i, j| C64::from_polar(1.0, phases[j * n + i]))
}

/// Noise variance that yields `snr_db` for a signal of per-element power `power`.
pub fn noise_variance_for(power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        power / 10f64.powf(snr_db / 10.0)
    }
}

pub fn add_noise<R: Rng + ?Sized>(z: &Tensor3, variance: f64, rng: &mut R) -> Tensor3 {
    let mut y = z.clone();
    if variance > 0.0 {
        for v in y.data_mut() {
            *v += complex_normal(rng, variance);
        }
    }
    y
}

/// Adds circular white Gaussian noise at `snr_db` relative to the
/// per-element power `‖z‖²/(P M Q)`; returns the noisy tensor and variance.
pub fn apply_awgn(z: &Tensor3, snr_db: f64, seed: u64) -> Result<(Tensor3, f64)> {
    let energy = z.frobenius_sq();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let var = noise_variance_for(energy / z.len() as f64, snr_db);
    let mut rng = stream(seed, &[domain::NOISE]);
    Ok((add_noise(z, var, &mut rng), var))
}

/// Received tensors of every UE plus the configuration that produced them.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub tensors: Vec<Tensor3>,
    pub theta: CMatrix,
    pub noise_variances: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    /// Ground truth, carried for scoring only.
    pub scenario: ChannelScenario,
    /// Lazily computed stacked mode-2 covariance; stale if `tensors` is
    /// modified after the first call to [`MeasurementSet::mode2_covariance`].
    mode2: OnceLock<CMatrix>,
}

impl MeasurementSet {
    pub fn k(&self) -> usize {
        self.tensors.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.tensors[0].dims()
    }

    /// Same configuration and ground truth with the received tensors
    /// replaced (cached statistics are dropped).
    pub fn with_tensors(mut self, tensors: Vec<Tensor3>) -> Self {
        self.tensors = tensors;
        self.mode2 = OnceLock::new();
        self
    }

    /// Unnormalized `Σ_k Y_(2)^k Y_(2)^kᴴ`, computed once and shared by
    /// every estimator run on this set.
    pub fn mode2_covariance(&self) -> &CMatrix {
        self.mode2.get_or_init(|| mode2_covariance(&self.tensors))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tensors.is_empty() {
            return Err(Error::Dimension("measurement set has no UEs".into()));
        }
        let dims = self.dims();
        if self.tensors.iter().any(|t| t.dims() != dims) {
            return Err(Error::Dimension("all tensors must share dims".into()));
        }
        if self.theta.ncols() != dims.2 || self.theta.nrows() != self.n1 * self.n2 {
            return Err(Error::Dimension(format!(
                "theta is {}x{}, expected {}x{}",
                self.theta.nrows(),
                self.theta.ncols(),
                self.n1 * self.n2,
                dims.2
            )));
        }
        Ok(())
    }
}

/// Noiseless measurement tensors for every UE of `sc`.
pub fn noiseless_tensors(
    cfg: &ScenarioConfig,
    sc: &ChannelScenario,
    theta: &CMatrix,
) -> Vec<Tensor3> {
    (0..sc.ues.len())
        .map(|k| {
            sc.cascaded(k)
                .measurement_kruskal(theta, cfg.p, cfg.m, cfg.n1, cfg.n2)
                .to_dense()
        })
        .collect()
}

/// Builds the full noisy measurement set for a given scenario; noise for UE
/// `k` is drawn from stream `(seed, NOISE, k)`.
pub fn measure(cfg: &ScenarioConfig, sc: ChannelScenario, seed: u64) -> Result<MeasurementSet> {
    cfg.validate()?;
    let theta = sample_ris_config(cfg.n(), cfg.q, seed);
    let clean = noiseless_tensors(cfg, &sc, &theta);
    let powers: Vec<f64> = clean
        .iter()
        .map(|t| t.frobenius_sq() / t.len() as f64)
        .collect();
    if powers.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::ZeroEnergy);
    }
    let variances: Vec<f64> = match cfg.noise_reference {
        NoiseReference::SystemMean => {
            let mean = powers.iter().sum::<f64>() / powers.len() as f64;
            vec![noise_variance_for(mean, cfg.snr_db); powers.len()]
        }
        NoiseReference::PerUe => powers
            .iter()
            .map(|&p| noise_variance_for(p, cfg.snr_db))
            .collect(),
    };
    let tensors = clean
        .iter()
        .zip(&variances)
        .enumerate()
        .map(|(k, (z, &var))| add_noise(z, var, &mut stream(seed, &[domain::NOISE, k as u64])))
        .collect();
    Ok(MeasurementSet {
        tensors,
        theta,
        noise_variances: variances,
        n1: cfg.n1,
        n2: cfg.n2,
        scenario: sc,
        mode2: OnceLock::new(),
    })
}

/// Scenario plus measurements, all derived from one seed.
pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<MeasurementSet> {
    cfg.validate()?;
    measure(cfg, sample_scenario(cfg, seed), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_desk_presets_validate() {
        ScenarioConfig::full().validate().unwrap();
        ScenarioConfig::desk().validate().unwrap();
        let mut bad = ScenarioConfig::desk();
        bad.q = 4;
        assert!(bad.validate().is_err());
        let mut bad = ScenarioConfig::desk();
        bad.l2 = vec![3, 3];
        assert!(bad.validate().is_err());
        assert!(ScenarioConfig::preset("nope").is_err());
    }

    #[test]
    fn scenario_is_deterministic() {
        let cfg = ScenarioConfig::desk();
        assert_eq!(sample_scenario(&cfg, 11), sample_scenario(&cfg, 11));
        assert_ne!(sample_scenario(&cfg, 11), sample_scenario(&cfg, 12));
    }

    #[test]
    fn ue_distances_within_range() {
        let cfg = ScenarioConfig::full();
        for seed in 0..200 {
            let sc = sample_scenario(&cfg, seed);
            assert!(sc.ue_distances.iter().all(|&d| (20.0..=40.0).contains(&d)));
        }
    }

    #[test]
    fn bs_gain_variance_matches_free_space_law() {
        let cfg = ScenarioConfig::full();
        let target = (SPEED_OF_LIGHT / (4.0 * PI * 30.0 * 28e9)).powi(2);
        let mut acc = 0.0;
        let mut count = 0usize;
        for seed in 0..3400 {
            let sc = sample_scenario(&cfg, seed);
            for g in &sc.bs.gains {
                acc += g.norm_sqr();
                count += 1;
            }
        }
        let mean = acc / count as f64;
        assert!(
            ((mean - target) / target).abs() < 0.05,
            "mean {mean} target {target}"
        );
    }

    #[test]
    fn parameters_within_unit_interval() {
        let sc = sample_scenario(&ScenarioConfig::desk(), 5);
        let all = sc
            .bs
            .delays
            .iter()
            .chain(&sc.bs.aoa_bs)
            .chain(&sc.bs.aod_omega)
            .chain(&sc.bs.aod_psi)
            .chain(
                sc.ues
                    .iter()
                    .flat_map(|u| u.delays.iter().chain(&u.aoa_omega).chain(&u.aoa_psi)),
            );
        for &x in all {
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn ris_config_unit_modulus_and_deterministic() {
        let t = sample_ris_config(16, 8, 3);
        assert!(t.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert_eq!(t, sample_ris_config(16, 8, 3));
    }

    #[test]
    fn ris_phases_pass_chi_square() {
        // 100k phases into 20 bins; 1% critical value for 19 dof is 36.19
        let t = sample_ris_config(1000, 100, 9);
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for z in t.iter() {
            let ph = z.arg().rem_euclid(2.0 * PI);
            counts[((ph / (2.0 * PI)) * bins as f64) as usize % bins] += 1;
        }
        let expect = t.len() as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        assert!(chi2 < 36.19, "chi2 = {chi2}");
    }

    #[test]
    fn awgn_infinite_snr_is_identity() {
        let z = Tensor3::from_fn((3, 2, 2), |i, j, k| {
            C64::new(i as f64 + 1.0, (j + k) as f64)
        });
        let (y, var) = apply_awgn(&z, f64::INFINITY, 1).unwrap();
        assert_eq!(var, 0.0);
        assert_eq!(y, z);
        assert_eq!(
            apply_awgn(&z, 10.0, 4).unwrap(),
            apply_awgn(&z, 10.0, 4).unwrap()
        );
        assert_eq!(
            apply_awgn(&Tensor3::zeros(2, 2, 2), 10.0, 1).unwrap_err(),
            Error::ZeroEnergy
        );
    }

    #[test]
    fn awgn_empirical_snr() {
        let z = Tensor3::from_fn((16, 8, 8), |i, j, k| {
            C64::from_polar(1.0 + (i % 3) as f64, (i * j + k) as f64)
        });
        let mut sig = 0.0;
        let mut noise = 0.0;
        for seed in 0..100 {
            let (y, _) = apply_awgn(&z, 7.0, seed).unwrap();
            sig += z.frobenius_sq();
            noise += y
                .data()
                .iter()
                .zip(z.data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        let snr = 10.0 * (sig / noise).log10();
        assert!((snr - 7.0).abs() < 0.1, "snr {snr}");
    }

    #[test]
    fn measurement_set_is_pure_function_of_seed() {
        let cfg = ScenarioConfig::desk();
        let a = generate(&cfg, 42).unwrap();
        let b = generate(&cfg, 42).unwrap();
        assert_eq!(a.tensors, b.tensors);
        assert_eq!(a.theta, b.theta);
        a.validate().unwrap();
        assert!(a.noise_variances.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn scenario_json_round_trip() {
        let sc = sample_scenario(&ScenarioConfig::desk(), 3);
        let back = ChannelScenario::from_json(&sc.to_json().unwrap()).unwrap();
        assert_eq!(sc, back);
    }
}
