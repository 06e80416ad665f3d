//! Browser bindings: a MUSIC spectrum explorer, a single estimator trial
//! and the RIS-angle correlation map. Every entry point returns JSON.

use rischan::channel::steer_upa;
use rischan::dsmdt::{run_ds_mdt, Algorithm, DsMdtOptions};
use rischan::harness::overestimate::ula_snapshots;
use rischan::harness::{nmse_kruskal, to_db};
use rischan::rng::stream;
use rischan::scenario::{complex_normal, generate, sample_ris_config, ScenarioConfig};
use rischan::subspace::{music_ula, ula_spectrum, AoaSearcher, MusicGrid, SignalSubspace};
use rischan::tensor::C64;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

const SPECTRUM_POINTS: usize = 720;

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect()
}

/// ULA MUSIC pseudospectrum for sources at `angles_deg` (comma-separated,
/// degrees off broadside) with `assumed` sources. The spectrum is returned
/// in dB relative to its maximum over `sin θ ∈ [-1, 1)`.
#[wasm_bindgen]
pub fn music_explorer(
    m: usize,
    angles_deg: &str,
    snr_db: f64,
    snapshots: usize,
    assumed: usize,
    seed: u32,
) -> Result<String, String> {
    let angles = parse_list(angles_deg)?;
    if angles.is_empty()
        || !(2..=256).contains(&m)
        || assumed == 0
        || assumed >= m
        || snapshots == 0
    {
        return Err(
            "need at least one source, 2 <= M <= 256, 0 < assumed < M and snapshots > 0".into(),
        );
    }
    let sources: Vec<f64> = angles.iter().map(|a| a.to_radians().sin()).collect();
    let x = ula_snapshots(m, &sources, snr_db, snapshots, seed as u64, 0);
    let sub = SignalSubspace::from_snapshots(&x, assumed);
    let spec = ula_spectrum(&sub, -1.0, 1.0, SPECTRUM_POINTS);
    let top = spec.iter().map(|p| p.1).fold(f64::MIN_POSITIVE, f64::max);
    let est = music_ula(&sub, &MusicGrid::new(-1.0, 1.0, true), angles.len());
    Ok(json!({
        "x": spec.iter().map(|p| p.0).collect::<Vec<_>>(),
        "db": spec.iter().map(|p| 10.0 * (p.1 / top).log10()).collect::<Vec<_>>(),
        "truth_deg": angles,
        "estimates_deg": est.params.iter().map(|v| v.clamp(-1.0, 1.0).asin().to_degrees()).collect::<Vec<_>>(),
        "eigenvalues": sub.eigenvalues.iter().take(12).collect::<Vec<_>>(),
    })
    .to_string())
}

/// One scenario from `preset` at `snr_db`, estimated by every algorithm.
#[wasm_bindgen]
pub fn estimator_trial(preset: &str, snr_db: f64, seed: u32) -> Result<String, String> {
    let mut cfg = ScenarioConfig::preset(preset).map_err(|e| e.to_string())?;
    cfg.snr_db = snr_db;
    let ms = generate(&cfg, seed as u64).map_err(|e| e.to_string())?;
    let sc = &ms.scenario;
    let results: Vec<_> = Algorithm::ALL
        .iter()
        .map(|&alg| {
            let mut opts = DsMdtOptions::for_algorithm(alg, cfg.l2_overestimate, sc);
            opts.seed = seed as u64;
            let r = run_ds_mdt(&ms, &opts);
            let nmse = if r.is_failure() {
                None
            } else {
                let per_ue: Vec<f64> = (0..ms.k())
                    .filter_map(|k| {
                        nmse_kruskal(
                            &r.channel(k),
                            &sc.cascaded(k).channel_kruskal(cfg.p, cfg.m, cfg.n1, cfg.n2),
                        )
                        .ok()
                    })
                    .collect();
                Some(to_db(
                    per_ue.iter().sum::<f64>() / per_ue.len().max(1) as f64,
                ))
            };
            json!({
                "algorithm": alg.name(),
                "nmse_db": nmse,
                "l1": r.l1,
                "l2": r.ues.iter().map(|u| u.l2).collect::<Vec<_>>(),
                "phi": r.phi,
                "reference": r.reference,
                "valid": r.valid,
                "fallback": r.fallback_used,
                "failure": r.failure,
                "seconds": r.times.total(),
            })
        })
        .collect();
    Ok(json!({
        "config": { "m": cfg.m, "n1": cfg.n1, "n2": cfg.n2, "k": cfg.k, "p": cfg.p, "q": cfg.q },
        "truth": {
            "l1": sc.bs.path_count(),
            "l2": sc.ues.iter().map(|u| u.path_count()).collect::<Vec<_>>(),
            "phi": sc.bs.aoa_bs,
        },
        "results": results,
    })
    .to_string())
}

/// Coarse correlation map `|ãᴴ r| / (‖ã‖ ‖r‖)` over `(ω, ψ) ∈ [0, 2)²` for a
/// single RIS path at `(omega, psi)` observed through `q` random
/// configurations, plus the refined estimate.
#[wasm_bindgen]
pub fn correlation_map(
    n1: usize,
    n2: usize,
    q: usize,
    omega: f64,
    psi: f64,
    snr_db: f64,
    seed: u32,
) -> Result<String, String> {
    if !(1..=32).contains(&n1) || !(1..=32).contains(&n2) || !(1..=128).contains(&q) {
        return Err("need 1 <= N1, N2 <= 32 and 1 <= Q <= 128".into());
    }
    let theta = sample_ris_config(n1 * n2, q, seed as u64);
    let clean = theta.transpose() * steer_upa(n1, n2, omega, psi);
    let power = clean.norm_squared() / q as f64;
    let var = power * 10f64.powf(-snr_db / 10.0);
    let mut rng = stream(seed as u64, &[0x6d6170]);
    let r: Vec<C64> = clean
        .iter()
        .map(|v| v + complex_normal(&mut rng, var))
        .collect();
    let searcher = AoaSearcher::with_default_grid(&theta, n1, n2);
    let (gw, gp) = searcher.grids();
    let est = searcher.search(&r);
    Ok(json!({
        "size": [gw.coarse_points, gp.coarse_points],
        "range": [gw.lo, gw.hi],
        "values": searcher.coarse_map(&r),
        "truth": [omega.rem_euclid(2.0), psi.rem_euclid(2.0)],
        "estimate": [est.omega, est.psi],
        "score": est.score,
    })
    .to_string())
}
