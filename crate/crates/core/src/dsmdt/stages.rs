//! Individual estimation stages. Each works on one UE's tensor (or the
//! stacked set for the common AoD) and is usable on its own.

use nalgebra::DMatrix;

use crate::channel::{steering_columns, upa_columns};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen_desc, solve_gram, GramSolve};
use crate::robust::{inlier_mask, wrap_centered};
use crate::subspace::{mdl_detect, music_ula, AoaSearcher, MusicGrid, SignalSubspace};
use crate::tensor::{CMatrix, Tensor3, C64, ZERO};

/// MAD threshold multiplier used for all offset screening.
pub const MAD_K: f64 = 3.0;
/// Minimum MAD threshold for delay and angle offsets.
pub const OFFSET_FLOOR: f64 = 1e-4;
/// Minimum MAD threshold for log-magnitude gain offsets.
pub const LOG_GAIN_FLOOR: f64 = 1e-3;
/// Relative conditioning below which least-squares systems get a ridge term.
pub const MIN_RCOND: f64 = 1e-12;

pub use crate::tensor::mode2_covariance;

#[derive(Debug, Clone)]
pub struct AodEstimate {
    /// Sorted ascending.
    pub phi: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub degraded: bool,
}

/// Joint BS-angle estimation from the stacked mode-2 data of all UEs.
/// With `l1_known` the MDL step is skipped.
pub fn estimate_common_aod(
    tensors: &[Tensor3],
    l1_known: Option<usize>,
    grid: &MusicGrid,
) -> Result<AodEstimate> {
    let (p, _, q) = tensors[0].dims();
    estimate_common_aod_from(
        &mode2_covariance(tensors),
        p * q * tensors.len(),
        l1_known,
        grid,
    )
}

/// As [`estimate_common_aod`], from a precomputed unnormalized mode-2
/// covariance accumulated over `n` snapshots.
pub fn estimate_common_aod_from(
    cov: &CMatrix,
    n: usize,
    l1_known: Option<usize>,
    grid: &MusicGrid,
) -> Result<AodEstimate> {
    let m = cov.nrows();
    let r = cov / C64::new(n as f64, 0.0);
    let (vals, vecs) = hermitian_eigen_desc(&r);
    let l1 = match l1_known {
        Some(l) => l,
        None => mdl_detect(&vals, n, m - 1)?,
    };
    if l1 == 0 {
        return Err(Error::NoCommonPaths);
    }
    if l1 >= m {
        return Err(Error::Dimension(format!("L1={l1} must be below M={m}")));
    }
    let sub = SignalSubspace {
        basis: vecs.columns(0, l1).into_owned(),
        eigenvalues: vals.clone(),
    };
    let est = music_ula(&sub, grid, l1);
    Ok(AodEstimate {
        phi: est.params,
        eigenvalues: vals,
        degraded: est.degraded,
    })
}

/// Projects `Y_(2)` onto the BS responses: returns, for every row `ℓ`, the
/// `P x Q` matrix `Mat(b̂ᵀ_ℓ Y_(2))` with `b̂ᵀ_ℓ` the rows of `B̂†`.
pub fn project_rows(y: &Tensor3, phi: &[f64]) -> Result<Vec<CMatrix>> {
    let (p, m, q) = y.dims();
    let b = steering_columns(m, phi);
    let pinv = crate::linalg::pinv_tall(&b)?;
    let data = y.data();
    let mut out = vec![CMatrix::zeros(p, q); phi.len()];
    for (l, x) in out.iter_mut().enumerate() {
        for qi in 0..q {
            let col = &mut x.as_mut_slice()[p * qi..p * (qi + 1)];
            for mi in 0..m {
                let w = pinv[(l, mi)];
                let src = &data[p * (mi + m * qi)..p * (mi + m * qi + 1)];
                for (d, s) in col.iter_mut().zip(src) {
                    *d += s * w;
                }
            }
        }
    }
    Ok(out)
}

/// Delay MUSIC on one projected row (`P x Q`, snapshots = RIS configurations).
pub fn row_delays(x: &CMatrix, count: usize, grid: &MusicGrid) -> (Vec<f64>, bool) {
    let sub = SignalSubspace::from_snapshots(x, count);
    let est = music_ula(&sub, grid, count);
    (est.params, est.degraded)
}

/// Signed offsets of each row relative to the anchor row, one per anchor
/// column (`NaN` where no partner was assigned). Rows are paired through
/// the consensus offset: the candidate difference that matches the most
/// anchor entries within `tol`, after which partners are assigned greedily
/// and one-to-one by residual.
pub fn pair_rows(rows: &[Vec<f64>], anchor: usize, tol: f64, period: f64) -> DMatrix<f64> {
    let base = &rows[anchor];
    let mut out = DMatrix::from_element(rows.len(), base.len(), f64::NAN);
    for (l, row) in rows.iter().enumerate() {
        if l == anchor {
            out.row_mut(l).fill(0.0);
            continue;
        }
        let residual = |i: usize, j: usize, d: f64| wrap_centered(row[j] - base[i] - d, period);
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..base.len() {
            for j in 0..row.len() {
                let d = wrap_centered(row[j] - base[i], period);
                let mut hits = 0usize;
                let mut cost = 0.0;
                for a in 0..base.len() {
                    let r = (0..row.len())
                        .map(|b| residual(a, b, d).abs())
                        .fold(f64::INFINITY, f64::min);
                    if r < tol {
                        hits += 1;
                        cost += r;
                    }
                }
                let better = match best {
                    None => true,
                    Some((h, c, bd)) => {
                        hits > h || (hits == h && (cost < c || (cost == c && d < bd)))
                    }
                };
                if better {
                    best = Some((hits, cost, d));
                }
            }
        }
        let Some((_, _, d)) = best else { continue };
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..base.len() {
            for j in 0..row.len() {
                pairs.push((residual(i, j, d).abs(), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut used_i = vec![false; base.len()];
        let mut used_j = vec![false; row.len()];
        for (_, i, j) in pairs {
            if used_i[i] || used_j[j] {
                continue;
            }
            used_i[i] = true;
            used_j[j] = true;
            out[(l, i)] = d + residual(i, j, d);
        }
    }
    out
}

/// Columns whose offsets are inliers in every non-anchor row.
pub fn consistent_columns(offsets: &DMatrix<f64>, anchor: usize, floor: f64) -> Vec<bool> {
    let mut keep = vec![true; offsets.ncols()];
    for l in 0..offsets.nrows() {
        if l == anchor {
            continue;
        }
        let vals: Vec<f64> = offsets.row(l).iter().copied().collect();
        let finite: Vec<(usize, f64)> = vals
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .collect();
        let xs: Vec<f64> = finite.iter().map(|p| p.1).collect();
        let mask = inlier_mask(&xs, MAD_K, floor);
        let mut row_keep = vec![false; vals.len()];
        for ((idx, _), ok) in finite.iter().zip(mask) {
            row_keep[*idx] = ok;
        }
        for (k, r) in keep.iter_mut().zip(row_keep) {
            *k &= r;
        }
    }
    keep
}

#[derive(Debug, Clone)]
pub struct ReferenceDelays {
    /// `L1 x L2` delays in `[0, 2)`.
    pub tau: DMatrix<f64>,
    /// Per-row delay offsets relative to the anchor row (anchor entry 0).
    pub offsets: Vec<f64>,
    pub l2: usize,
    /// Candidate columns rejected by the offset screen.
    pub outliers: usize,
    /// Spread of the retained per-column offsets (max abs deviation).
    pub offset_spread: f64,
    pub degraded: bool,
}

/// Delay estimation for a UE treated as reference: MUSIC on every row,
/// pairing against the anchor row, MAD screening of the offsets.
/// With `screen == false` every paired column is kept (known path count).
pub fn estimate_reference_delays(
    rows: &[CMatrix],
    anchor: usize,
    l2_init: usize,
    grid: &MusicGrid,
    screen: bool,
) -> Result<ReferenceDelays> {
    let p = rows[0].nrows();
    let mut degraded = false;
    let raw: Vec<Vec<f64>> = rows
        .iter()
        .map(|x| {
            let (t, d) = row_delays(x, l2_init, grid);
            degraded |= d;
            t
        })
        .collect();
    if raw[anchor].is_empty() {
        return Err(Error::OffsetStructureAbsent);
    }
    let offsets = pair_rows(&raw, anchor, 1.0 / p as f64, 2.0);
    let consistent = consistent_columns(&offsets, anchor, OFFSET_FLOOR);
    // with a known count every paired column is kept, but only the
    // consistent ones contribute to the offsets
    let keep: Vec<bool> = if screen {
        consistent.clone()
    } else {
        (0..offsets.ncols())
            .map(|i| offsets.column(i).iter().all(|v| v.is_finite()))
            .collect()
    };
    let cols: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let mut basis: Vec<usize> = (0..keep.len())
        .filter(|&i| keep[i] && consistent[i])
        .collect();
    if basis.is_empty() {
        basis = cols.clone();
    }
    if cols.is_empty() {
        return Err(Error::OffsetStructureAbsent);
    }
    let l1 = rows.len();
    let mean_offsets: Vec<f64> = (0..l1)
        .map(|l| basis.iter().map(|&i| offsets[(l, i)]).sum::<f64>() / basis.len() as f64)
        .collect();
    let mut spread: f64 = 0.0;
    for l in 0..l1 {
        for &i in &basis {
            spread = spread.max((offsets[(l, i)] - mean_offsets[l]).abs());
        }
    }
    let base = &raw[anchor];
    let tau = DMatrix::from_fn(l1, cols.len(), |l, c| {
        let i = cols[c];
        (base[i] + offsets[(l, i)]).rem_euclid(2.0)
    });
    Ok(ReferenceDelays {
        tau,
        offsets: mean_offsets,
        l2: cols.len(),
        outliers: keep.len() - cols.len(),
        offset_spread: spread,
        degraded,
    })
}

/// Delays of a non-reference UE: MUSIC on the anchor row only, remaining
/// rows obtained by adding the reference offsets.
pub fn estimate_other_delays(
    rows: &[CMatrix],
    anchor: usize,
    offsets: &[f64],
    l2: usize,
    grid: &MusicGrid,
) -> (DMatrix<f64>, bool) {
    let stacked = derotate_rows(rows, anchor, offsets);
    let (base, degraded) = row_delays(&stacked, l2, grid);
    (extend_rows(&base, offsets, 2.0), degraded)
}

/// Removes each row's delay offset (`x_ℓ[p] e^{jπ p Δτ_ℓ}`) so that all rows
/// share the anchor row's delay response, and concatenates them as
/// snapshots (`P x L1 Q`).
pub fn derotate_rows(rows: &[CMatrix], anchor: usize, offsets: &[f64]) -> CMatrix {
    let (p, q) = rows[anchor].shape();
    let mut out = CMatrix::zeros(p, q * rows.len());
    for (l, x) in rows.iter().enumerate() {
        let d = offsets[l] - offsets[anchor];
        for pi in 0..p {
            let rot = C64::from_polar(1.0, std::f64::consts::PI * pi as f64 * d);
            for qi in 0..q {
                out[(pi, l * q + qi)] = x[(pi, qi)] * rot;
            }
        }
    }
    out
}

/// `out[ℓ][l] = (base[l] + offsets[ℓ]) mod period`.
pub fn extend_rows(base: &[f64], offsets: &[f64], period: f64) -> DMatrix<f64> {
    DMatrix::from_fn(offsets.len(), base.len(), |l, c| {
        (base[c] + offsets[l]).rem_euclid(period)
    })
}

/// Per-path delay (`P x U`) and BS (`M x U`) factors for `L1 x L2` delays;
/// the BS factor repeats `φ_ℓ` along each row.
pub fn delay_bs_factors(phi: &[f64], tau: &DMatrix<f64>, p: usize, m: usize) -> (CMatrix, CMatrix) {
    let l1 = phi.len();
    let u = tau.len();
    let flat_phi: Vec<f64> = (0..u).map(|i| phi[i % l1]).collect();
    (
        steering_columns(p, tau.as_slice()),
        steering_columns(m, &flat_phi),
    )
}

/// `Z[q,u] = Σ_{p,m} y[p,m,q] conj(a[p,u]) conj(b[m,u])`.
pub fn contract_pm(y: &Tensor3, a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (p, m, q) = y.dims();
    let u = a.ncols();
    let data = y.data();
    // BS columns repeat across the delay index; contract each distinct one once.
    let mut distinct: Vec<usize> = Vec::new();
    let slot: Vec<usize> = (0..u)
        .map(
            |ui| match distinct.iter().position(|&d| b.column(d) == b.column(ui)) {
                Some(k) => k,
                None => {
                    distinct.push(ui);
                    distinct.len() - 1
                }
            },
        )
        .collect();
    let mut z = CMatrix::zeros(q, u);
    let mut w = vec![ZERO; p * distinct.len()];
    for qi in 0..q {
        w.iter_mut().for_each(|v| *v = ZERO);
        for (k, &ui) in distinct.iter().enumerate() {
            let wk = &mut w[p * k..p * (k + 1)];
            for mi in 0..m {
                let cb = b[(mi, ui)].conj();
                let src = &data[p * (mi + m * qi)..p * (mi + m * qi + 1)];
                for (d, s) in wk.iter_mut().zip(src) {
                    *d += s * cb;
                }
            }
        }
        for ui in 0..u {
            let wk = &w[p * slot[ui]..p * (slot[ui] + 1)];
            let mut acc = ZERO;
            for (pi, wv) in wk.iter().enumerate() {
                acc += a[(pi, ui)].conj() * wv;
            }
            z[(qi, ui)] = acc;
        }
    }
    z
}

fn hadamard(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.component_mul(b)
}

/// Least-squares estimate of the RIS-side factor `Y_(3) [(B ⊙ A)ᵀ]†`
/// (`Q x U`), solved through the Hadamard Gram `(BᴴB)∘(AᴴA)`.
pub fn ris_factor_ls(y: &Tensor3, a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let gram = hadamard(&a.ad_mul(a), &b.ad_mul(b));
    let z = contract_pm(y, a, b);
    // C conj(G) = Z  <=>  G Cᵀ = Zᵀ  (conj(G)ᵀ = Gᴴ = G)
    let solved = solve_gram(&gram, &z.transpose(), 1e-10)?;
    if solved.regularized {
        return Err(Error::FactorCollinearity);
    }
    Ok(solved.solution.transpose())
}

/// RIS angle for every column of `c` (`Q x U`).
pub fn correlate_columns(
    c: &CMatrix,
    cols: &[usize],
    searcher: &AoaSearcher,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut om = Vec::with_capacity(cols.len());
    let mut ps = Vec::with_capacity(cols.len());
    let mut sc = Vec::with_capacity(cols.len());
    for &u in cols {
        let col: Vec<C64> = c.column(u).iter().copied().collect();
        let est = searcher.search(&col);
        om.push(est.omega);
        ps.push(est.psi);
        sc.push(est.score);
    }
    (om, ps, sc)
}

/// Row offsets of an `L1 x L2` angle matrix relative to the anchor row
/// (period 2): median-screened mean of the per-column differences.
pub fn row_offsets(x: &DMatrix<f64>, anchor: usize) -> Vec<f64> {
    (0..x.nrows())
        .map(|l| {
            if l == anchor {
                return 0.0;
            }
            let d: Vec<f64> = (0..x.ncols())
                .map(|c| wrap_centered(x[(l, c)] - x[(anchor, c)], 2.0))
                .collect();
            // recentre on the first difference so values straddling ±1 stay together
            let d0 = d[0];
            let rel: Vec<f64> = d.iter().map(|v| wrap_centered(v - d0, 2.0)).collect();
            let mask = inlier_mask(&rel, MAD_K, OFFSET_FLOOR);
            let kept: Vec<f64> = rel
                .iter()
                .zip(&mask)
                .filter(|p| *p.1)
                .map(|p| *p.0)
                .collect();
            d0 + kept.iter().sum::<f64>() / kept.len().max(1) as f64
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GainEstimate {
    /// `L1 x L2`, column-major in the path index.
    pub beta: DMatrix<C64>,
    pub ridge: bool,
    pub rcond: f64,
    /// `‖Y - Ŷ‖² / ‖Y‖²`.
    pub residual: f64,
}

/// Gains by least squares on `vec(Y) = G β` with the Gram computed as
/// `(AᴴA)∘(BᴴB)∘(CᴴC)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gains(
    y: &Tensor3,
    phi: &[f64],
    tau: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    theta: &CMatrix,
    n1: usize,
    n2: usize,
) -> Result<GainEstimate> {
    let (p, m, _) = y.dims();
    let (a, b) = delay_bs_factors(phi, tau, p, m);
    let c = theta.transpose() * upa_columns(n1, n2, omega.as_slice(), psi.as_slice());
    let gram = hadamard(&hadamard(&a.ad_mul(&a), &b.ad_mul(&b)), &c.ad_mul(&c));
    let z = contract_pm(y, &a, &b);
    let rhs = CMatrix::from_fn(tau.len(), 1, |u, _| {
        (0..c.nrows())
            .map(|q| c[(q, u)].conj() * z[(q, u)])
            .sum::<C64>()
    });
    let GramSolve {
        solution,
        rcond,
        regularized,
    } = solve_gram(&gram, &rhs, MIN_RCOND)?;
    let energy = y.frobenius_sq();
    let fit = (solution.adjoint() * &gram * &solution)[(0, 0)].re;
    let cross = (solution.adjoint() * &rhs)[(0, 0)].re;
    let residual = ((energy - 2.0 * cross + fit) / energy).max(0.0);
    Ok(GainEstimate {
        beta: DMatrix::from_column_slice(tau.nrows(), tau.ncols(), solution.as_slice()),
        ridge: regularized,
        rcond,
        residual,
    })
}

/// Columns whose log-magnitude gain differences to the anchor row are
/// inliers in every other row.
pub fn consistent_gain_columns(beta: &DMatrix<C64>, anchor: usize) -> Vec<bool> {
    let logs = DMatrix::from_fn(beta.nrows(), beta.ncols(), |l, c| {
        let v = beta[(l, c)].norm().max(f64::MIN_POSITIVE).ln()
            - beta[(anchor, c)].norm().max(f64::MIN_POSITIVE).ln();
        if l == anchor {
            0.0
        } else {
            v
        }
    });
    consistent_columns(&logs, anchor, LOG_GAIN_FLOOR)
}

pub fn select_columns<T: nalgebra::Scalar + Copy>(x: &DMatrix<T>, keep: &[bool]) -> DMatrix<T> {
    let cols: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}
