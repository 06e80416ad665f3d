//! Subspace estimation: sample covariance, MDL source counting, 1-D MUSIC
//! with grid refinement and the 2-D RIS-angle correlation search.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen_desc;
use crate::tensor::{CMatrix, CVector, C64, ZERO};

/// Eigenvalues below `λ_max * EIGEN_FLOOR` are treated as numerically zero
/// by the MDL criterion.
pub const EIGEN_FLOOR: f64 = 1e-12;
const SPECTRUM_FLOOR: f64 = 1e-15;

/// Search interval and refinement schedule for a 1-D grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MusicGrid {
    pub lo: f64,
    pub hi: f64,
    pub coarse_points: usize,
    pub refine_iters: usize,
    pub refine_shrink: f64,
    /// Whether `[lo, hi)` is one full period of the steering vector.
    pub periodic: bool,
}

impl MusicGrid {
    pub fn new(lo: f64, hi: f64, periodic: bool) -> Self {
        Self {
            lo,
            hi,
            coarse_points: 512,
            refine_iters: 3,
            refine_shrink: 0.1,
            periodic,
        }
    }

    /// BS angle search over `[0, 1)`.
    pub fn bs_angle() -> Self {
        Self::new(0.0, 1.0, false)
    }

    /// Cascaded-delay search over one full period `[0, 2)`. Uses 2048 coarse
    /// points: paths of one UE can sit closer than the 512-point spacing
    /// while still being resolvable by the pseudospectrum.
    pub fn delay() -> Self {
        Self::new(0.0, 2.0, true).with_points(2048)
    }

    /// One axis of the 2-D RIS-angle search over `[0, 2)`.
    pub fn ris_axis() -> Self {
        Self {
            coarse_points: 64,
            ..Self::new(0.0, 2.0, true)
        }
    }

    pub fn with_points(mut self, coarse_points: usize) -> Self {
        self.coarse_points = coarse_points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_points < 8 || !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "grid needs >= 8 points and lo < hi (got {} points on [{}, {}))",
                self.coarse_points, self.lo, self.hi
            )));
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return Err(Error::Config("refine_shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.coarse_points as f64
    }

    /// Final resolution after all refinement rounds.
    pub fn resolution(&self) -> f64 {
        self.step() * self.refine_shrink.powi(self.refine_iters as i32)
    }

    fn point(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    fn wrap(&self, x: f64) -> f64 {
        if self.periodic {
            self.lo + (x - self.lo).rem_euclid(self.hi - self.lo)
        } else {
            x
        }
    }

    fn refine_half_width(&self) -> i64 {
        (1.0 / self.refine_shrink).ceil() as i64
    }
}

/// `(1/n) X Xᴴ` over the columns (snapshots) of `x`.
pub fn sample_covariance(x: &CMatrix) -> CMatrix {
    assert!(x.ncols() >= 1, "need at least one snapshot");
    let n = x.ncols() as f64;
    (x * x.adjoint()) / C64::new(n, 0.0)
}

/// Wax–Kailath minimum description length:
/// `MDL(k) = -n (m-k) ln(g_k / a_k) + ½ k (2m - k) ln n`, where `g_k`, `a_k`
/// are the geometric and arithmetic means of the `m - k` smallest eigenvalues.
/// Returns the minimizing `k` in `0..=max_sources`.
pub fn mdl_detect(eigenvalues: &[f64], n_snapshots: usize, max_sources: usize) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let m = eigenvalues.len();
    let mut vals: Vec<f64> = eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top = vals[0];
    if !(top > 0.0) {
        return Ok(0);
    }
    let floor = top * EIGEN_FLOOR;
    vals.iter_mut().for_each(|v| *v = v.max(floor));
    let n = n_snapshots.max(1) as f64;
    let kmax = max_sources.min(m - 1);
    let mut best = (f64::INFINITY, 0);
    for k in 0..=kmax {
        let tail = &vals[k..];
        let len = tail.len() as f64;
        let arith = tail.iter().sum::<f64>() / len;
        let log_geo = tail.iter().map(|v| v.ln()).sum::<f64>() / len;
        let log_ratio = (log_geo - arith.ln()).min(0.0);
        let mdl = -n * len * log_ratio + 0.5 * k as f64 * (2.0 * m as f64 - k as f64) * n.ln();
        if mdl < best.0 {
            best = (mdl, k);
        }
    }
    Ok(best.1)
}

/// Orthonormal basis of a signal subspace.
#[derive(Debug, Clone)]
pub struct SignalSubspace {
    pub basis: CMatrix,
    pub eigenvalues: Vec<f64>,
}

impl SignalSubspace {
    /// Top-`dim` eigenvectors of a Hermitian covariance.
    pub fn from_covariance(r: &CMatrix, dim: usize) -> Self {
        let (vals, vecs) = hermitian_eigen_desc(r);
        let dim = dim.min(r.nrows());
        Self {
            basis: vecs.columns(0, dim).into_owned(),
            eigenvalues: vals,
        }
    }

    /// Top-`dim` left singular vectors of the snapshot matrix `x` (`m x n`),
    /// i.e. the covariance eigenvectors, computed through the smaller Gram
    /// matrix when `n < m`. Returned eigenvalues are those of `X Xᴴ / n`.
    pub fn from_snapshots(x: &CMatrix, dim: usize) -> Self {
        let (m, n) = x.shape();
        if n >= m {
            return Self::from_covariance(&sample_covariance(x), dim);
        }
        let gram = x.ad_mul(x);
        let (vals, vecs) = hermitian_eigen_desc(&gram);
        let top = vals[0].max(0.0);
        let mut basis = CMatrix::zeros(m, dim.min(m));
        let mut filled = 0;
        for (i, &lam) in vals.iter().enumerate() {
            if filled == basis.ncols() {
                break;
            }
            if lam <= top * 1e-13 || lam <= 0.0 {
                break;
            }
            let u = (x * vecs.column(i)) / C64::new(lam.sqrt(), 0.0);
            basis.set_column(filled, &u);
            filled += 1;
        }
        if filled < basis.ncols() {
            // complete with directions orthogonal to the data
            let mut extra = 0usize;
            while filled < basis.ncols() {
                let mut e = CVector::zeros(m);
                e[extra % m] = C64::new(1.0, 0.0);
                extra += 1;
                for c in 0..filled {
                    let col = basis.column(c).into_owned();
                    let proj = col.dotc(&e);
                    e -= col * proj;
                }
                let nrm = e.norm();
                if nrm > 1e-8 {
                    basis.set_column(filled, &(e / C64::new(nrm, 0.0)));
                    filled += 1;
                }
            }
        }
        let mut eigenvalues: Vec<f64> = vals.iter().map(|v| v.max(0.0) / n as f64).collect();
        eigenvalues.resize(m, 0.0);
        Self { basis, eigenvalues }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// MUSIC pseudospectrum `1 / ‖E_nᴴ â‖²` for a unit-norm version of `a`,
    /// with `E_n` the orthogonal complement of the basis.
    pub fn pseudospectrum(&self, a: &CVector) -> f64 {
        let nrm2 = a.norm_squared();
        let proj = self.basis.ad_mul(a).norm_squared() / nrm2;
        1.0 / (1.0 - proj).max(SPECTRUM_FLOOR)
    }

    /// Pseudospectrum for the ULA response `exp(-jπ i x)`, evaluated with a
    /// phase recurrence instead of building the steering vector.
    pub fn ula_pseudospectrum(&self, x: f64) -> f64 {
        let m = self.basis.nrows();
        let z = C64::from_polar(1.0, -PI * x);
        let mut acc = vec![ZERO; self.dim()];
        let mut zi = C64::new(1.0, 0.0);
        for i in 0..m {
            for (l, a) in acc.iter_mut().enumerate() {
                *a += self.basis[(i, l)].conj() * zi;
            }
            zi *= z;
            if i % 32 == 31 {
                zi /= zi.norm();
            }
        }
        let proj = acc.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64;
        1.0 / (1.0 - proj).max(SPECTRUM_FLOOR)
    }

    /// ULA pseudospectrum at every coarse point of `grid`. When the grid
    /// spacing divides the steering period this is one zero-padded FFT per
    /// basis vector; otherwise it falls back to pointwise evaluation.
    pub fn ula_coarse(&self, grid: &MusicGrid) -> Vec<f64> {
        let n = grid.coarse_points;
        let m = self.basis.nrows();
        let len = 2.0 / grid.step();
        let l = len.round() as usize;
        if (len - l as f64).abs() > 1e-9 * len || l < n || self.dim() == 0 {
            return (0..n)
                .map(|i| self.ula_pseudospectrum(grid.point(i)))
                .collect();
        }
        let fft = FFT_PLANNER.with(|pl| pl.borrow_mut().plan_fft_forward(l));
        let origin: Vec<C64> = (0..m)
            .map(|i| C64::from_polar(1.0, -PI * i as f64 * grid.lo))
            .collect();
        let mut proj = vec![0.0; n];
        let mut buf = vec![ZERO; l];
        for col in 0..self.dim() {
            buf.fill(ZERO);
            for (i, o) in origin.iter().enumerate() {
                // indices beyond the FFT length alias exactly onto i mod l
                buf[i % l] += self.basis[(i, col)].conj() * o;
            }
            fft.process(&mut buf);
            for (p, v) in proj.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
        proj.iter()
            .map(|p| 1.0 / (1.0 - p / m as f64).max(SPECTRUM_FLOOR))
            .collect()
    }
}

thread_local! {
    static FFT_PLANNER: std::cell::RefCell<rustfft::FftPlanner<f64>> = std::cell::RefCell::new(rustfft::FftPlanner::new());
}

/// Peaks returned by a grid search, sorted ascending by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub locations: Vec<f64>,
    pub values: Vec<f64>,
    /// Fewer local maxima than requested were found.
    pub degraded: bool,
}

/// Finds the `count` largest strict local maxima of `f` on the coarse grid
/// and refines each by iterative grid shrinking.
pub fn peak_search_1d(f: impl Fn(f64) -> f64, grid: &MusicGrid, count: usize) -> PeakSet {
    let vals: Vec<f64> = (0..grid.coarse_points).map(|i| f(grid.point(i))).collect();
    peak_search_from(f, grid, count, vals)
}

/// As [`peak_search_1d`], with the coarse-grid values already evaluated.
fn peak_search_from(
    f: impl Fn(f64) -> f64,
    grid: &MusicGrid,
    count: usize,
    vals: Vec<f64>,
) -> PeakSet {
    let n = grid.coarse_points;
    let step = grid.step();
    assert_eq!(vals.len(), n);
    let (left_edge, right_edge) = if grid.periodic {
        (vals[n - 1], vals[0])
    } else {
        (f(grid.lo - step), f(grid.hi))
    };
    let mut maxima: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let left = if i == 0 { left_edge } else { vals[i - 1] };
        let right = if i + 1 == n { right_edge } else { vals[i + 1] };
        if vals[i] > left && vals[i] >= right {
            maxima.push((i, vals[i]));
        }
    }
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let degraded = maxima.len() < count;
    maxima.truncate(count);

    let mut peaks: Vec<(f64, f64)> = maxima
        .iter()
        .map(|&(i, v)| refine_1d(&f, grid, grid.point(i), v))
        .map(|(x, v)| (grid.wrap(x), v))
        .collect();
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    PeakSet {
        locations: peaks.iter().map(|p| p.0).collect(),
        values: peaks.iter().map(|p| p.1).collect(),
        degraded,
    }
}

fn refine_1d(f: &impl Fn(f64) -> f64, grid: &MusicGrid, x0: f64, v0: f64) -> (f64, f64) {
    let half = grid.refine_half_width();
    let mut step = grid.step();
    let (mut best_x, mut best_v) = (x0, v0);
    for _ in 0..grid.refine_iters {
        step *= grid.refine_shrink;
        let center = best_x;
        for j in -half..=half {
            if j == 0 {
                continue;
            }
            let x = center + j as f64 * step;
            let v = f(x);
            if v > best_v || (v == best_v && x < best_x) {
                best_x = x;
                best_v = v;
            }
        }
    }
    (best_x, best_v)
}

/// Result of a MUSIC search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicEstimate {
    pub params: Vec<f64>,
    pub degraded: bool,
}

/// MUSIC with an arbitrary steering map; `r` is a sample covariance.
pub fn music_1d(
    r: &CMatrix,
    sources: usize,
    steering: impl Fn(f64) -> CVector,
    grid: &MusicGrid,
) -> MusicEstimate {
    assert!(
        sources < r.nrows(),
        "source count must be below the sensor count"
    );
    let sub = SignalSubspace::from_covariance(r, sources);
    let peaks = peak_search_1d(|x| sub.pseudospectrum(&steering(x)), grid, sources);
    MusicEstimate {
        params: peaks.locations,
        degraded: peaks.degraded,
    }
}

/// MUSIC for ULA steering `exp(-jπ i x)` on a precomputed subspace.
pub fn music_ula(sub: &SignalSubspace, grid: &MusicGrid, sources: usize) -> MusicEstimate {
    let peaks = peak_search_from(
        |x| sub.ula_pseudospectrum(x),
        grid,
        sources,
        sub.ula_coarse(grid),
    );
    MusicEstimate {
        params: peaks.locations,
        degraded: peaks.degraded,
    }
}

/// Samples the ULA pseudospectrum on `points` uniformly spaced locations.
pub fn ula_spectrum(sub: &SignalSubspace, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / points as f64;
            (x, sub.ula_pseudospectrum(x))
        })
        .collect()
}

/// Result of the 2-D correlation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoaEstimate {
    pub omega: f64,
    pub psi: f64,
    /// Normalized objective `|ãᴴ r| / (‖ã‖ ‖r‖)` in `[0, 1]`.
    pub score: f64,
}

/// Precomputed 2-D correlation search for one RIS configuration matrix.
///
/// Maximizes `|ã(ω,ψ)ᴴ r| / ‖ã(ω,ψ)‖` with `ã = Θᵀ a_{N1,N2}(ω, ψ)`. The
/// coarse-grid responses are independent of `r` and are computed once.
#[derive(Debug, Clone)]
pub struct AoaSearcher {
    n1: usize,
    n2: usize,
    q: usize,
    /// Θ as `[n1][n2][q]`.
    theta: Vec<C64>,
    omega_grid: MusicGrid,
    psi_grid: MusicGrid,
    /// Unit-norm coarse responses, `[i_omega][i_psi][q]`.
    coarse: Vec<C64>,
    /// Lag sums `h(d1, d2)` of `Θ Θᴴ`, so `‖ã‖²` is a 2-D trigonometric
    /// polynomial; laid out `[d1 + n1 - 1][d2 + n2 - 1]`.
    lags: Vec<C64>,
    /// Coarse local maxima refined per call.
    pub candidates: usize,
}

impl AoaSearcher {
    pub fn new(
        theta: &CMatrix,
        n1: usize,
        n2: usize,
        omega_grid: MusicGrid,
        psi_grid: MusicGrid,
    ) -> Self {
        assert_eq!(theta.nrows(), n1 * n2, "theta rows must equal N1*N2");
        let q = theta.ncols();
        let mut flat = vec![ZERO; n1 * n2 * q];
        for n in 0..n1 * n2 {
            for j in 0..q {
                flat[n * q + j] = theta[(n, j)];
            }
        }
        let mut s = Self {
            n1,
            n2,
            q,
            theta: flat,
            omega_grid,
            psi_grid,
            coarse: Vec::new(),
            lags: Vec::new(),
            candidates: 3,
        };
        s.lags = s.lag_sums();
        let omegas: Vec<f64> = (0..omega_grid.coarse_points)
            .map(|i| omega_grid.point(i))
            .collect();
        let psis: Vec<f64> = (0..psi_grid.coarse_points)
            .map(|i| psi_grid.point(i))
            .collect();
        s.coarse = s.responses(&omegas, &psis);
        s
    }

    pub fn with_default_grid(theta: &CMatrix, n1: usize, n2: usize) -> Self {
        Self::new(theta, n1, n2, MusicGrid::ris_axis(), MusicGrid::ris_axis())
    }

    fn phases(n: usize, x: f64) -> Vec<C64> {
        (0..n)
            .map(|i| C64::from_polar(1.0, -PI * i as f64 * x))
            .collect()
    }

    /// Unit-norm `ã` for every `(ω, ψ)` pair, laid out `[ω][ψ][q]`.
    fn responses(&self, omegas: &[f64], psis: &[f64]) -> Vec<C64> {
        let (n1, n2, q) = (self.n1, self.n2, self.q);
        let psi_phases: Vec<Vec<C64>> = psis.iter().map(|&p| Self::phases(n2, p)).collect();
        let mut out = vec![ZERO; omegas.len() * psis.len() * q];
        let mut partial = vec![ZERO; n2 * q];
        for (io, &w) in omegas.iter().enumerate() {
            let a1 = Self::phases(n1, w);
            partial.iter_mut().for_each(|v| *v = ZERO);
            for (i1, &c1) in a1.iter().enumerate() {
                let block = &self.theta[i1 * n2 * q..(i1 + 1) * n2 * q];
                for (dst, &t) in partial.iter_mut().zip(block) {
                    *dst += c1 * t;
                }
            }
            for (ip, a2) in psi_phases.iter().enumerate() {
                let dst = &mut out[(io * psis.len() + ip) * q..(io * psis.len() + ip + 1) * q];
                for (i2, &c2) in a2.iter().enumerate() {
                    let row = &partial[i2 * q..(i2 + 1) * q];
                    for (d, &v) in dst.iter_mut().zip(row) {
                        *d += c2 * v;
                    }
                }
                let nrm = dst.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    dst.iter_mut().for_each(|v| *v /= nrm);
                }
            }
        }
        out
    }

    #[inline]
    fn correlation(a: &[C64], r: &[C64]) -> f64 {
        let mut acc = ZERO;
        for (x, y) in a.iter().zip(r) {
            acc += x.conj() * y;
        }
        acc.norm()
    }

    fn lag_sums(&self) -> Vec<C64> {
        let (n1, n2, q) = (self.n1, self.n2, self.q);
        let w2 = 2 * n2 - 1;
        let mut h = vec![ZERO; (2 * n1 - 1) * w2];
        for a in 0..n1 * n2 {
            let ra = &self.theta[a * q..(a + 1) * q];
            for b in 0..n1 * n2 {
                let rb = &self.theta[b * q..(b + 1) * q];
                let mut acc = ZERO;
                for (x, y) in ra.iter().zip(rb) {
                    acc += x * y.conj();
                }
                let d1 = a / n2 + n1 - 1 - b / n2;
                let d2 = a % n2 + n2 - 1 - b % n2;
                h[d1 * w2 + d2] += acc;
            }
        }
        h
    }

    /// `|ãᴴ r| / ‖ã‖` on an `ω × ψ` grid, laid out `[ω][ψ]`, evaluated through
    /// `v = conj(Θ) r` and the lag sums instead of forming `ã`.
    fn scores(&self, r: &[C64], omegas: &[f64], psis: &[f64]) -> Vec<f64> {
        let (n1, n2, q) = (self.n1, self.n2, self.q);
        // conj(v[n]) = Σ_q Θ[n,q] conj(r_q)
        let vc: Vec<C64> = (0..n1 * n2)
            .map(|n| {
                let row = &self.theta[n * q..(n + 1) * q];
                row.iter()
                    .zip(r)
                    .fold(ZERO, |acc, (t, x)| acc + t * x.conj())
            })
            .collect();
        let (w1, w2) = (2 * n1 - 1, 2 * n2 - 1);
        let lag_phases = |n: usize, x: f64| -> Vec<C64> {
            // e^{-jπ d x} for d = -(n-1) ..= n-1
            let z = C64::from_polar(1.0, -PI * x);
            let mut cur = C64::from_polar(1.0, PI * (n as f64 - 1.0) * x);
            (0..2 * n - 1)
                .map(|_| {
                    let v = cur;
                    cur *= z;
                    v
                })
                .collect()
        };
        let psi_pos: Vec<Vec<C64>> = psis.iter().map(|&p| Self::phases(n2, p)).collect();
        let psi_lag: Vec<Vec<C64>> = psis.iter().map(|&p| lag_phases(n2, p)).collect();
        let mut out = Vec::with_capacity(omegas.len() * psis.len());
        let mut num = vec![ZERO; n2];
        let mut den = vec![ZERO; w2];
        for &w in omegas {
            let a1 = Self::phases(n1, w);
            num.iter_mut().for_each(|v| *v = ZERO);
            for (i1, &c) in a1.iter().enumerate() {
                for (d, &v) in num.iter_mut().zip(&vc[i1 * n2..(i1 + 1) * n2]) {
                    *d += c * v;
                }
            }
            let l1 = lag_phases(n1, w);
            den.iter_mut().for_each(|v| *v = ZERO);
            for (d1, &c) in l1.iter().enumerate().take(w1) {
                for (d, &h) in den.iter_mut().zip(&self.lags[d1 * w2..(d1 + 1) * w2]) {
                    *d += c * h;
                }
            }
            for (pp, pl) in psi_pos.iter().zip(&psi_lag) {
                let nv = pp
                    .iter()
                    .zip(&num)
                    .fold(ZERO, |acc, (a, b)| acc + a * b)
                    .norm();
                let dv = pl.iter().zip(&den).fold(ZERO, |acc, (a, b)| acc + a * b).re;
                out.push(if dv > 0.0 { nv / dv.sqrt() } else { 0.0 });
            }
        }
        out
    }

    /// Objective value normalized to `[0, 1]` at one point.
    pub fn score_at(&self, r: &[C64], omega: f64, psi: f64) -> f64 {
        let a = self.responses(&[omega], &[psi]);
        let rn = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if rn == 0.0 {
            0.0
        } else {
            Self::correlation(&a, r) / rn
        }
    }

    /// Coarse objective over the full grid, `[ω][ψ]` row-major (normalized).
    pub fn coarse_map(&self, r: &[C64]) -> Vec<f64> {
        assert_eq!(r.len(), self.q);
        let rn = r
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        self.coarse
            .chunks_exact(self.q)
            .map(|a| Self::correlation(a, r) / rn)
            .collect()
    }

    pub fn grids(&self) -> (MusicGrid, MusicGrid) {
        (self.omega_grid, self.psi_grid)
    }

    pub fn search(&self, r: &[C64]) -> AoaEstimate {
        search_joint(&[(self, r)])
    }

    /// Searcher whose responses are `ã(ω + dω, ψ + dψ)`: the shift is folded
    /// into the rows of Θ, so grids and coarse maps stay aligned.
    pub fn shifted(&self, d_omega: f64, d_psi: f64) -> Self {
        let (n1, n2, q) = (self.n1, self.n2, self.q);
        let theta = CMatrix::from_fn(n1 * n2, q, |n, j| {
            let (i1, i2) = ((n / n2) as f64, (n % n2) as f64);
            self.theta[n * q + j] * C64::from_polar(1.0, -PI * (i1 * d_omega + i2 * d_psi))
        });
        let mut s = Self::new(&theta, n1, n2, self.omega_grid, self.psi_grid);
        s.candidates = self.candidates;
        s
    }
}

/// Joint correlation search: maximizes `Σ_i |ã_iᴴ r_i|² / ‖ã_i‖²` over a
/// common `(ω, ψ)` using each part's own searcher. The score is normalized by
/// `Σ_i ‖r_i‖²` (square-rooted) and so lies in `[0, 1]`.
pub fn search_joint(parts: &[(&AoaSearcher, &[C64])]) -> AoaEstimate {
    assert!(!parts.is_empty(), "joint search needs at least one part");
    let first = parts[0].0;
    let (gw, gp) = first.grids();
    assert!(
        parts.iter().all(|(s, _)| s.grids() == (gw, gp)),
        "joint search parts must share grids"
    );
    let (no, np) = (gw.coarse_points, gp.coarse_points);
    let energies: Vec<f64> = parts
        .iter()
        .map(|(_, r)| r.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .collect();
    let total = energies.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let mut map = vec![0.0; no * np];
    for ((s, r), e) in parts.iter().zip(&energies) {
        for (m, v) in map.iter_mut().zip(s.coarse_map(r)) {
            *m += v * v * e;
        }
    }
    map.iter_mut().for_each(|m| *m = (*m / total).sqrt());

    let at = |i: isize, j: isize| -> f64 {
        let ii = i.rem_euclid(no as isize) as usize;
        let jj = j.rem_euclid(np as isize) as usize;
        map[ii * np + jj]
    };
    let mut maxima: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..no as isize {
        for j in 0..np as isize {
            let v = at(i, j);
            let mut is_max = true;
            'nb: for di in -1..=1isize {
                for dj in -1..=1isize {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let w = at(i + di, j + dj);
                    // earlier neighbours must be strictly lower, later ones not higher
                    let earlier = (di, dj) < (0, 0);
                    if (earlier && w >= v) || (!earlier && w > v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                maxima.push((i as usize, j as usize, v));
            }
        }
    }
    if maxima.is_empty() {
        let best = map
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (idx, &v)| {
                if v > acc.1 {
                    (idx, v)
                } else {
                    acc
                }
            });
        maxima.push((best.0 / np, best.0 % np, best.1));
    }
    maxima.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    maxima.truncate(first.candidates.max(1));

    let eval = |omegas: &[f64], psis: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; omegas.len() * psis.len()];
        for (s, r) in parts {
            for (a, v) in acc.iter_mut().zip(s.scores(r, omegas, psis)) {
                *a += v * v;
            }
        }
        acc.iter().map(|a| (a / total).sqrt()).collect()
    };
    let mut best = AoaEstimate {
        omega: 0.0,
        psi: 0.0,
        score: f64::NEG_INFINITY,
    };
    for &(i, j, v) in &maxima {
        let est = refine_2d(&eval, gw, gp, gw.point(i), gp.point(j), v);
        if est.score > best.score {
            best = est;
        }
    }
    best
}

fn refine_2d(
    eval: &impl Fn(&[f64], &[f64]) -> Vec<f64>,
    gw: MusicGrid,
    gp: MusicGrid,
    w0: f64,
    p0: f64,
    v0: f64,
) -> AoaEstimate {
    let half = gw.refine_half_width().max(gp.refine_half_width());
    let (mut sw, mut sp) = (gw.step(), gp.step());
    let (mut bw, mut bp, mut bv) = (w0, p0, v0);
    for _ in 0..gw.refine_iters.max(gp.refine_iters) {
        sw *= gw.refine_shrink;
        sp *= gp.refine_shrink;
        let omegas: Vec<f64> = (-half..=half).map(|j| bw + j as f64 * sw).collect();
        let psis: Vec<f64> = (-half..=half).map(|j| bp + j as f64 * sp).collect();
        let sc = eval(&omegas, &psis);
        let (cw, cp) = (bw, bp);
        for (io, &w) in omegas.iter().enumerate() {
            for (ip, &p) in psis.iter().enumerate() {
                let v = sc[io * psis.len() + ip];
                let better = v > bv || (v == bv && (w, p) < (bw, bp));
                if better && !(w == cw && p == cp) {
                    bw = w;
                    bp = p;
                    bv = v;
                }
            }
        }
    }
    AoaEstimate {
        omega: gw.wrap(bw),
        psi: gp.wrap(bp),
        score: bv,
    }
}

/// One-shot 2-D correlation search (builds the searcher internally).
pub fn correlate_2d(
    r: &[C64],
    theta: &CMatrix,
    n1: usize,
    n2: usize,
    omega_grid: MusicGrid,
    psi_grid: MusicGrid,
) -> AoaEstimate {
    AoaSearcher::new(theta, n1, n2, omega_grid, psi_grid).search(r)
}

/// Score below which a correlation peak is indistinguishable from noise:
/// the `quantile` of the best score over `trials` noise-only inputs.
pub fn calibrate_noise_threshold(
    searcher: &AoaSearcher,
    trials: usize,
    quantile: f64,
    seed: u64,
) -> f64 {
    let mut rng = crate::rng::stream(seed, &[0x6e6f_6973]);
    let mut scores: Vec<f64> = (0..trials)
        .map(|_| {
            let r: Vec<C64> = (0..searcher.q)
                .map(|_| crate::scenario::complex_normal(&mut rng, 1.0))
                .collect();
            searcher.search(&r).score
        })
        .collect();
    scores.sort_by(|a, b| a.total_cmp(b));
    let idx = ((quantile * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    scores[idx]
}
