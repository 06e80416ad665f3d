//! Steering vectors, per-link path descriptions and the cascaded-parameter
//! mapping that turns an RIS-BS link plus a UE-RIS link into one effective
//! multipath channel.
//!
//! All delays are normalized so that subcarrier `p` sees phase `exp(-jπ p τ)`;
//! delays and angles are therefore periodic with period 2. Cascaded sums are
//! stored un-wrapped and may exceed 1.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::tensor::{CMatrix, CVector, Kruskal, Tensor3, C64};

/// ULA response `exp(-jπ i x0) / X` for `i = 0..X`.
pub fn steer_ula(x: usize, x0: f64) -> CVector {
    assert!(x >= 1, "array size must be positive");
    let scale = 1.0 / x as f64;
    CVector::from_fn(x, |i, _| C64::from_polar(scale, -PI * i as f64 * x0))
}

/// UPA response `steer_ula(n1, x1) ⊗ steer_ula(n2, x2)`; element
/// `(i1, i2)` sits at index `i1 * n2 + i2`.
pub fn steer_upa(n1: usize, n2: usize, x1: f64, x2: f64) -> CVector {
    let a1 = steer_ula(n1, x1);
    let a2 = steer_ula(n2, x2);
    CVector::from_fn(n1 * n2, |idx, _| a1[idx / n2] * a2[idx % n2])
}

/// Normalized delay from a physical delay `kappa` (seconds), sample rate
/// `fs` (Hz) and subcarrier count `p`.
pub fn normalized_delay(kappa: f64, fs: f64, p: usize) -> f64 {
    2.0 * fs * kappa / p as f64
}

/// Paths of the RIS-BS link, shared by every UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsLink {
    pub gains: Vec<C64>,
    pub delays: Vec<f64>,
    /// Cosine of the angle of arrival at the BS array.
    pub aoa_bs: Vec<f64>,
    /// Departure angles at the RIS (azimuth / elevation direction cosines).
    pub aod_omega: Vec<f64>,
    pub aod_psi: Vec<f64>,
}

impl BsLink {
    pub fn path_count(&self) -> usize {
        self.gains.len()
    }

    pub fn is_consistent(&self) -> bool {
        let l = self.gains.len();
        l >= 1
            && self.delays.len() == l
            && self.aoa_bs.len() == l
            && self.aod_omega.len() == l
            && self.aod_psi.len() == l
    }
}

/// Paths of one UE-RIS link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeLink {
    pub gains: Vec<C64>,
    pub delays: Vec<f64>,
    pub aoa_omega: Vec<f64>,
    pub aoa_psi: Vec<f64>,
}

impl UeLink {
    pub fn path_count(&self) -> usize {
        self.gains.len()
    }

    pub fn is_consistent(&self) -> bool {
        let l = self.gains.len();
        l >= 1 && self.delays.len() == l && self.aoa_omega.len() == l && self.aoa_psi.len() == l
    }
}

/// Cascaded parameters of one UE as `L1 x L2` matrices (row = RIS-BS path,
/// column = UE-RIS path). The linear path index is `u = l * L1 + ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadedParams {
    pub phi: Vec<f64>,
    pub beta: DMatrix<C64>,
    pub tau: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl CascadedParams {
    pub fn l1(&self) -> usize {
        self.phi.len()
    }

    pub fn l2(&self) -> usize {
        self.tau.ncols()
    }

    pub fn path_count(&self) -> usize {
        self.l1() * self.l2()
    }

    /// `(ℓ, l)` for linear index `u`.
    pub fn split_index(&self, u: usize) -> (usize, usize) {
        (u % self.l1(), u / self.l1())
    }

    pub fn flat_phi(&self) -> Vec<f64> {
        (0..self.path_count())
            .map(|u| self.phi[u % self.l1()])
            .collect()
    }

    pub fn flat_beta(&self) -> Vec<C64> {
        // column-major storage already follows u = l * L1 + ℓ
        self.beta.as_slice().to_vec()
    }

    pub fn flat_tau(&self) -> Vec<f64> {
        self.tau.as_slice().to_vec()
    }

    pub fn flat_omega(&self) -> Vec<f64> {
        self.omega.as_slice().to_vec()
    }

    pub fn flat_psi(&self) -> Vec<f64> {
        self.psi.as_slice().to_vec()
    }

    /// Factor matrix of delay responses, `P x U`.
    pub fn delay_factor(&self, p: usize) -> CMatrix {
        steering_columns(p, &self.flat_tau())
    }

    /// Factor matrix of BS responses with duplicated columns, `M x U`.
    pub fn bs_factor(&self, m: usize) -> CMatrix {
        steering_columns(m, &self.flat_phi())
    }

    /// Factor matrix of RIS responses, `N x U`.
    pub fn ris_factor(&self, n1: usize, n2: usize) -> CMatrix {
        upa_columns(n1, n2, &self.flat_omega(), &self.flat_psi())
    }

    /// Channel tensor `P x M x N` in factored form.
    pub fn channel_kruskal(&self, p: usize, m: usize, n1: usize, n2: usize) -> Kruskal {
        Kruskal::new(
            self.delay_factor(p),
            self.bs_factor(m),
            self.ris_factor(n1, n2),
            self.flat_beta(),
        )
    }

    /// Noiseless measurement `P x M x Q` in factored form.
    pub fn measurement_kruskal(
        &self,
        theta: &CMatrix,
        p: usize,
        m: usize,
        n1: usize,
        n2: usize,
    ) -> Kruskal {
        let c = theta.transpose() * self.ris_factor(n1, n2);
        Kruskal::new(self.delay_factor(p), self.bs_factor(m), c, self.flat_beta())
    }
}

pub fn steering_columns(x: usize, params: &[f64]) -> CMatrix {
    let mut out = CMatrix::zeros(x, params.len());
    for (u, &v) in params.iter().enumerate() {
        out.set_column(u, &steer_ula(x, v));
    }
    out
}

pub fn upa_columns(n1: usize, n2: usize, omega: &[f64], psi: &[f64]) -> CMatrix {
    assert_eq!(omega.len(), psi.len());
    let mut out = CMatrix::zeros(n1 * n2, omega.len());
    for (u, (&w, &s)) in omega.iter().zip(psi).enumerate() {
        out.set_column(u, &steer_upa(n1, n2, w, s));
    }
    out
}

/// Combines the shared RIS-BS link with one UE-RIS link.
pub fn map_cascaded(bs: &BsLink, ue: &UeLink) -> CascadedParams {
    assert!(
        bs.is_consistent() && ue.is_consistent(),
        "inconsistent link description"
    );
    let (l1, l2) = (bs.path_count(), ue.path_count());
    CascadedParams {
        phi: bs.aoa_bs.clone(),
        beta: DMatrix::from_fn(l1, l2, |a, b| bs.gains[a] * ue.gains[b]),
        tau: DMatrix::from_fn(l1, l2, |a, b| bs.delays[a] + ue.delays[b]),
        omega: DMatrix::from_fn(l1, l2, |a, b| bs.aod_omega[a] + ue.aoa_omega[b]),
        psi: DMatrix::from_fn(l1, l2, |a, b| bs.aod_psi[a] + ue.aoa_psi[b]),
    }
}

/// Dense channel tensor `P x M x (N1 N2)`.
pub fn synth_channel_tensor(
    c: &CascadedParams,
    p: usize,
    m: usize,
    n1: usize,
    n2: usize,
) -> Tensor3 {
    c.channel_kruskal(p, m, n1, n2).to_dense()
}

/// Noiseless measurement tensor `P x M x Q` for RIS configuration `theta` (`N x Q`).
pub fn synth_measurement(
    c: &CascadedParams,
    theta: &CMatrix,
    p: usize,
    m: usize,
    n1: usize,
    n2: usize,
) -> Tensor3 {
    assert_eq!(theta.nrows(), n1 * n2, "theta must have N1*N2 rows");
    c.measurement_kruskal(theta, p, m, n1, n2).to_dense()
}

/// RIS-BS channel matrix `G_p` (`M x N`) on subcarrier `p`, built from the
/// link description directly.
pub fn ris_bs_matrix(bs: &BsLink, p: usize, m: usize, n1: usize, n2: usize) -> CMatrix {
    let mut g = CMatrix::zeros(m, n1 * n2);
    for i in 0..bs.path_count() {
        let w = bs.gains[i] * C64::from_polar(1.0, -PI * p as f64 * bs.delays[i]);
        let a = steer_ula(m, bs.aoa_bs[i]);
        let d = steer_upa(n1, n2, bs.aod_omega[i], bs.aod_psi[i]);
        g += (a * d.transpose()) * w;
    }
    g
}

/// UE-RIS channel vector `h_p` (length `N`) on subcarrier `p`.
pub fn ue_ris_vector(ue: &UeLink, p: usize, n1: usize, n2: usize) -> CVector {
    let mut h = CVector::zeros(n1 * n2);
    for i in 0..ue.path_count() {
        let w = ue.gains[i] * C64::from_polar(1.0, -PI * p as f64 * ue.delays[i]);
        h += steer_upa(n1, n2, ue.aoa_omega[i], ue.aoa_psi[i]) * w;
    }
    h
}

/// Cascaded channel `G_p diag(h_p)` on subcarrier `p`.
///
/// Because every steering vector carries a `1/X` factor, the Hadamard product
/// of two RIS responses equals the response at the summed angles divided by
/// `N`; this matrix is therefore `1/N` times [`cascaded_matrix_from_params`].
pub fn cascaded_matrix(
    bs: &BsLink,
    ue: &UeLink,
    p: usize,
    m: usize,
    n1: usize,
    n2: usize,
) -> CMatrix {
    let mut g = ris_bs_matrix(bs, p, m, n1, n2);
    let h = ue_ris_vector(ue, p, n1, n2);
    for (col, hv) in h.iter().enumerate() {
        for r in 0..m {
            g[(r, col)] *= hv;
        }
    }
    g
}

/// Cascaded channel on subcarrier `p` rebuilt from the mapped parameters.
pub fn cascaded_matrix_from_params(
    c: &CascadedParams,
    p: usize,
    m: usize,
    n1: usize,
    n2: usize,
) -> CMatrix {
    let mut h = CMatrix::zeros(m, n1 * n2);
    let (beta, tau, phi, om, ps) = (
        c.flat_beta(),
        c.flat_tau(),
        c.flat_phi(),
        c.flat_omega(),
        c.flat_psi(),
    );
    for u in 0..c.path_count() {
        let w = beta[u] * C64::from_polar(1.0, -PI * p as f64 * tau[u]);
        h += (steer_ula(m, phi[u]) * steer_upa(n1, n2, om[u], ps[u]).transpose()) * w;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rel_err_matrix, rel_err_tensor, unfold};

    fn approx(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-14
    }

    fn sample_links() -> (BsLink, UeLink) {
        let bs = BsLink {
            gains: vec![C64::new(0.8, -0.2), C64::new(-0.3, 0.5), C64::new(0.1, 0.9)],
            delays: vec![0.13, 0.52, 0.91],
            aoa_bs: vec![0.21, 0.48, 0.77],
            aod_omega: vec![0.05, 0.66, 0.33],
            aod_psi: vec![0.72, 0.18, 0.44],
        };
        let ue = UeLink {
            gains: vec![
                C64::new(1.1, 0.4),
                C64::new(-0.6, -0.2),
                C64::new(0.2, -0.7),
            ],
            delays: vec![0.31, 0.07, 0.84],
            aoa_omega: vec![0.58, 0.93, 0.11],
            aoa_psi: vec![0.26, 0.61, 0.99],
        };
        (bs, ue)
    }

    #[test]
    fn ula_trivial_values() {
        let a = steer_ula(4, 0.0);
        assert!(a.iter().all(|z| approx(*z, C64::new(0.25, 0.0))));
        let b = steer_ula(2, 1.0);
        assert!(approx(b[0], C64::new(0.5, 0.0)));
        assert!(approx(b[1], C64::new(-0.5, 0.0)));
    }

    #[test]
    fn ula_matches_direct_evaluation() {
        let a = steer_ula(8, 0.37);
        for i in 0..8 {
            let expect = C64::new(0.0, -PI * i as f64 * 0.37).exp() / 8.0;
            assert!(approx(a[i], expect));
        }
    }

    #[test]
    fn upa_trivial_and_double_loop() {
        assert!(approx(steer_upa(1, 1, 0.3, 0.9)[0], C64::new(1.0, 0.0)));
        assert!(steer_upa(2, 2, 0.0, 0.0)
            .iter()
            .all(|z| approx(*z, C64::new(0.25, 0.0))));
        let (x1, x2) = (0.41, 1.37);
        let v = steer_upa(2, 3, x1, x2);
        for i1 in 0..2 {
            for i2 in 0..3 {
                let phase = -PI * (i1 as f64 * x1 + i2 as f64 * x2);
                let expect = C64::from_polar(1.0 / 6.0, phase);
                assert!(approx(v[i1 * 3 + i2], expect));
            }
        }
    }

    #[test]
    fn hadamard_phase_addition() {
        let (n1, n2) = (3, 4);
        let a = steer_upa(n1, n2, 0.3, 0.8);
        let b = steer_upa(n1, n2, 0.45, 1.1);
        let sum = steer_upa(n1, n2, 0.75, 1.9);
        let scale = C64::new((n1 * n2) as f64, 0.0);
        for i in 0..n1 * n2 {
            assert!((a[i] * b[i] * scale - sum[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn mapping_single_and_offsets() {
        let bs = BsLink {
            gains: vec![C64::new(1.0, 0.0)],
            delays: vec![0.3],
            aoa_bs: vec![0.1],
            aod_omega: vec![0.2],
            aod_psi: vec![0.3],
        };
        let ue = UeLink {
            gains: vec![C64::new(2.0, 0.0)],
            delays: vec![0.4],
            aoa_omega: vec![0.5],
            aoa_psi: vec![0.6],
        };
        let c = map_cascaded(&bs, &ue);
        assert!((c.tau[(0, 0)] - 0.7).abs() < 1e-15);

        let (bs, ue) = sample_links();
        let c = map_cascaded(&bs, &ue);
        for row in 1..3 {
            for col in 0..3 {
                let d = c.tau[(row, col)] - c.tau[(0, col)];
                assert!((d - (bs.delays[row] - bs.delays[0])).abs() < 1e-15);
                let r = c.beta[(row, col)] / c.beta[(0, col)];
                assert!((r - bs.gains[row] / bs.gains[0]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cascaded_sum_matches_link_product() {
        let (bs, ue) = sample_links();
        let c = map_cascaded(&bs, &ue);
        let (m, n1, n2) = (5, 3, 2);
        for p in 0..6 {
            let direct = cascaded_matrix(&bs, &ue, p, m, n1, n2);
            let mapped = cascaded_matrix_from_params(&c, p, m, n1, n2);
            // Hadamard of two 1/N-scaled responses carries an extra 1/N
            let scaled = direct * C64::new((n1 * n2) as f64, 0.0);
            assert!(rel_err_matrix(&mapped, &scaled) < 1e-12, "p={p}");
        }
    }

    #[test]
    fn channel_tensor_trivial_and_slices() {
        let c = CascadedParams {
            phi: vec![0.0],
            beta: DMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            tau: DMatrix::zeros(1, 1),
            omega: DMatrix::zeros(1, 1),
            psi: DMatrix::zeros(1, 1),
        };
        let t = synth_channel_tensor(&c, 2, 3, 2, 2);
        let expect = 1.0 / (2.0 * 3.0 * 4.0);
        assert!(t
            .data()
            .iter()
            .all(|z| (z - C64::new(expect, 0.0)).norm() < 1e-15));

        let (bs, ue) = sample_links();
        let c = map_cascaded(&bs, &ue);
        let (p, m, n1, n2) = (4, 3, 2, 2);
        let t = synth_channel_tensor(&c, p, m, n1, n2);
        for pi in 0..p {
            let h = cascaded_matrix_from_params(&c, pi, m, n1, n2) / C64::new(p as f64, 0.0);
            assert!(rel_err_matrix(&t.slice_mode1(pi), &h) < 1e-12);
        }
    }

    #[test]
    fn negated_parameters_conjugate_tensor() {
        let (bs, ue) = sample_links();
        let mut c = map_cascaded(&bs, &ue);
        c.beta = c.beta.map(|_| C64::new(1.0, 0.0));
        let t = synth_channel_tensor(&c, 3, 2, 2, 2);
        let mut neg = c.clone();
        neg.phi.iter_mut().for_each(|x| *x = -*x);
        neg.tau = -neg.tau;
        neg.omega = -neg.omega;
        neg.psi = -neg.psi;
        let tn = synth_channel_tensor(&neg, 3, 2, 2, 2);
        let conj = Tensor3::from_vec(t.dims(), t.data().iter().map(|z| z.conj()).collect());
        assert!(rel_err_tensor(&tn, &conj) < 1e-12);
    }

    #[test]
    fn measurement_ones_config_single_path() {
        let c = CascadedParams {
            phi: vec![0.3],
            beta: DMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            tau: DMatrix::from_element(1, 1, 0.6),
            omega: DMatrix::from_element(1, 1, 0.0),
            psi: DMatrix::from_element(1, 1, 0.0),
        };
        let theta = CMatrix::from_element(4, 1, C64::new(1.0, 0.0));
        let z = synth_measurement(&c, &theta, 3, 2, 2, 2);
        // ones-config sums the all-equal RIS response to 1
        let ap = steer_ula(3, 0.6);
        let am = steer_ula(2, 0.3);
        for i in 0..3 {
            for j in 0..2 {
                assert!((z.get(i, j, 0) - ap[i] * am[j]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn measurement_slices_match_link_matrices() {
        let (bs, ue) = sample_links();
        let c = map_cascaded(&bs, &ue);
        let (p, m, n1, n2, q) = (4, 3, 2, 3, 5);
        let theta = CMatrix::from_fn(n1 * n2, q, |i, j| {
            C64::from_polar(1.0, 0.7 * (i * q + j) as f64)
        });
        let z = synth_measurement(&c, &theta, p, m, n1, n2);
        let scale = C64::new((n1 * n2) as f64 / p as f64, 0.0);
        for pi in 0..p {
            let y = cascaded_matrix(&bs, &ue, pi, m, n1, n2) * &theta * scale;
            assert!(rel_err_matrix(&z.slice_mode1(pi), &y) < 1e-12);
        }
        let k = c.measurement_kruskal(&theta, p, m, n1, n2);
        // R = C diag(beta)
        let mut weighted = k.c.clone();
        for (u, w) in k.weights.iter().enumerate() {
            for row in 0..weighted.nrows() {
                weighted[(row, u)] *= w;
            }
        }
        let expect = &weighted * crate::tensor::khatri_rao(&k.b, &k.a).transpose();
        assert!(rel_err_matrix(&unfold(&z, 3), &expect) < 1e-12);
    }
}
