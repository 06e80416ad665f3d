//! Dense complex 3-way tensors and the matrix products used to unfold them.
//!
//! # Index convention
//!
//! A [`Tensor3`] of shape `(d1, d2, d3)` stores element `(i, j, k)` at linear
//! offset `i + d1 * (j + d2 * k)`, i.e. dimension 1 varies fastest.
//!
//! Unfoldings use the Kronecker-consistent column ordering:
//!
//! | mode | shape            | column of element `(i, j, k)` |
//! |------|------------------|-------------------------------|
//! | 1    | `d1 x (d2*d3)`   | `j + d2 * k`                  |
//! | 2    | `d2 x (d1*d3)`   | `i + d1 * k`                  |
//! | 3    | `d3 x (d1*d2)`   | `i + d1 * j`                  |
//!
//! With this ordering the Kruskal identities hold literally:
//! `unfold([[A,B,C]], 1) = A (C ⊙ B)^T`, `unfold(.., 2) = B (C ⊙ A)^T`,
//! `unfold(.., 3) = C (B ⊙ A)^T` and `vec([[A,B,C]]) = (C ⊙ B ⊙ A) 1`.
//! The often-quoted alternative `(j, k) -> j * d3 + k` for mode 1 is *not*
//! compatible with `c_u ⊗ b_u` columns and is not used anywhere here.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(d1: usize, d2: usize, d3: usize) -> Self {
        assert!(
            d1 > 0 && d2 > 0 && d3 > 0,
            "tensor dimensions must be positive"
        );
        Self {
            dims: (d1, d2, d3),
            data: vec![ZERO; d1 * d2 * d3],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<C64>) -> Self {
        let (d1, d2, d3) = dims;
        assert!(
            d1 > 0 && d2 > 0 && d3 > 0,
            "tensor dimensions must be positive"
        );
        assert_eq!(data.len(), d1 * d2 * d3, "data length must equal d1*d2*d3");
        Self { dims, data }
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> C64,
    ) -> Self {
        let mut t = Self::zeros(dims.0, dims.1, dims.2);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    let idx = t.offset(i, j, k);
                    t.data[idx] = f(i, j, k);
                }
            }
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims.0 * (j + self.dims.1 * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> C64 {
        let (d1, d2, d3) = self.dims;
        assert!(i < d1 && j < d2 && k < d3, "index out of bounds");
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: C64) {
        let (d1, d2, d3) = self.dims;
        assert!(i < d1 && j < d2 && k < d3, "index out of bounds");
        let idx = self.offset(i, j, k);
        self.data[idx] = v;
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `d2 x d3` matrix of all elements with first index `i`.
    pub fn slice_mode1(&self, i: usize) -> CMatrix {
        let (d1, d2, d3) = self.dims;
        assert!(i < d1);
        CMatrix::from_fn(d2, d3, |j, k| self.data[self.offset(i, j, k)])
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// Adds `w * (a ∘ b ∘ c)` in place.
    pub fn add_outer(&mut self, w: C64, a: &[C64], b: &[C64], c: &[C64]) {
        let (d1, d2, d3) = self.dims;
        assert!(
            a.len() == d1 && b.len() == d2 && c.len() == d3,
            "factor length mismatch"
        );
        for (k, &ck) in c.iter().enumerate() {
            let wc = w * ck;
            for (j, &bj) in b.iter().enumerate() {
                let wcb = wc * bj;
                let base = d1 * (j + d2 * k);
                for (dst, &ai) in self.data[base..base + d1].iter_mut().zip(a) {
                    *dst += wcb * ai;
                }
            }
        }
    }
}

/// Outer product `a ∘ b ∘ c`.
pub fn outer3(a: &CVector, b: &CVector, c: &CVector) -> Tensor3 {
    let mut t = Tensor3::zeros(a.len(), b.len(), c.len());
    t.add_outer(ONE, a.as_slice(), b.as_slice(), c.as_slice());
    t
}

/// Mode-`mode` matricization (`mode` in 1..=3).
pub fn unfold(t: &Tensor3, mode: usize) -> CMatrix {
    let (d1, d2, d3) = t.dims;
    match mode {
        1 => CMatrix::from_column_slice(d1, d2 * d3, &t.data),
        2 => {
            let mut m = CMatrix::zeros(d2, d1 * d3);
            for k in 0..d3 {
                for j in 0..d2 {
                    for i in 0..d1 {
                        m[(j, i + d1 * k)] = t.data[i + d1 * (j + d2 * k)];
                    }
                }
            }
            m
        }
        3 => {
            let mut m = CMatrix::zeros(d3, d1 * d2);
            for k in 0..d3 {
                for col in 0..d1 * d2 {
                    m[(k, col)] = t.data[col + d1 * d2 * k];
                }
            }
            m
        }
        _ => panic!("unfold mode must be 1, 2 or 3 (got {mode})"),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &CMatrix, mode: usize, dims: (usize, usize, usize)) -> Tensor3 {
    let (d1, d2, d3) = dims;
    let expected = match mode {
        1 => (d1, d2 * d3),
        2 => (d2, d1 * d3),
        3 => (d3, d1 * d2),
        _ => panic!("fold mode must be 1, 2 or 3 (got {mode})"),
    };
    assert_eq!(m.shape(), expected, "unfolding shape does not match dims");
    Tensor3::from_fn(dims, |i, j, k| match mode {
        1 => m[(i, j + d2 * k)],
        2 => m[(j, i + d1 * k)],
        _ => m[(k, i + d1 * j)],
    })
}

pub fn vectorize(t: &Tensor3) -> CVector {
    CVector::from_column_slice(&t.data)
}

pub fn fold_vector(v: &CVector, dims: (usize, usize, usize)) -> Tensor3 {
    Tensor3::from_vec(dims, v.as_slice().to_vec())
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// Column-wise Kronecker product; column `u` is `kron(A[:,u], B[:,u])`.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(
        a.ncols(),
        b.ncols(),
        "khatri_rao requires equal column counts"
    );
    let (m, n, r) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = CMatrix::zeros(m * n, r);
    for u in 0..r {
        for i in 0..m {
            let ai = a[(i, u)];
            for j in 0..n {
                out[(i * n + j, u)] = ai * b[(j, u)];
            }
        }
    }
    out
}

/// Column-stacked reshape of a length `p*q` vector into a `p x q` matrix.
///
/// Element `(i, j)` is `v[i + p*j]`, matching the column order of the
/// mode-2 unfolding, so a row of `B^† Y_(2)` folds into `Σ a(τ) rᵀ`.
pub fn mat_fold(v: &[C64], p: usize, q: usize) -> CMatrix {
    assert_eq!(v.len(), p * q, "mat_fold length mismatch");
    CMatrix::from_column_slice(p, q, v)
}

/// Tensor in Kruskal form `Σ_u w_u a_u ∘ b_u ∘ c_u`, kept factored so that
/// channels with large third dimension never need to be materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Kruskal {
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: CMatrix,
    pub weights: Vec<C64>,
}

impl Kruskal {
    pub fn new(a: CMatrix, b: CMatrix, c: CMatrix, weights: Vec<C64>) -> Self {
        let r = weights.len();
        assert!(
            a.ncols() == r && b.ncols() == r && c.ncols() == r,
            "Kruskal rank mismatch"
        );
        Self { a, b, c, weights }
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn to_dense(&self) -> Tensor3 {
        let (d1, d2, d3) = self.dims();
        let mut t = Tensor3::zeros(d1, d2, d3);
        for (u, &w) in self.weights.iter().enumerate() {
            t.add_outer(
                w,
                self.a.column(u).as_slice(),
                self.b.column(u).as_slice(),
                self.c.column(u).as_slice(),
            );
        }
        t
    }

    /// `<self, other>` computed from factor Gram matrices.
    pub fn inner(&self, other: &Kruskal) -> C64 {
        assert_eq!(self.dims(), other.dims(), "Kruskal dims mismatch");
        let ga = self.a.ad_mul(&other.a);
        let gb = self.b.ad_mul(&other.b);
        let gc = self.c.ad_mul(&other.c);
        let mut acc = ZERO;
        for (u, wu) in self.weights.iter().enumerate() {
            for (v, wv) in other.weights.iter().enumerate() {
                acc += wu.conj() * wv * ga[(u, v)] * gb[(u, v)] * gc[(u, v)];
            }
        }
        acc
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.inner(self).re.max(0.0)
    }

    /// `‖self − other‖²_F` without materializing either tensor.
    pub fn distance_sq(&self, other: &Kruskal) -> f64 {
        let cross = self.inner(other).re;
        (self.frobenius_sq() + other.frobenius_sq() - 2.0 * cross).max(0.0)
    }
}

pub fn hermitian_part_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖` (absolute when `b` is zero).
pub fn rel_err_matrix(a: &CMatrix, b: &CMatrix) -> f64 {
    let den = b.norm();
    let num = (a - b).norm();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn rel_err_tensor(a: &Tensor3, b: &Tensor3) -> f64 {
    assert_eq!(a.dims(), b.dims());
    let num: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let den = b.frobenius_sq();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// `Σ_k Y_(2)^k Y_(2)^kᴴ` over all tensors (unnormalized), computed as one
/// real Gram product of the stacked real/imaginary parts.
pub fn mode2_covariance(tensors: &[Tensor3]) -> CMatrix {
    assert!(!tensors.is_empty());
    let (p, m, q) = tensors[0].dims();
    let rows = p * q * tensors.len();
    // W is rows x 2M, column-major: [Re Y | Im Y] with row index p + P q + PQ k
    let mut w = DMatrix::<f64>::zeros(rows, 2 * m);
    for (k, t) in tensors.iter().enumerate() {
        assert_eq!(t.dims(), (p, m, q), "tensor dims differ");
        let data = t.data();
        for qi in 0..q {
            for mi in 0..m {
                let src = &data[p * (mi + m * qi)..p * (mi + m * qi + 1)];
                let row0 = p * qi + p * q * k;
                for (pi, v) in src.iter().enumerate() {
                    w[(row0 + pi, mi)] = v.re;
                    w[(row0 + pi, m + mi)] = v.im;
                }
            }
        }
    }
    let g = w.transpose() * &w;
    // R[a,b] = Σ y_a conj(y_b) = (ReRe + ImIm) + j (ImRe - ReIm)
    CMatrix::from_fn(m, m, |a, b| {
        C64::new(g[(a, b)] + g[(m + a, m + b)], g[(m + a, b)] - g[(a, m + b)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(r, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    // element-wise Kruskal construction, independent of add_outer
    fn brute_kruskal(a: &CMatrix, b: &CMatrix, cm: &CMatrix) -> Tensor3 {
        let mut t = Tensor3::zeros(a.nrows(), b.nrows(), cm.nrows());
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                for k in 0..cm.nrows() {
                    let mut s = ZERO;
                    for u in 0..a.ncols() {
                        s += a[(i, u)] * b[(j, u)] * cm[(k, u)];
                    }
                    t.set(i, j, k, s);
                }
            }
        }
        t
    }

    #[test]
    fn outer_identity_case() {
        let one = CVector::from_element(1, ONE);
        let t = outer3(&one, &one, &one);
        assert_eq!(t.dims(), (1, 1, 1));
        assert_eq!(t.get(0, 0, 0), ONE);
    }

    #[test]
    fn outer_basis_vector_kills_row() {
        let a = CVector::from_vec(vec![ONE, ZERO]);
        let b = CVector::from_vec(vec![ONE, ONE]);
        let cc = CVector::from_vec(vec![c(2.0, 0.0)]);
        let t = outer3(&a, &b, &cc);
        let s = t.slice_mode1(0);
        assert_eq!(s, CMatrix::from_element(2, 1, c(2.0, 0.0)));
        // k = 0 slice laid out as [[2,2],[0,0]]
        assert_eq!(t.get(0, 0, 0), c(2.0, 0.0));
        assert_eq!(t.get(0, 1, 0), c(2.0, 0.0));
        assert_eq!(t.get(1, 0, 0), ZERO);
        assert_eq!(t.get(1, 1, 0), ZERO);
    }

    #[test]
    fn outer_matches_triple_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, cc) = (
            rand_vec(&mut rng, 3),
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 4),
        );
        let t = outer3(&a, &b, &cc);
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    assert!((t.get(i, j, k) - a[i] * b[j] * cc[k]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn unfold_scalar_tensor() {
        let t = Tensor3::from_vec((1, 1, 1), vec![c(3.0, -1.0)]);
        for mode in 1..=3 {
            assert_eq!(unfold(&t, mode), CMatrix::from_element(1, 1, c(3.0, -1.0)));
        }
    }

    #[test]
    fn mode1_unfolding_fiber_layout() {
        // data 1..8, element (i,j,k) = 1 + i + 2j + 4k
        let t = Tensor3::from_vec((2, 2, 2), (1..=8).map(|x| c(x as f64, 0.0)).collect());
        let m = unfold(&t, 1);
        // column j + 2k holds the mode-1 fiber (:, j, k)
        let expect = [[1.0, 3.0, 5.0, 7.0], [2.0, 4.0, 6.0, 8.0]];
        for (i, row) in expect.iter().enumerate() {
            for (col, &v) in row.iter().enumerate() {
                assert_eq!(m[(i, col)].re, v);
            }
        }
        let m2 = unfold(&t, 2);
        // column i + 2k holds the mode-2 fiber (i, :, k)
        let expect2 = [[1.0, 2.0, 5.0, 6.0], [3.0, 4.0, 7.0, 8.0]];
        for (j, row) in expect2.iter().enumerate() {
            for (col, &v) in row.iter().enumerate() {
                assert_eq!(m2[(j, col)].re, v);
            }
        }
        let m3 = unfold(&t, 3);
        let expect3 = [[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]];
        for (k, row) in expect3.iter().enumerate() {
            for (col, &v) in row.iter().enumerate() {
                assert_eq!(m3[(k, col)].re, v);
            }
        }
    }

    #[test]
    fn mode2_identity_random_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b, r) = (
            rand_mat(&mut rng, 3, 2),
            rand_mat(&mut rng, 4, 2),
            rand_mat(&mut rng, 5, 2),
        );
        let t = brute_kruskal(&a, &b, &r);
        let lhs = unfold(&t, 2);
        let rhs = &b * khatri_rao(&r, &a).transpose();
        assert!(rel_err_matrix(&lhs, &rhs) < 1e-12);
    }

    #[test]
    #[should_panic]
    fn unfold_rejects_bad_mode() {
        let t = Tensor3::zeros(1, 1, 1);
        let _ = unfold(&t, 4);
    }

    #[test]
    fn khatri_rao_small_cases() {
        let one = CMatrix::from_element(1, 1, ONE);
        assert_eq!(khatri_rao(&one, &one), one);
        let a = CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(2.0, 0.0)]);
        let b = CMatrix::from_column_slice(2, 1, &[c(3.0, 0.0), c(4.0, 0.0)]);
        let kr = khatri_rao(&a, &b);
        let vals: Vec<f64> = kr.iter().map(|z| z.re).collect();
        assert_eq!(vals, vec![3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn khatri_rao_against_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 4, 2));
        let kr = khatri_rao(&a, &b);
        for u in 0..2 {
            let mut idx = 0;
            for i in 0..3 {
                for j in 0..4 {
                    assert!((kr[(idx, u)] - a[(i, u)] * b[(j, u)]).norm() < 1e-15);
                    idx += 1;
                }
            }
        }
    }

    #[test]
    #[should_panic]
    fn khatri_rao_rejects_column_mismatch() {
        let _ = khatri_rao(&CMatrix::zeros(2, 2), &CMatrix::zeros(2, 3));
    }

    #[test]
    fn vectorize_scalar_and_outer_ordering() {
        let t = Tensor3::from_vec((1, 1, 1), vec![c(0.5, 0.5)]);
        assert_eq!(vectorize(&t).as_slice(), &[c(0.5, 0.5)]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, cc) = (
            rand_vec(&mut rng, 3),
            rand_vec(&mut rng, 2),
            rand_vec(&mut rng, 4),
        );
        let v = vectorize(&outer3(&a, &b, &cc));
        let expect = kron_vec(&kron_vec(cc.as_slice(), b.as_slice()), a.as_slice());
        for (x, y) in v.iter().zip(&expect) {
            assert!((x - y).norm() < 1e-15);
        }
        let back = fold_vector(&v, (3, 2, 4));
        assert_eq!(back, outer3(&a, &b, &cc));
    }

    #[test]
    fn mat_fold_identity_and_kron() {
        assert_eq!(
            mat_fold(&[c(2.0, 1.0)], 1, 1),
            CMatrix::from_element(1, 1, c(2.0, 1.0))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, r) = (rand_vec(&mut rng, 5), rand_vec(&mut rng, 3));
        let v = kron_vec(r.as_slice(), a.as_slice());
        let m = mat_fold(&v, 5, 3);
        assert!(rel_err_matrix(&m, &(&a * r.transpose())) < 1e-15);
    }

    #[test]
    #[should_panic]
    fn mat_fold_rejects_length_mismatch() {
        let _ = mat_fold(&[ONE; 5], 2, 3);
    }

    #[test]
    fn kruskal_gram_norms_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k1 = Kruskal::new(
            rand_mat(&mut rng, 4, 3),
            rand_mat(&mut rng, 3, 3),
            rand_mat(&mut rng, 5, 3),
            (0..3)
                .map(|_| c(rng.random_range(-1.0..1.0), 0.3))
                .collect(),
        );
        let k2 = Kruskal::new(
            rand_mat(&mut rng, 4, 2),
            rand_mat(&mut rng, 3, 2),
            rand_mat(&mut rng, 5, 2),
            vec![ONE, c(0.0, 2.0)],
        );
        let (d1, d2) = (k1.to_dense(), k2.to_dense());
        assert!((k1.frobenius_sq() - d1.frobenius_sq()).abs() < 1e-10 * d1.frobenius_sq());
        let diff: f64 = d1
            .data()
            .iter()
            .zip(d2.data())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        assert!((k1.distance_sq(&k2) - diff).abs() < 1e-10 * diff);
    }

    #[test]
    fn all_unfoldings_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor3::from_fn((3, 4, 2), |_, _, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        for mode in 1..=3 {
            assert_eq!(fold(&unfold(&t, mode), mode, t.dims()), t);
        }
    }
}
