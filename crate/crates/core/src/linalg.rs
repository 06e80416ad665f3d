//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::linalg::SymmetricEigen;

use crate::error::{Error, Result};
use crate::tensor::{CMatrix, C64};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; eigenvector `i` is column `i` of the returned matrix.
pub fn hermitian_eigen_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    // symmetrize so round-off in accumulated covariances cannot leak in
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Solution of `gram * x = rhs` for a Hermitian positive semidefinite `gram`.
#[derive(Debug, Clone)]
pub struct GramSolve {
    pub solution: CMatrix,
    /// Ratio of smallest to largest eigenvalue of `gram`.
    pub rcond: f64,
    /// Set when a ridge term had to be added.
    pub regularized: bool,
}

/// Solves a Hermitian normal-equation system. Below `min_rcond` a ridge of
/// `min_rcond * λ_max` is added instead of failing.
pub fn solve_gram(gram: &CMatrix, rhs: &CMatrix, min_rcond: f64) -> Result<GramSolve> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n || rhs.nrows() != n {
        return Err(Error::Dimension(format!(
            "gram {}x{} vs rhs {}x{}",
            gram.nrows(),
            gram.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let (vals, _) = hermitian_eigen_desc(gram);
    let lmax = vals[0];
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(Error::FactorCollinearity);
    }
    let lmin = vals[n - 1].max(0.0);
    let rcond = lmin / lmax;
    let mut g = (gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let regularized = rcond < min_rcond;
    if regularized {
        let ridge = C64::new(min_rcond * lmax, 0.0);
        for i in 0..n {
            g[(i, i)] += ridge;
        }
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("cholesky of gram matrix failed".into()))?;
    Ok(GramSolve {
        solution: chol.solve(rhs),
        rcond,
        regularized,
    })
}

/// Moore–Penrose pseudo-inverse of a tall, full-column-rank matrix.
pub fn pinv_tall(b: &CMatrix) -> Result<CMatrix> {
    let gram = b.ad_mul(b);
    let solved = solve_gram(&gram, &b.adjoint(), 1e-12)?;
    if solved.regularized {
        return Err(Error::FactorCollinearity);
    }
    Ok(solved.solution)
}
