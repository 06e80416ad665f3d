//! Structural validity check: in correct estimates the first two rows of a
//! UE's delay (identity) and log-gain matrices differ by a constant.

use nalgebra::DMatrix;

use crate::robust::wrap_centered;
use crate::tensor::C64;

pub const DEFAULT_EPSILON: f64 = 0.1;

pub fn default_k0(k: usize) -> usize {
    k.div_ceil(2)
}

/// `‖d - mean(d)‖_∞` for `d = x[1,:] - x[0,:]`; delay differences are
/// taken modulo 2. `None` when there is only one row.
pub fn tau_deviation(tau: &DMatrix<f64>) -> Option<f64> {
    if tau.nrows() < 2 || tau.ncols() == 0 {
        return None;
    }
    let d: Vec<f64> = (0..tau.ncols())
        .map(|c| wrap_centered(tau[(1, c)] - tau[(0, c)], 2.0))
        .collect();
    let rel: Vec<f64> = d.iter().map(|v| wrap_centered(v - d[0], 2.0)).collect();
    Some(max_dev(&rel))
}

/// Same statistic on `ln|β|`.
pub fn beta_deviation(beta: &DMatrix<C64>) -> Option<f64> {
    if beta.nrows() < 2 || beta.ncols() == 0 {
        return None;
    }
    let d: Vec<f64> = (0..beta.ncols())
        .map(|c| {
            beta[(1, c)].norm().max(f64::MIN_POSITIVE).ln()
                - beta[(0, c)].norm().max(f64::MIN_POSITIVE).ln()
        })
        .collect();
    Some(max_dev(&d))
}

fn max_dev(d: &[f64]) -> f64 {
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max)
}

/// A UE is reliable when both deviations are below `epsilon`; single-row
/// estimates carry no row structure and count as reliable.
pub fn ue_reliable(tau: &DMatrix<f64>, beta: &DMatrix<C64>, epsilon: f64) -> bool {
    match (tau_deviation(tau), beta_deviation(beta)) {
        (Some(t), Some(b)) => t < epsilon && b < epsilon,
        _ => true,
    }
}

/// `k0`-out-of-`K` vote over per-UE reliability.
pub fn vote(reliable: &[bool], k0: usize) -> bool {
    reliable.iter().filter(|&&r| r).count() >= k0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_have_zero_deviation() {
        let tau = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 1.9, 0.4, 0.8, 0.2]);
        assert!(tau_deviation(&tau).unwrap() < 1e-12);
        let beta = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.0, 2.0),
                C64::new(3.0, 0.0),
                C64::new(0.0, -6.0),
            ],
        );
        assert!(beta_deviation(&beta).unwrap() < 1e-12);
        assert!(ue_reliable(&tau.columns(0, 2).into_owned(), &beta, 0.1));
    }

    #[test]
    fn broken_rows_rejected() {
        let tau = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.9, 0.4, 0.2, 1.5]);
        assert!(tau_deviation(&tau).unwrap() > 0.1);
        let one_row = DMatrix::from_row_slice(1, 2, &[0.1, 0.5]);
        assert_eq!(tau_deviation(&one_row), None);
    }

    #[test]
    fn vote_threshold_boundary() {
        let k0 = default_k0(8);
        assert_eq!(k0, 4);
        assert!(!vote(
            &[true, true, true, false, false, false, false, false],
            k0
        ));
        assert!(vote(
            &[true, true, true, true, false, false, false, false],
            k0
        ));
        assert_eq!(default_k0(5), 3);
    }
}
