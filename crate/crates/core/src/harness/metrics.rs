//! Error metrics.

use crate::error::{Error, Result};
use crate::tensor::{Kruskal, Tensor3};

/// Floor used when an error is exactly zero.
pub const DB_FLOOR: f64 = -120.0;

/// `‖ĥ - h‖² / ‖h‖²`.
pub fn nmse(h_hat: &Tensor3, h_true: &Tensor3) -> Result<f64> {
    if h_hat.dims() != h_true.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            h_hat.dims(),
            h_true.dims()
        )));
    }
    let energy = h_true.frobenius_sq();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let err: f64 = h_hat
        .data()
        .iter()
        .zip(h_true.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err / energy)
}

/// NMSE between factored tensors, never materializing either.
pub fn nmse_kruskal(h_hat: &Kruskal, h_true: &Kruskal) -> Result<f64> {
    if h_hat.dims() != h_true.dims() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            h_hat.dims(),
            h_true.dims()
        )));
    }
    let energy = h_true.frobenius_sq();
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(h_hat.distance_sq(h_true) / energy)
}

pub fn to_db(linear: f64) -> f64 {
    if linear > 0.0 {
        (10.0 * linear.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
