//! Median / MAD based outlier screening.

/// Scale factor turning a MAD into a consistent standard-deviation estimate
/// for Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median absolute deviation around the median.
pub fn mad(values: &[f64]) -> Option<f64> {
    let med = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    median(&dev)
}

/// Inlier mask: `|x - median| <= max(k * 1.4826 * MAD, floor)`.
pub fn inlier_mask(values: &[f64], k: f64, floor: f64) -> Vec<bool> {
    let (Some(med), Some(m)) = (median(values), mad(values)) else {
        return Vec::new();
    };
    let thr = (k * MAD_SCALE * m).max(floor);
    values.iter().map(|v| (v - med).abs() <= thr).collect()
}

/// Wraps `x` into `[-period/2, period/2)`.
pub fn wrap_centered(x: f64, period: f64) -> f64 {
    (x + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Circular median on a period: the candidate sample minimizing the summed
/// wrapped distance to all samples.
pub fn circular_median(values: &[f64], period: f64) -> Option<f64> {
    values
        .iter()
        .map(|&c| {
            (
                c,
                values
                    .iter()
                    .map(|&v| wrap_centered(v - c, period).abs())
                    .sum::<f64>(),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
        .map(|(c, _)| c)
}
