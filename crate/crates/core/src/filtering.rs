//! Instance normalization into pixel range and severity filtering of samples.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Channel means of the canonical pixel normalization, on the [0, 1] scale.
pub const PIXEL_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Channel standard deviations of the canonical pixel normalization.
pub const PIXEL_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Default scale factor applied after standardization.
pub const DEFAULT_R: f64 = 0.4;
/// Default floor applied to per-variate standard deviations.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-variate normalization statistics computed from a context window.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    /// Per-variate means.
    pub mean: Array1<f64>,
    /// Per-variate population standard deviations, floored at `eps`.
    pub std: Array1<f64>,
    /// Scale factor applied after standardization.
    pub r: f64,
    /// Standard-deviation floor.
    pub eps: f64,
}

/// Computes per-variate mean and floored population standard deviation from a
/// context window.
///
/// # Errors
/// Fails on an empty context or non-positive `r`/`eps`.
pub fn compute_stats(context: &Array2<f64>, r: f64, eps: f64) -> Result<NormalizationStats> {
    if context.nrows() == 0 || context.ncols() == 0 {
        return Err(Error::data("cannot compute normalization stats on an empty context"));
    }
    if r <= 0.0 || eps <= 0.0 {
        return Err(Error::config(format!(
            "normalization needs r > 0 and eps > 0 (got r={r}, eps={eps})"
        )));
    }
    let n = context.nrows() as f64;
    let mean = context.sum_axis(ndarray::Axis(0)) / n;
    let std = Array1::from_iter(context.columns().into_iter().zip(mean.iter()).map(|(col, &m)| {
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        var.sqrt().max(eps)
    }));
    Ok(NormalizationStats { mean, std, r, eps })
}

/// Maps raw values into normalized space: `r * (x - mean) / std` per variate.
///
/// # Errors
/// Fails when the variate count disagrees with the stats.
pub fn normalize(x: &Array2<f64>, stats: &NormalizationStats) -> Result<Array2<f64>> {
    check_variates(x, stats)?;
    let mut out = x.clone();
    for (mut col, (&m, &s)) in
        out.columns_mut().into_iter().zip(stats.mean.iter().zip(stats.std.iter()))
    {
        col.mapv_inplace(|v| stats.r * (v - m) / s);
    }
    Ok(out)
}

/// Inverse of [`normalize`]: `x * std / r + mean` per variate.
///
/// # Errors
/// Fails when the variate count disagrees with the stats.
pub fn denormalize(x: &Array2<f64>, stats: &NormalizationStats) -> Result<Array2<f64>> {
    check_variates(x, stats)?;
    let mut out = x.clone();
    for (mut col, (&m, &s)) in
        out.columns_mut().into_iter().zip(stats.mean.iter().zip(stats.std.iter()))
    {
        col.mapv_inplace(|v| v / stats.r * s + m);
    }
    Ok(out)
}

fn check_variates(x: &Array2<f64>, stats: &NormalizationStats) -> Result<()> {
    if x.ncols() != stats.mean.len() {
        return Err(Error::data(format!(
            "value block has {} variates but stats describe {}",
            x.ncols(),
            stats.mean.len()
        )));
    }
    Ok(())
}

/// Acceptance interval for normalized values, derived from pixel constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBounds {
    /// Lower bound (negative).
    pub lo: f64,
    /// Upper bound (positive).
    pub hi: f64,
}

/// Intersects the per-channel representable ranges `[(0 - m_c) / s_c,
/// (1 - m_c) / s_c]` into the interval every channel can encode.
///
/// # Errors
/// Fails on non-positive channel deviations or when the intersection does not
/// straddle zero.
pub fn make_pixel_bounds(mean: [f64; 3], std: [f64; 3]) -> Result<PixelBounds> {
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::config(format!("pixel stds must be positive (got {std:?})")));
    }
    let lo = (0..3).map(|c| (0.0 - mean[c]) / std[c]).fold(f64::NEG_INFINITY, f64::max);
    let hi = (0..3).map(|c| (1.0 - mean[c]) / std[c]).fold(f64::INFINITY, f64::min);
    if !(lo < 0.0 && 0.0 < hi) {
        return Err(Error::config(format!(
            "pixel constants give a degenerate acceptance interval [{lo}, {hi}]"
        )));
    }
    Ok(PixelBounds { lo, hi })
}

/// Severity filter: accepts a normalized sample only when every context and
/// target value lies inside the pixel bounds (boundary values included).
pub fn filter_sample(
    norm_context: &Array2<f64>,
    norm_target: &Array2<f64>,
    bounds: &PixelBounds,
) -> bool {
    let inside = |v: &f64| *v >= bounds.lo && *v <= bounds.hi;
    norm_context.iter().all(inside) && norm_target.iter().all(inside)
}
