//! Forecast plots: per variate, the observed context, the median forecast,
//! and the outer quantile band, rendered straight onto pixels.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::domain::ForecastSet;
use crate::error::{Error, Result};

const MARGIN: u32 = 10;
const STEP_PX: u32 = 3;
const PANEL_H: u32 = 110;
const PANEL_GAP: u32 = 10;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const CONTEXT: Rgb<u8> = Rgb([60, 60, 60]);
const BAND: Rgb<u8> = Rgb([190, 205, 235]);
const MEDIAN: Rgb<u8> = Rgb([220, 90, 30]);
const DIVIDER: Rgb<u8> = Rgb([210, 210, 210]);

/// Maps a value into a panel's pixel rows (larger values sit higher).
fn to_y(value: f64, lo: f64, hi: f64, top: u32, bottom: u32) -> f64 {
    let frac = (value - lo) / (hi - lo);
    bottom as f64 - frac * (bottom - top) as f64
}

/// Draws a line segment by sampling it densely; clips to the image.
fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = x0 + t * (x1 - x0);
        let y = y0 + t * (y1 - y0);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Linear interpolation of a step series at a fractional step position.
fn sample_series(series: &[f64], pos: f64) -> f64 {
    let clamped = pos.clamp(0.0, (series.len() - 1) as f64);
    let i = clamped.floor() as usize;
    let j = (i + 1).min(series.len() - 1);
    let t = clamped - i as f64;
    series[i] * (1.0 - t) + series[j] * t
}

/// Renders one panel per variate — context polyline on the left, the outer
/// quantile band and median-head polyline on the right, with a divider at the
/// forecast origin — and writes the result as a PNG.
///
/// # Errors
/// Fails when the forecast variates disagree with the context, when the set
/// has no median head, or when the file cannot be written.
pub fn plot_forecast(
    path: &Path,
    context: &Array2<f64>,
    forecasts: &ForecastSet,
) -> Result<()> {
    let m = context.ncols();
    let l = context.nrows();
    let point = forecasts.point()?;
    let t = point.nrows();
    if point.ncols() != m {
        return Err(Error::data(format!(
            "forecast covers {} variates, context has {m}",
            point.ncols()
        )));
    }
    if l == 0 || t == 0 {
        return Err(Error::data("plot needs a non-empty context and forecast"));
    }
    let lo_head = &forecasts.per_head[0];
    let hi_head = &forecasts.per_head[forecasts.per_head.len() - 1];
    let width = 2 * MARGIN + (l + t - 1) as u32 * STEP_PX + 1;
    let height = m as u32 * PANEL_H + (m as u32 - 1) * PANEL_GAP + 2 * MARGIN;
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let x_of = |step: f64| MARGIN as f64 + step * STEP_PX as f64;

    for v in 0..m {
        let top = MARGIN + v as u32 * (PANEL_H + PANEL_GAP);
        let bottom = top + PANEL_H - 1;
        let ctx: Vec<f64> = context.column(v).to_vec();
        let med: Vec<f64> = point.column(v).to_vec();
        let band_lo: Vec<f64> = lo_head.column(v).to_vec();
        let band_hi: Vec<f64> = hi_head.column(v).to_vec();

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for bank in [&ctx, &med, &band_lo, &band_hi] {
            for &x in bank.iter() {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        let pad = ((hi - lo) * 0.05).max(1e-9);
        let (lo, hi) = (lo - pad, hi + pad);

        // Divider at the forecast origin.
        let origin_x = x_of((l - 1) as f64) as u32;
        for y in top..=bottom {
            img.put_pixel(origin_x, y, DIVIDER);
        }

        // Quantile band: vertical fill between the outer heads per column.
        let first_fx = x_of((l - 1) as f64).floor() as u32;
        let last_fx = x_of((l + t - 2) as f64).floor() as u32;
        for px in first_fx..=last_fx.min(width - 1) {
            let step = (px as f64 - x_of((l - 1) as f64)) / STEP_PX as f64;
            let a = to_y(sample_series(&band_lo, step), lo, hi, top, bottom);
            let b = to_y(sample_series(&band_hi, step), lo, hi, top, bottom);
            let (ya, yb) = if a < b { (a, b) } else { (b, a) };
            let ya = ya.max(top as f64) as u32;
            let yb = yb.min(bottom as f64) as u32;
            for y in ya..=yb {
                img.put_pixel(px, y, BAND);
            }
        }

        // Context polyline.
        for s in 1..l {
            draw_line(
                &mut img,
                x_of((s - 1) as f64),
                to_y(ctx[s - 1], lo, hi, top, bottom),
                x_of(s as f64),
                to_y(ctx[s], lo, hi, top, bottom),
                CONTEXT,
            );
        }
        // Median forecast polyline, joined to the last context point.
        let joined: Vec<f64> = std::iter::once(ctx[l - 1]).chain(med.iter().copied()).collect();
        for s in 1..joined.len() {
            draw_line(
                &mut img,
                x_of((l - 2 + s) as f64),
                to_y(joined[s - 1], lo, hi, top, bottom),
                x_of((l - 1 + s) as f64),
                to_y(joined[s], lo, hi, top, bottom),
                MEDIAN,
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("cannot write plot {}: {e}", path.display())))
}
