//! Transforms between normalized series and pixel space: period folding,
//! colorized subfigure layout, mask construction, and per-head inversion.

mod resize;

pub use resize::{bilinear_resize, bilinear_resize_adjoint, resize_weights};

use ndarray::{s, Array1, Array2, Array3, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{ForecastSet, ImageGeometry, QuantileSet};
use crate::error::{Error, Result};
use crate::filtering::{denormalize, NormalizationStats};

/// How channel choices were made for a sample's variates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMode {
    /// `channels[v] = v mod 3`; deterministic, used at inference.
    Cyclic,
    /// Uniform over channels, re-drawn while equal to the previous variate's
    /// channel; used in training with a seeded generator.
    Random,
}

/// Per-variate RGB channel assignment with the adjacent-variates-differ rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorAssignment {
    /// Channel index in {0,1,2} for each variate.
    pub channels: Vec<usize>,
    /// How the assignment was produced.
    pub mode: ColorMode,
}

impl ColorAssignment {
    /// Deterministic assignment `v mod 3`.
    pub fn cyclic(m: usize) -> Self {
        Self { channels: (0..m).map(|v| v % 3).collect(), mode: ColorMode::Cyclic }
    }

    /// Random assignment: uniform channel per variate, rejecting draws equal
    /// to the previous variate's channel.
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let mut channels = Vec::with_capacity(m);
        for v in 0..m {
            let c = loop {
                let candidate = rng.random_range(0..3usize);
                if v == 0 || candidate != channels[v - 1] {
                    break candidate;
                }
            };
            channels.push(c);
        }
        Self { channels, mode: ColorMode::Random }
    }
}

/// Builds a channel assignment for `m` variates.
///
/// # Errors
/// Fails when `m` is zero.
pub fn assign_colors(m: usize, mode: ColorMode, seed: Option<u64>) -> Result<ColorAssignment> {
    if m == 0 {
        return Err(Error::data("color assignment needs at least one variate"));
    }
    Ok(match mode {
        ColorMode::Cyclic => ColorAssignment::cyclic(m),
        ColorMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            ColorAssignment::random(m, &mut rng)
        }
    })
}

/// Channel layout of the rendered canvas: colorized subfigures, or a
/// grayscale ablation that writes every variate to all three channels and
/// reads back their average.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelScheme {
    /// One RGB channel per variate.
    Color(ColorAssignment),
    /// Value replicated to all channels; extraction averages them.
    Grayscale,
}

/// Everything needed to paint one sample onto the canvas and read it back:
/// geometry, fold shapes, subfigure layout, channel scheme, and the
/// normalization stats for returning to raw units.
#[derive(Debug, Clone)]
pub struct ColorImagePlan {
    /// Canvas geometry.
    pub geometry: ImageGeometry,
    /// Variate count.
    pub m: usize,
    /// Fold period.
    pub p: usize,
    /// Context length the plan was built for.
    pub context_len: usize,
    /// Context fold columns, `⌊L/P⌋`.
    pub context_cols: usize,
    /// Target fold columns, `⌈T/P⌉`.
    pub target_cols: usize,
    /// Subfigure height, `⌊W/M⌋`.
    pub sub_h: usize,
    /// All-zero rows at the canvas bottom, `W − sub_h·M`.
    pub pad_rows: usize,
    /// Channel layout.
    pub scheme: ChannelScheme,
    /// Per-variate normalization stats of the sample.
    pub stats: NormalizationStats,
}

impl ColorImagePlan {
    /// Lays out `m` variates with period `p` for a `(context_len, horizon)`
    /// window.
    ///
    /// # Errors
    /// Fails when the context is shorter than one period, when `m` exceeds
    /// the canvas height, or when scheme/stats disagree with `m`.
    pub fn new(
        geometry: ImageGeometry,
        m: usize,
        p: usize,
        context_len: usize,
        horizon: usize,
        scheme: ChannelScheme,
        stats: NormalizationStats,
    ) -> Result<Self> {
        if m == 0 || p == 0 || horizon == 0 {
            return Err(Error::data("plan needs m >= 1, p >= 1, horizon >= 1"));
        }
        if m > geometry.w {
            return Err(Error::data(format!(
                "{m} variates exceed the canvas height of {} pixels",
                geometry.w
            )));
        }
        if context_len < p {
            return Err(Error::data(format!(
                "context of {context_len} steps is shorter than one period ({p})"
            )));
        }
        if let ChannelScheme::Color(assignment) = &scheme {
            if assignment.channels.len() != m {
                return Err(Error::data(format!(
                    "color assignment covers {} variates, sample has {m}",
                    assignment.channels.len()
                )));
            }
        }
        if stats.mean.len() != m {
            return Err(Error::data(format!(
                "normalization stats cover {} variates, sample has {m}",
                stats.mean.len()
            )));
        }
        let sub_h = geometry.w / m;
        if sub_h < geometry.s {
            log::warn!(
                "subfigures of {sub_h} px are thinner than one {} px patch; \
                 attention granularity will merge variates",
                geometry.s
            );
        }
        Ok(Self {
            geometry,
            m,
            p,
            context_len,
            context_cols: context_len / p,
            target_cols: horizon.div_ceil(p),
            sub_h,
            pad_rows: geometry.w - sub_h * m,
            scheme,
            stats,
        })
    }
}

/// Folds a series into a `(period, ⌊len/period⌋)` matrix, one subsequence per
/// column, oldest first; when the period does not divide the length the
/// oldest remainder is discarded.
///
/// # Errors
/// Fails when the series is shorter than one period.
pub fn fold_by_period(series: ArrayView1<f64>, period: usize) -> Result<Array2<f64>> {
    let len = series.len();
    if period == 0 || len < period {
        return Err(Error::data(format!(
            "cannot fold {len} steps by period {period}"
        )));
    }
    let cols = len / period;
    let start = len - cols * period;
    Ok(Array2::from_shape_fn((period, cols), |(i, j)| series[start + j * period + i]))
}

/// Inverse of [`fold_by_period`]: concatenates columns in order and truncates
/// to the first `t` values.
///
/// # Errors
/// Fails when the matrix holds fewer than `t` values.
pub fn unfold_by_period(matrix: &Array2<f64>, t: usize) -> Result<Array1<f64>> {
    let (p, cols) = matrix.dim();
    if p * cols < t {
        return Err(Error::data(format!(
            "cannot unfold {t} steps from a {p}x{cols} fold"
        )));
    }
    Ok(Array1::from_shape_fn(t, |k| matrix[[k % p, k / p]]))
}

/// Paints a normalized context onto the left canvas half: per variate, fold by
/// period, resize to `(sub_h, W/2)`, and write the subfigure block into its
/// assigned channel (all channels when grayscale). Unwritten channels and the
/// bottom pad rows stay zero.
///
/// # Errors
/// Fails when the context shape disagrees with the plan.
pub fn render_context(norm_context: &Array2<f64>, plan: &ColorImagePlan) -> Result<Array3<f64>> {
    let (l, m) = norm_context.dim();
    if m != plan.m || l != plan.context_len || l / plan.p != plan.context_cols {
        return Err(Error::data(format!(
            "context of shape {l}x{m} does not match a plan for {}x{} (cols {})",
            plan.context_len, plan.m, plan.context_cols
        )));
    }
    let (w, half) = (plan.geometry.w, plan.geometry.half_cols());
    let mut image = Array3::zeros((w, half, 3));
    for v in 0..m {
        let folded = fold_by_period(norm_context.column(v), plan.p)?;
        let block = bilinear_resize(&folded, plan.sub_h, half)?;
        let r0 = v * plan.sub_h;
        match &plan.scheme {
            ChannelScheme::Color(assignment) => {
                image
                    .slice_mut(s![r0..r0 + plan.sub_h, .., assignment.channels[v]])
                    .assign(&block);
            }
            ChannelScheme::Grayscale => {
                for c in 0..3 {
                    image.slice_mut(s![r0..r0 + plan.sub_h, .., c]).assign(&block);
                }
            }
        }
    }
    Ok(image)
}

/// Places the rendered left half beside a zero right half and builds the patch
/// mask: `mask[r][c]` is true (reconstruct this patch) iff `c >= N/2`.
///
/// # Errors
/// Fails when the left image does not span `(W, W/2, 3)`.
pub fn build_model_input(
    left_image: &Array3<f64>,
    geometry: ImageGeometry,
) -> Result<(Array3<f64>, Array2<bool>)> {
    let (w, half) = (geometry.w, geometry.half_cols());
    if left_image.dim() != (w, half, 3) {
        return Err(Error::data(format!(
            "left image has shape {:?}, expected ({w}, {half}, 3)",
            left_image.dim()
        )));
    }
    let mut full = Array3::zeros((w, w, 3));
    full.slice_mut(s![.., ..half, ..]).assign(left_image);
    let n = geometry.n();
    let mask = Array2::from_shape_fn((n, n), |(_, c)| c >= n / 2);
    Ok((full, mask))
}

/// Reads one head's normalized forecast out of a reconstructed canvas: per
/// variate, take the right-half subfigure rows in the assigned channel
/// (channel average when grayscale), resize to `(P, target_cols)`, unfold,
/// and keep the first `t` steps. Pad rows and non-assigned channels are never
/// read.
///
/// # Errors
/// Fails on a canvas of the wrong shape or `t` beyond `P * target_cols`.
pub fn extract_normalized(
    reconstructed: &Array3<f64>,
    plan: &ColorImagePlan,
    t: usize,
) -> Result<Array2<f64>> {
    let (w, half) = (plan.geometry.w, plan.geometry.half_cols());
    if reconstructed.dim() != (w, w, 3) {
        return Err(Error::data(format!(
            "reconstruction has shape {:?}, expected ({w}, {w}, 3)",
            reconstructed.dim()
        )));
    }
    if t > plan.target_cols * plan.p {
        return Err(Error::data(format!(
            "cannot extract {t} steps from {} fold columns of period {}",
            plan.target_cols, plan.p
        )));
    }
    let mut series = Array2::zeros((t, plan.m));
    for v in 0..plan.m {
        let r0 = v * plan.sub_h;
        let rows = s![r0..r0 + plan.sub_h, half.., ..];
        let block: Array2<f64> = match &plan.scheme {
            ChannelScheme::Color(assignment) => reconstructed
                .slice(s![r0..r0 + plan.sub_h, half.., assignment.channels[v]])
                .to_owned(),
            ChannelScheme::Grayscale => {
                let all = reconstructed.slice(rows);
                (&all.index_axis(ndarray::Axis(2), 0)
                    + &all.index_axis(ndarray::Axis(2), 1)
                    + all.index_axis(ndarray::Axis(2), 2))
                    / 3.0
            }
        };
        let folded = bilinear_resize(&block, plan.p, plan.target_cols)?;
        let values = unfold_by_period(&folded, t)?;
        series.column_mut(v).assign(&values);
    }
    Ok(series)
}

/// Inverts a bank of reconstructed canvases into raw-unit forecasts: extract
/// each head's normalized series, denormalize with the plan's stats, and
/// attach evenly spaced quantile levels.
///
/// # Errors
/// Fails on an empty bank, canvas shape mismatch, or an unreachable horizon.
pub fn extract_forecasts(
    reconstructed: &[Array3<f64>],
    plan: &ColorImagePlan,
    t: usize,
) -> Result<ForecastSet> {
    if reconstructed.is_empty() {
        return Err(Error::data("cannot extract forecasts from an empty head bank"));
    }
    let per_head = reconstructed
        .iter()
        .map(|img| denormalize(&extract_normalized(img, plan, t)?, &plan.stats))
        .collect::<Result<Vec<_>>>()?;
    ForecastSet::new(per_head, QuantileSet::evenly_spaced(reconstructed.len())?)
}

/// Adjoint of [`extract_normalized`]: scatters a series-space gradient back
/// onto canvas pixels. Only right-half subfigure rows of assigned channels
/// receive gradient; everything extraction never reads stays zero.
///
/// # Errors
/// Fails when the gradient shape disagrees with the plan.
pub fn extract_adjoint(
    grad_series: &Array2<f64>,
    plan: &ColorImagePlan,
) -> Result<Array3<f64>> {
    let (t, m) = grad_series.dim();
    if m != plan.m {
        return Err(Error::data(format!(
            "gradient covers {m} variates, plan has {}",
            plan.m
        )));
    }
    if t > plan.target_cols * plan.p {
        return Err(Error::data(format!(
            "gradient spans {t} steps, plan reaches {}",
            plan.target_cols * plan.p
        )));
    }
    let (w, half) = (plan.geometry.w, plan.geometry.half_cols());
    let mut image = Array3::zeros((w, w, 3));
    for v in 0..m {
        // Adjoint of truncation + unfold: place step k at fold cell (k%P, k/P).
        let mut grad_fold = Array2::zeros((plan.p, plan.target_cols));
        for k in 0..t {
            grad_fold[[k % plan.p, k / plan.p]] = grad_series[[k, v]];
        }
        let grad_block = bilinear_resize_adjoint(&grad_fold, plan.sub_h, half)?;
        let r0 = v * plan.sub_h;
        match &plan.scheme {
            ChannelScheme::Color(assignment) => {
                let mut view =
                    image.slice_mut(s![r0..r0 + plan.sub_h, half.., assignment.channels[v]]);
                view += &grad_block;
            }
            ChannelScheme::Grayscale => {
                let shared = grad_block.mapv(|g| g / 3.0);
                for c in 0..3 {
                    let mut view = image.slice_mut(s![r0..r0 + plan.sub_h, half.., c]);
                    view += &shared;
                }
            }
        }
    }
    Ok(image)
}

/// Writes a canvas as an 8-bit PNG for inspection, mapping `[lo, hi]` to
/// `[0, 255]` with clamping. Debug output only; never read back.
///
/// # Errors
/// Fails on a degenerate value range or an unwritable path.
pub fn write_debug_png(
    path: &std::path::Path,
    image: &Array3<f64>,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::config(format!("bad debug value range [{lo}, {hi}]")));
    }
    let (rows, cols, _) = image.dim();
    let mut png = image::RgbImage::new(cols as u32, rows as u32);
    for r in 0..rows {
        for c in 0..cols {
            let px = [0, 1, 2].map(|ch| {
                (((image[[r, c, ch]] - lo) / (hi - lo) * 255.0).round()).clamp(0.0, 255.0) as u8
            });
            png.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    png.save(path).map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}
