//! Core domain types: forecast windows, quantile sets, canvas geometry, periodicity.

use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// One forecasting instance: an observed context block and the target block
/// immediately following it, both shaped `(time, variates)`.
#[derive(Debug, Clone)]
pub struct TimeSeriesSample {
    /// Observed history, shape `(context_len, variates)`.
    pub context: Array2<f64>,
    /// Ground-truth continuation, shape `(horizon, variates)`.
    pub target: Array2<f64>,
    /// Source sampling frequency token (e.g. "H", "D", "15min").
    pub frequency: String,
    /// Dominant seasonality in steps; the context must span at least one period.
    pub period: usize,
    /// Identifier of the originating dataset, used in reports and errors.
    pub dataset_id: String,
}

impl TimeSeriesSample {
    /// Validates and builds a sample.
    ///
    /// # Errors
    /// Rejects empty blocks, mismatched variate counts, a zero period, and a
    /// context shorter than one period.
    pub fn new(
        context: Array2<f64>,
        target: Array2<f64>,
        frequency: impl Into<String>,
        period: usize,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        let dataset_id = dataset_id.into();
        if context.nrows() == 0 || target.nrows() == 0 {
            return Err(Error::data(format!(
                "sample `{dataset_id}`: context and target must both be non-empty"
            )));
        }
        if context.ncols() != target.ncols() || context.ncols() == 0 {
            return Err(Error::data(format!(
                "sample `{dataset_id}`: context has {} variates but target has {}",
                context.ncols(),
                target.ncols()
            )));
        }
        if period == 0 {
            return Err(Error::data(format!("sample `{dataset_id}`: period must be >= 1")));
        }
        if context.nrows() < period {
            return Err(Error::data(format!(
                "sample `{dataset_id}`: context length {} is shorter than one period ({period})",
                context.nrows()
            )));
        }
        Ok(Self { context, target, frequency: frequency.into(), period, dataset_id })
    }

    /// Context length `L`.
    pub fn context_len(&self) -> usize {
        self.context.nrows()
    }

    /// Horizon `T`.
    pub fn horizon(&self) -> usize {
        self.target.nrows()
    }

    /// Variate count `M`.
    pub fn variates(&self) -> usize {
        self.context.ncols()
    }
}

/// Cuts a context/target pair out of a series, with the target occupying rows
/// `[end - horizon, end)` and the context the `context_len` rows before it.
///
/// # Errors
/// Fails when the window does not fit: `end` past the series, or
/// `end < context_len + horizon`.
pub fn split_window(
    series: &Array2<f64>,
    context_len: usize,
    horizon: usize,
    end: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if context_len == 0 || horizon == 0 {
        return Err(Error::data("window needs context_len >= 1 and horizon >= 1"));
    }
    let rows = series.nrows();
    if end > rows {
        return Err(Error::data(format!(
            "window end {end} is past the series length {rows}"
        )));
    }
    if end < context_len + horizon {
        return Err(Error::data(format!(
            "window end {end} cannot fit context {context_len} + horizon {horizon}"
        )));
    }
    let context = series.slice(s![end - horizon - context_len..end - horizon, ..]).to_owned();
    let target = series.slice(s![end - horizon..end, ..]).to_owned();
    Ok((context, target))
}

/// Looks up the canonical period for a known frequency token.
pub fn lookup_period(frequency: &str) -> Option<usize> {
    match frequency {
        "H" => Some(24),
        "30min" => Some(48),
        "15min" => Some(96),
        "D" => Some(7),
        "W" => Some(52),
        "M" => Some(12),
        "Q" => Some(4),
        "Y" => Some(1),
        _ => None,
    }
}

/// Resolves the dominant period of a series: frequency lookup first, then the
/// autocorrelation peak of the variate-mean series.
///
/// # Errors
/// Fails when the frequency is unknown and no series is available to analyze.
pub fn infer_periodicity(frequency: &str, series: Option<&Array2<f64>>) -> Result<usize> {
    if let Some(p) = lookup_period(frequency) {
        return Ok(p);
    }
    let series = series.ok_or_else(|| {
        Error::data(format!(
            "unknown frequency `{frequency}` and no series available to derive a period"
        ))
    })?;
    Ok(autocorrelation_period(series))
}

/// Dominant period of a series via sample autocorrelation of the variate-mean
/// signal: the lag in `[2, len/2]` with the highest lag correlation (smallest
/// lag on near-ties), or 1 when no lag's correlation exceeds 0.1.
pub fn autocorrelation_period(series: &Array2<f64>) -> usize {
    let x: Vec<f64> = series.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect();
    let n = x.len();
    if n < 4 {
        return 1;
    }
    let mut best_lag = 1;
    let mut best_r = f64::NEG_INFINITY;
    for lag in 2..=n / 2 {
        let r = lag_correlation(&x, lag);
        // A longer lag must beat the incumbent by a clear margin; exact
        // repeats at multiples of the period differ only by rounding noise
        // and the smallest lag is the one we want.
        if r > best_r + 1e-9 {
            best_r = r;
            best_lag = lag;
        }
    }
    if best_r > 0.1 {
        best_lag
    } else {
        1
    }
}

/// Pearson correlation between `x[..n-lag]` and `x[lag..]`, or 0 when either
/// segment is constant. Bounded by 1 in magnitude, and exactly 1 when the
/// series repeats with period `lag`.
fn lag_correlation(x: &[f64], lag: usize) -> f64 {
    let m = x.len() - lag;
    let (a, b) = (&x[..m], &x[lag..]);
    let ma = a.iter().sum::<f64>() / m as f64;
    let mb = b.iter().sum::<f64>() / m as f64;
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for i in 0..m {
        let (da, db) = (a[i] - ma, b[i] - mb);
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    num / (va * vb).sqrt()
}

/// The probability levels attached to a bank of forecast heads: `h` evenly
/// spaced quantiles `i / (h + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileSet {
    /// Levels in increasing order, each strictly inside (0, 1).
    pub levels: Vec<f64>,
    /// Index of the level equal to 0.5; present only when `h` is odd.
    pub median_index: Option<usize>,
}

impl QuantileSet {
    /// Builds `h` evenly spaced levels.
    ///
    /// # Errors
    /// Fails when `h` is zero.
    pub fn evenly_spaced(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::config("quantile set needs at least one level"));
        }
        let levels: Vec<f64> = (1..=h).map(|i| i as f64 / (h + 1) as f64).collect();
        let median_index = if h % 2 == 1 { Some((h - 1) / 2) } else { None };
        Ok(Self { levels, median_index })
    }

    /// Number of levels `h`.
    pub fn h(&self) -> usize {
        self.levels.len()
    }
}

/// A bank of per-quantile forecasts for one sample, each shaped
/// `(horizon, variates)`.
#[derive(Debug, Clone)]
pub struct ForecastSet {
    /// One forecast per level, aligned with `quantiles.levels`.
    pub per_head: Vec<Array2<f64>>,
    /// The levels the forecasts estimate.
    pub quantiles: QuantileSet,
}

impl ForecastSet {
    /// Validates head count and uniform shapes.
    pub fn new(per_head: Vec<Array2<f64>>, quantiles: QuantileSet) -> Result<Self> {
        if per_head.len() != quantiles.h() {
            return Err(Error::data(format!(
                "forecast set has {} heads but {} quantile levels",
                per_head.len(),
                quantiles.h()
            )));
        }
        if let Some(first) = per_head.first() {
            let dim = first.dim();
            if per_head.iter().any(|f| f.dim() != dim) {
                return Err(Error::data("forecast heads disagree on shape"));
            }
        }
        Ok(Self { per_head, quantiles })
    }

    /// The median-level forecast, used for point metrics.
    ///
    /// # Errors
    /// Fails when the head count is even so no head sits at level 0.5.
    pub fn point(&self) -> Result<&Array2<f64>> {
        let idx = self.quantiles.median_index.ok_or_else(|| {
            Error::config("point forecast undefined: even head count has no median head")
        })?;
        Ok(&self.per_head[idx])
    }
}

/// Square canvas geometry: side length `w` pixels, patch side `s` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGeometry {
    /// Canvas side length in pixels.
    pub w: usize,
    /// Patch side length in pixels.
    pub s: usize,
}

impl ImageGeometry {
    /// Validates that the canvas divides evenly into an even number of patch
    /// columns, so the left/right halves align with the patch grid.
    pub fn new(w: usize, s: usize) -> Result<Self> {
        if s == 0 || w == 0 {
            return Err(Error::config("canvas and patch sizes must be >= 1"));
        }
        if !w.is_multiple_of(s) {
            return Err(Error::config(format!(
                "canvas side {w} is not a multiple of patch side {s}"
            )));
        }
        if !(w / s).is_multiple_of(2) {
            return Err(Error::config(format!(
                "canvas of {w} px with {s} px patches gives an odd patch grid; \
                 the half split needs an even number of patch columns"
            )));
        }
        Ok(Self { w, s })
    }

    /// Patches per side, `N = w / s`.
    pub fn n(&self) -> usize {
        self.w / self.s
    }

    /// Total patch count `N * N`.
    pub fn n_patches(&self) -> usize {
        self.n() * self.n()
    }

    /// Columns in one half of the canvas, `w / 2`.
    pub fn half_cols(&self) -> usize {
        self.w / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: lag-correlation argmax done with plain loops,
    /// kept deliberately separate from the implementation above.
    fn reference_period(x: &[f64]) -> usize {
        let n = x.len();
        let mut best = (1usize, f64::NEG_INFINITY);
        for lag in 2..=n / 2 {
            let m = n - lag;
            let mut sa = 0.0;
            let mut sb = 0.0;
            for i in 0..m {
                sa += x[i];
                sb += x[i + lag];
            }
            let (ma, mb) = (sa / m as f64, sb / m as f64);
            let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
            for i in 0..m {
                num += (x[i] - ma) * (x[i + lag] - mb);
                va += (x[i] - ma) * (x[i] - ma);
                vb += (x[i + lag] - mb) * (x[i + lag] - mb);
            }
            let r = if va == 0.0 || vb == 0.0 { 0.0 } else { num / (va * vb).sqrt() };
            if r > best.1 + 1e-9 {
                best = (lag, r);
            }
        }
        if best.1 > 0.1 {
            best.0
        } else {
            1
        }
    }

    fn column(values: Vec<f64>) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values).unwrap()
    }

    #[test]
    fn lookup_covers_known_frequencies() {
        assert_eq!(lookup_period("H"), Some(24));
        assert_eq!(lookup_period("30min"), Some(48));
        assert_eq!(lookup_period("15min"), Some(96));
        assert_eq!(lookup_period("D"), Some(7));
        assert_eq!(lookup_period("W"), Some(52));
        assert_eq!(lookup_period("M"), Some(12));
        assert_eq!(lookup_period("Q"), Some(4));
        assert_eq!(lookup_period("Y"), Some(1));
        assert_eq!(lookup_period("fortnight"), None);
    }

    #[test]
    fn infer_prefers_lookup_over_series() {
        // A period-12 sine with frequency "H" must still resolve to 24.
        let x: Vec<f64> = (0..96).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).cos()).collect();
        let s = column(x);
        assert_eq!(infer_periodicity("H", Some(&s)).unwrap(), 24);
        assert_eq!(infer_periodicity("Y", None).unwrap(), 1);
    }

    #[test]
    fn infer_derives_sine_period_from_autocorrelation() {
        let x: Vec<f64> =
            (0..120).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin() + 0.3).collect();
        let expected = reference_period(&x);
        assert_eq!(expected, 12, "reference disagrees with the known sine period");
        let s = column(x);
        assert_eq!(infer_periodicity("unknown", Some(&s)).unwrap(), expected);
    }

    #[test]
    fn infer_without_lookup_or_series_is_an_error() {
        let err = infer_periodicity("unknown", None).unwrap_err();
        assert!(err.to_string().contains("unknown frequency"));
    }

    #[test]
    fn autocorrelation_recovers_periods_2_to_50() {
        for p in 2..=50usize {
            let n = 4 * p;
            let x: Vec<f64> =
                (0..n).map(|t| (2.0 * std::f64::consts::PI * t as f64 / p as f64).cos()).collect();
            assert_eq!(reference_period(&x), p, "reference broke at p={p}");
            assert_eq!(autocorrelation_period(&column(x)), p, "period p={p} not recovered");
        }
    }

    #[test]
    fn autocorrelation_below_threshold_returns_1() {
        // A lone impulse correlates with nothing at any lag.
        let mut impulse = vec![0.0; 64];
        impulse[20] = 1.0;
        assert_eq!(autocorrelation_period(&column(impulse)), 1);
        // Constant and too-short series have no usable lags.
        assert_eq!(autocorrelation_period(&column(vec![3.5; 64])), 1);
        assert_eq!(autocorrelation_period(&column(vec![1.0, 2.0, 3.0])), 1);
    }

    #[test]
    fn autocorrelation_agrees_with_reference_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(16..200);
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            assert_eq!(autocorrelation_period(&column(x.clone())), reference_period(&x));
        }
    }

    #[test]
    fn split_window_cuts_adjacent_blocks() {
        let series = arr2(&[
            [0.0, 10.0],
            [1.0, 11.0],
            [2.0, 12.0],
            [3.0, 13.0],
            [4.0, 14.0],
            [5.0, 15.0],
        ]);
        let (ctx, tgt) = split_window(&series, 3, 2, 6).unwrap();
        assert_eq!(ctx, arr2(&[[1.0, 11.0], [2.0, 12.0], [3.0, 13.0]]));
        assert_eq!(tgt, arr2(&[[4.0, 14.0], [5.0, 15.0]]));

        // An interior end shifts both blocks left.
        let (ctx, tgt) = split_window(&series, 2, 1, 4).unwrap();
        assert_eq!(ctx, arr2(&[[1.0, 11.0], [2.0, 12.0]]));
        assert_eq!(tgt, arr2(&[[3.0, 13.0]]));
    }

    #[test]
    fn split_window_rejects_bad_bounds() {
        let series = Array2::<f64>::zeros((6, 1));
        assert!(split_window(&series, 4, 3, 6).is_err(), "window larger than end");
        assert!(split_window(&series, 2, 1, 7).is_err(), "end past series");
        assert!(split_window(&series, 0, 1, 6).is_err(), "empty context");
    }

    #[test]
    fn split_window_concat_reproduces_the_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let rows = rng.random_range(10..200);
            let cols = rng.random_range(1..5);
            let series = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>());
            let l = rng.random_range(1..rows / 2);
            let t = rng.random_range(1..=rows - l.max(1)).min(rows - l);
            let end = rng.random_range(l + t..=rows);
            let (ctx, tgt) = split_window(&series, l, t, end).unwrap();
            let joined = ndarray::concatenate(ndarray::Axis(0), &[ctx.view(), tgt.view()]).unwrap();
            assert_eq!(joined, series.slice(s![end - l - t..end, ..]).to_owned());
        }
    }

    #[test]
    fn sample_enforces_shape_and_period_invariants() {
        let ctx = Array2::<f64>::zeros((24, 2));
        let tgt = Array2::<f64>::zeros((4, 2));
        assert!(TimeSeriesSample::new(ctx.clone(), tgt.clone(), "H", 24, "ok").is_ok());
        // Context shorter than one period.
        assert!(TimeSeriesSample::new(ctx.clone(), tgt.clone(), "H", 25, "short").is_err());
        // Variate mismatch.
        let tgt3 = Array2::<f64>::zeros((4, 3));
        assert!(TimeSeriesSample::new(ctx, tgt3, "H", 24, "mismatch").is_err());
    }

    #[test]
    fn quantile_levels_are_evenly_spaced_with_exact_median() {
        let q = QuantileSet::evenly_spaced(9).unwrap();
        let expected: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(q.levels, expected);
        assert_eq!(q.median_index, Some(4));
        assert_eq!(q.levels[4], 0.5);

        let q1 = QuantileSet::evenly_spaced(1).unwrap();
        assert_eq!(q1.levels, vec![0.5]);
        assert_eq!(q1.median_index, Some(0));

        let q2 = QuantileSet::evenly_spaced(2).unwrap();
        assert_eq!(q2.median_index, None);
        assert!(QuantileSet::evenly_spaced(0).is_err());
    }

    #[test]
    fn forecast_set_median_head_is_the_point_forecast() {
        let q = QuantileSet::evenly_spaced(3).unwrap();
        let heads = vec![
            Array2::from_elem((2, 1), 1.0),
            Array2::from_elem((2, 1), 2.0),
            Array2::from_elem((2, 1), 3.0),
        ];
        let f = ForecastSet::new(heads, q).unwrap();
        assert_eq!(f.point().unwrap(), &Array2::from_elem((2, 1), 2.0));

        let q2 = QuantileSet::evenly_spaced(2).unwrap();
        let heads2 = vec![Array2::zeros((2, 1)), Array2::zeros((2, 1))];
        assert!(ForecastSet::new(heads2, q2).unwrap().point().is_err());
    }

    #[test]
    fn geometry_requires_even_patch_grid() {
        let g = ImageGeometry::new(32, 8).unwrap();
        assert_eq!(g.n(), 4);
        assert_eq!(g.n_patches(), 16);
        assert_eq!(g.half_cols(), 16);
        assert!(ImageGeometry::new(33, 8).is_err(), "not a multiple");
        assert!(ImageGeometry::new(24, 8).is_err(), "odd patch grid");
    }
}
