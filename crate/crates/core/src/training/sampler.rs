//! Randomized training-window sampler: heterogeneous datasets, horizons, and
//! look-back lengths, with normalization-bound rejection filtering.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::backbone::checkpoint::FilterSettings;
use crate::converter::{ChannelScheme, ColorAssignment, ColorImagePlan};
use crate::domain::{split_window, ImageGeometry};
use crate::error::{Error, Result};
use crate::filtering::{compute_stats, filter_sample, make_pixel_bounds, normalize};

/// Window-sampling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Horizon choices as multiples of the dataset period.
    pub horizon_multipliers: Vec<usize>,
    /// Look-back is `lambda * horizon` with `lambda` uniform in
    /// `1..=lambda_max`, clipped to the available history.
    pub lambda_max: usize,
    /// Reject windows whose normalized values overflow the pixel bounds.
    pub filter: bool,
    /// Colorized subfigures when true; grayscale replication when false.
    pub color: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { horizon_multipliers: vec![1, 2, 4], lambda_max: 4, filter: true, color: true }
    }
}

impl DataConfig {
    /// Checks multiplier and lambda ranges.
    pub fn validate(&self) -> Result<()> {
        if self.horizon_multipliers.is_empty() || self.horizon_multipliers.contains(&0) {
            return Err(Error::config("horizon multipliers must be a non-empty list of positive integers"));
        }
        if self.lambda_max == 0 {
            return Err(Error::config("lambda_max must be at least 1"));
        }
        Ok(())
    }
}

/// One accepted training window, normalized and ready to render.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    /// Source dataset name.
    pub dataset: String,
    /// Exclusive end row of the window within the dataset.
    pub window_end: usize,
    /// Normalized context, `(L, M)`.
    pub norm_context: Array2<f64>,
    /// Normalized target, `(T, M)`.
    pub norm_target: Array2<f64>,
    /// Layout plan carrying stats and channel assignment.
    pub plan: ColorImagePlan,
}

/// A batch of accepted windows plus the rejection tally behind it.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    /// Accepted windows, in draw order.
    pub samples: Vec<PreparedSample>,
    /// Candidates discarded while filling the batch.
    pub rejected: usize,
}

impl SampledBatch {
    /// Rejected fraction of all candidates drawn.
    pub fn reject_rate(&self) -> f64 {
        let total = self.rejected + self.samples.len();
        if total == 0 {
            0.0
        } else {
            self.rejected as f64 / total as f64
        }
    }

    /// Compact description of the batch for error messages.
    pub fn fingerprint(&self) -> String {
        let head: Vec<String> = self
            .samples
            .iter()
            .take(4)
            .map(|s| {
                format!(
                    "{}@{}({}x{})",
                    s.dataset,
                    s.window_end,
                    s.norm_context.nrows(),
                    s.norm_target.nrows()
                )
            })
            .collect();
        format!("[{}] +{} more, {} rejected", head.join(", "), self.samples.len().saturating_sub(4), self.rejected)
    }
}

/// Draws windows until `batch_size` pass the filter: dataset uniform, horizon
/// `T` a random period multiple, look-back `lambda * T` clipped to history,
/// end uniform over feasible rows, all strictly inside the training region.
/// Normalization and the pixel bounds come from `settings`; each accepted
/// sample carries a fresh random channel assignment.
///
/// # Errors
/// Aborts with a data-quality error when `10 * batch_size` consecutive
/// candidates are rejected.
pub fn sample_batch(
    archive: &Archive,
    periods: &[usize],
    geometry: ImageGeometry,
    data_cfg: &DataConfig,
    settings: &FilterSettings,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampledBatch> {
    data_cfg.validate()?;
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if archive.datasets.is_empty() {
        return Err(Error::data("cannot sample from an empty archive"));
    }
    if periods.len() != archive.datasets.len() {
        return Err(Error::data(format!(
            "{} resolved periods for {} datasets",
            periods.len(),
            archive.datasets.len()
        )));
    }
    let bounds = make_pixel_bounds(settings.pixel_mean, settings.pixel_std)?;
    let mut samples = Vec::with_capacity(batch_size);
    let mut rejected = 0usize;
    let mut consecutive = 0usize;
    while samples.len() < batch_size {
        if consecutive >= 10 * batch_size {
            let drawn = rejected + samples.len();
            return Err(Error::data(format!(
                "data quality: {consecutive} consecutive windows rejected \
                 ({rejected}/{drawn} overall) — normalized values overflow the pixel bounds"
            )));
        }
        let di = rng.random_range(0..archive.datasets.len());
        let dataset = &archive.datasets[di];
        let period = periods[di];
        let mult =
            data_cfg.horizon_multipliers[rng.random_range(0..data_cfg.horizon_multipliers.len())];
        let horizon = period * mult;
        let avail = dataset.meta.train_end;
        if horizon + period > avail {
            rejected += 1;
            consecutive += 1;
            continue;
        }
        let lambda = rng.random_range(1..=data_cfg.lambda_max);
        let look_back = (lambda * horizon).min(avail - horizon);
        let end = rng.random_range((look_back + horizon)..=avail);

        let (context, target) = split_window(&dataset.values, look_back, horizon, end)?;
        let stats = compute_stats(&context, settings.r, settings.eps)?;
        let norm_context = normalize(&context, &stats)?;
        let norm_target = normalize(&target, &stats)?;
        if data_cfg.filter && !filter_sample(&norm_context, &norm_target, &bounds) {
            rejected += 1;
            consecutive += 1;
            continue;
        }
        let m = dataset.values.ncols();
        let scheme = if data_cfg.color {
            ChannelScheme::Color(ColorAssignment::random(m, rng))
        } else {
            ChannelScheme::Grayscale
        };
        let plan =
            ColorImagePlan::new(geometry, m, period, look_back, horizon, scheme, stats)?;
        samples.push(PreparedSample {
            dataset: dataset.meta.name.clone(),
            window_end: end,
            norm_context,
            norm_target,
            plan,
        });
        consecutive = 0;
    }
    Ok(SampledBatch { samples, rejected })
}
