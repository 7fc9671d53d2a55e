//! Inference path: context in, quantile forecasts out. Deterministic —
//! subfigure channels cycle instead of being drawn at random.

use ndarray::Array2;

use crate::backbone::{checkpoint::FilterSettings, Model};
use crate::converter::{
    build_model_input, extract_forecasts, render_context, ChannelScheme, ColorAssignment,
    ColorImagePlan,
};
use crate::domain::{ForecastSet, ImageGeometry, TimeSeriesSample};
use crate::error::Result;
use crate::evaluation::EvalModel;
use crate::filtering::{compute_stats, filter_sample, make_pixel_bounds, normalize};

/// A model plus the preprocessing constants it was trained with.
#[derive(Debug)]
pub struct Forecaster {
    /// Reconstruction backbone.
    pub model: Model,
    /// Normalization and pixel-bound constants from the checkpoint.
    pub settings: FilterSettings,
    /// Colorized subfigures when true, grayscale replication when false.
    pub color: bool,
}

impl Forecaster {
    /// Bundles a model with its preprocessing settings.
    pub fn new(model: Model, settings: FilterSettings, color: bool) -> Self {
        Self { model, settings, color }
    }

    /// Forecasts `horizon` steps past the end of `context`, one track per
    /// quantile head, in the context's raw units. Channels are assigned
    /// cyclically, so identical inputs give identical outputs.
    ///
    /// # Errors
    /// Fails when the context cannot be laid out on the canvas (more variates
    /// than rows, context shorter than one period) or on a backbone error.
    pub fn forecast(
        &self,
        context: &Array2<f64>,
        period: usize,
        horizon: usize,
    ) -> Result<ForecastSet> {
        let cfg = &self.model.cfg;
        let geometry = ImageGeometry::new(cfg.w, cfg.s)?;
        let m = context.ncols();
        let stats = compute_stats(context, self.settings.r, self.settings.eps)?;
        let norm_context = normalize(context, &stats)?;
        let bounds = make_pixel_bounds(self.settings.pixel_mean, self.settings.pixel_std)?;
        if !filter_sample(&norm_context, &Array2::zeros((0, m)), &bounds) {
            log::warn!(
                "context normalizes outside the pixel bounds; training never saw such values"
            );
        }
        let scheme = if self.color {
            ChannelScheme::Color(ColorAssignment::cyclic(m))
        } else {
            ChannelScheme::Grayscale
        };
        let plan =
            ColorImagePlan::new(geometry, m, period, context.nrows(), horizon, scheme, stats)?;
        let left = render_context(&norm_context, &plan)?;
        let (input, mask) = build_model_input(&left, geometry)?;
        let outputs = self.model.forward(&input, &mask)?;
        extract_forecasts(&outputs, &plan, horizon)
    }
}

impl EvalModel for Forecaster {
    /// Forecasts from the sample's context alone; the target contributes only
    /// its length (the horizon to produce).
    fn forecast(&self, sample: &TimeSeriesSample) -> Result<ForecastSet> {
        Forecaster::forecast(self, &sample.context, sample.period, sample.target.nrows())
    }
}
