//! Pretraining: pinball objective over the quantile heads, warmup-plus-cosine
//! learning-rate schedule, and the end-to-end optimization loop.

pub mod adamw;
pub mod sampler;

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{resolve_period, Archive};
use crate::backbone::checkpoint::FilterSettings;
use crate::backbone::{Model, Parameters};
use crate::converter::{build_model_input, extract_adjoint, extract_normalized, render_context};
use crate::domain::{ImageGeometry, QuantileSet};
use crate::error::{Error, Result};

pub use adamw::AdamW;
pub use sampler::{sample_batch, DataConfig, PreparedSample, SampledBatch};

/// Optimizer and schedule knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Peak learning rate, reached at the end of warmup.
    pub base_lr: f64,
    /// Decoupled weight decay, applied to weight matrices only.
    pub weight_decay: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Linear-ramp length in steps.
    pub warmup_steps: usize,
    /// Total schedule length in steps.
    pub total_steps: usize,
    /// Windows per optimization step.
    pub batch_size: usize,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.98,
            warmup_steps: 10_000,
            total_steps: 100_000,
            batch_size: 512,
            grad_clip: None,
        }
    }
}

impl OptimizerConfig {
    /// Checks rate, moment, and schedule ranges. A zero-step schedule is
    /// allowed and performs no updates.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.warmup_steps == 0 {
            return Err(Error::config("warmup_steps must be at least 1"));
        }
        if self.total_steps > 0 && self.warmup_steps > self.total_steps {
            return Err(Error::config(format!(
                "warmup_steps ({}) exceeds total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Pinball loss broken down by quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLossReport {
    /// Mean of the per-level losses.
    pub total: f64,
    /// One pinball loss per head.
    pub per_level: Vec<f64>,
    /// Elements averaged over per head (`T * M`).
    pub n_elements: usize,
}

fn check_quantile_shapes(
    preds: &[Array2<f64>],
    target: &Array2<f64>,
    quantiles: &QuantileSet,
) -> Result<()> {
    if preds.len() != quantiles.h() {
        return Err(Error::data(format!(
            "{} predictions for {} quantile levels",
            preds.len(),
            quantiles.h()
        )));
    }
    if target.is_empty() {
        return Err(Error::data("quantile loss needs a non-empty target"));
    }
    for (i, p) in preds.iter().enumerate() {
        if p.dim() != target.dim() {
            return Err(Error::data(format!(
                "prediction {i} has shape {:?}, target has {:?}",
                p.dim(),
                target.dim()
            )));
        }
    }
    Ok(())
}

/// Mean pinball loss per head: with error `E = target − pred`, each element
/// contributes `max(q·E, (q−1)·E)`; the total averages the per-head means.
///
/// # Errors
/// Fails on a head-count or shape mismatch, or an empty target.
pub fn quantile_loss(
    preds: &[Array2<f64>],
    target: &Array2<f64>,
    quantiles: &QuantileSet,
) -> Result<QuantileLossReport> {
    check_quantile_shapes(preds, target, quantiles)?;
    let n = target.len();
    let mut per_level = Vec::with_capacity(preds.len());
    for (pred, &q) in preds.iter().zip(quantiles.levels.iter()) {
        let mut sum = 0.0;
        for (&t, &p) in target.iter().zip(pred.iter()) {
            let e = t - p;
            sum += (q * e).max((q - 1.0) * e);
        }
        per_level.push(sum / n as f64);
    }
    let total = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(QuantileLossReport { total, per_level, n_elements: n })
}

/// [`quantile_loss`] plus the gradient of the total with respect to each
/// prediction: `(1/(h·T·M)) · (−q)` where the target exceeds the prediction
/// and `(1/(h·T·M)) · (1−q)` elsewhere (ties take the second branch).
///
/// # Errors
/// Same conditions as [`quantile_loss`].
pub fn quantile_loss_grad(
    preds: &[Array2<f64>],
    target: &Array2<f64>,
    quantiles: &QuantileSet,
) -> Result<(QuantileLossReport, Vec<Array2<f64>>)> {
    let report = quantile_loss(preds, target, quantiles)?;
    let h = preds.len() as f64;
    let n = target.len() as f64;
    let grads = preds
        .iter()
        .zip(quantiles.levels.iter())
        .map(|(pred, &q)| {
            let mut g = Array2::zeros(target.raw_dim());
            for ((gi, &t), &p) in g.iter_mut().zip(target.iter()).zip(pred.iter()) {
                let e = t - p;
                *gi = if e > 0.0 { -q } else { 1.0 - q } / (h * n);
            }
            g
        })
        .collect();
    Ok((report, grads))
}

/// Learning rate at a schedule position: linear ramp to `base_lr` over the
/// warmup, then cosine decay to zero at `total_steps`.
///
/// # Errors
/// Fails when `step` lies past `total_steps`.
pub fn lr_at_step(step: usize, cfg: &OptimizerConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::config(format!(
            "step {step} is past the schedule end {}",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.base_lr * step as f64 / cfg.warmup_steps as f64);
    }
    if cfg.total_steps == cfg.warmup_steps {
        // Degenerate all-warmup schedule: decay has zero length.
        return Ok(0.0);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

/// Scales all gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .map(|t| t.data.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for slot in grads.tensors_mut() {
            for g in slot.data.iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

/// One trace line per optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Zero-based step index.
    pub step: usize,
    /// Batch-mean total loss.
    pub loss: f64,
    /// Batch-mean loss per quantile level.
    pub per_level: Vec<f64>,
    /// Rejected fraction of windows drawn for this batch.
    pub reject_rate: f64,
}

/// Writes the loss trace as CSV with one `l_<level>` column per head.
///
/// # Errors
/// Fails on I/O problems or a row whose level count disagrees with the set.
pub fn write_trace(path: &Path, rows: &[TraceRow], quantiles: &QuantileSet) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let levels: Vec<String> = quantiles.levels.iter().map(|q| format!("l_{q}")).collect();
    writeln!(out, "step,loss,{},reject_rate", levels.join(","))?;
    for row in rows {
        if row.per_level.len() != quantiles.h() {
            return Err(Error::data(format!(
                "trace row {} carries {} levels, expected {}",
                row.step,
                row.per_level.len(),
                quantiles.h()
            )));
        }
        let cells: Vec<String> = row.per_level.iter().map(|l| format!("{l:.16e}")).collect();
        writeln!(
            out,
            "{},{:.16e},{},{:.16e}",
            row.step,
            row.loss,
            cells.join(","),
            row.reject_rate
        )?;
    }
    Ok(())
}

/// A trained model plus its per-step loss trace.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Final parameters.
    pub model: Model,
    /// One row per optimization step.
    pub trace: Vec<TraceRow>,
}

/// Runs the pretraining loop: sample a batch of windows, render each context
/// into a masked canvas, reconstruct with the model, pull every head's
/// forecast back into normalized series space, take the pinball loss against
/// the normalized target, and push gradients back through extraction into the
/// optimizer. Loss never touches padded rows or the visible half — extraction
/// reads exactly `T` steps per variate.
///
/// # Errors
/// Fails on invalid configs, unresolvable periods, a saturating rejection
/// rate, or a non-finite loss (reported with its step and batch fingerprint).
pub fn train(
    archive: &Archive,
    mut model: Model,
    opt_cfg: &OptimizerConfig,
    data_cfg: &DataConfig,
    settings: &FilterSettings,
    seed: u64,
    period_cache: Option<&Path>,
) -> Result<TrainOutcome> {
    opt_cfg.validate()?;
    data_cfg.validate()?;
    let geometry = ImageGeometry::new(model.cfg.w, model.cfg.s)?;
    let quantiles = QuantileSet::evenly_spaced(model.cfg.h)?;
    let periods = archive
        .datasets
        .iter()
        .map(|d| resolve_period(d, period_cache))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimizer = AdamW::new();
    let mut trace = Vec::with_capacity(opt_cfg.total_steps);
    for step in 0..opt_cfg.total_steps {
        let batch = sample_batch(
            archive,
            &periods,
            geometry,
            data_cfg,
            settings,
            opt_cfg.batch_size,
            &mut rng,
        )?;
        let mut grads = model.params.zeros_like();
        let mut loss_sum = 0.0;
        let mut level_sums = vec![0.0; quantiles.h()];
        let inv_batch = 1.0 / batch.samples.len() as f64;
        for sample in &batch.samples {
            let left = render_context(&sample.norm_context, &sample.plan)?;
            let (input, mask) = build_model_input(&left, geometry)?;
            let (outputs, cache) = model.forward_with_cache(&input, &mask)?;
            let t = sample.norm_target.nrows();
            let preds = outputs
                .iter()
                .map(|img| extract_normalized(img, &sample.plan, t))
                .collect::<Result<Vec<_>>>()?;
            let (report, grad_series) =
                quantile_loss_grad(&preds, &sample.norm_target, &quantiles)?;
            loss_sum += report.total;
            for (acc, l) in level_sums.iter_mut().zip(report.per_level.iter()) {
                *acc += l;
            }
            let grad_images = grad_series
                .into_iter()
                .map(|g| extract_adjoint(&(g * inv_batch), &sample.plan))
                .collect::<Result<Vec<_>>>()?;
            model.backward(&cache, &grad_images, &mut grads)?;
        }
        let loss = loss_sum * inv_batch;
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss {loss} at step {step}; batch {}",
                batch.fingerprint()
            )));
        }
        if let Some(max_norm) = opt_cfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        let lr = lr_at_step(step, opt_cfg)?;
        optimizer.step(&mut model.params, &grads, lr, opt_cfg)?;
        let per_level: Vec<f64> = level_sums.iter().map(|s| s * inv_batch).collect();
        if step % 100 == 0 {
            log::info!("step {step}: loss {loss:.6}, lr {lr:.3e}");
        }
        trace.push(TraceRow { step, loss, per_level, reject_rate: batch.reject_rate() });
    }
    Ok(TrainOutcome { model, trace })
}
