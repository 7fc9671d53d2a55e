//! Forecast quality metrics — point errors, scaled errors, quantile scores,
//! calibration — plus the rolling-window benchmark harness.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{resolve_period, Archive};
use crate::domain::{split_window, ForecastSet, TimeSeriesSample};
use crate::error::{Error, Result};

/// Scores for one dataset (or the cross-dataset mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean squared error of the point (median-head) forecast.
    pub mse: f64,
    /// Mean absolute error of the point forecast.
    pub mae: f64,
    /// MAE scaled by the in-sample seasonal-naive MAE, averaged over windows.
    pub mase: f64,
    /// Mean weighted quantile loss over the head levels.
    pub crps: f64,
    /// Empirical fraction of targets at or below each head; absent for a
    /// single-head model, which carries no distribution to calibrate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Vec<f64>>,
}

fn check_same_shape(forecast: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if forecast.dim() != target.dim() {
        return Err(Error::data(format!(
            "forecast has shape {:?}, target has {:?}",
            forecast.dim(),
            target.dim()
        )));
    }
    if target.is_empty() {
        return Err(Error::data("metrics need a non-empty target"));
    }
    Ok(())
}

/// Elementwise mean squared and mean absolute error.
///
/// # Errors
/// Fails on a shape mismatch or empty target.
pub fn mse_mae(forecast: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, f64)> {
    check_same_shape(forecast, target)?;
    let n = target.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for (&f, &t) in forecast.iter().zip(target.iter()) {
        let e = f - t;
        se += e * e;
        ae += e.abs();
    }
    Ok((se / n, ae / n))
}

/// Repeats the last observed seasonal cycle:
/// `forecast[t][v] = context[L − m + (t mod m)][v]`.
///
/// # Errors
/// Fails when the context is shorter than one season or the horizon is zero.
pub fn seasonal_naive(context: &Array2<f64>, horizon: usize, m: usize) -> Result<Array2<f64>> {
    let l = context.nrows();
    if m == 0 || l < m {
        return Err(Error::data(format!(
            "seasonal naive needs a context of at least one season, got {l} rows for m = {m}"
        )));
    }
    if horizon == 0 {
        return Err(Error::data("seasonal naive needs a horizon of at least 1"));
    }
    Ok(Array2::from_shape_fn((horizon, context.ncols()), |(t, v)| {
        context[[l - m + (t % m), v]]
    }))
}

/// Mean absolute scaled error: forecast MAE over the mean in-sample seasonal
/// difference `|insample[t] − insample[t−m]|` for `t ∈ [m, L)`.
///
/// # Errors
/// Fails on shape mismatches, an in-sample block not longer than one season,
/// or a zero denominator (constant seasonal in-sample).
pub fn mase(
    forecast: &Array2<f64>,
    target: &Array2<f64>,
    insample: &Array2<f64>,
    m: usize,
) -> Result<f64> {
    check_same_shape(forecast, target)?;
    let l = insample.nrows();
    if m == 0 || l <= m {
        return Err(Error::data(format!(
            "MASE needs an in-sample block longer than one season, got {l} rows for m = {m}"
        )));
    }
    if insample.ncols() != target.ncols() {
        return Err(Error::data(format!(
            "in-sample block has {} variates, target has {}",
            insample.ncols(),
            target.ncols()
        )));
    }
    let mut denom = 0.0;
    for t in m..l {
        for v in 0..insample.ncols() {
            denom += (insample[[t, v]] - insample[[t - m, v]]).abs();
        }
    }
    denom /= ((l - m) * insample.ncols()) as f64;
    if denom == 0.0 {
        return Err(Error::numeric("MASE undefined: constant seasonal in-sample"));
    }
    let (_, mae) = mse_mae(forecast, target)?;
    Ok(mae / denom)
}

/// Mean weighted quantile loss: `(1/h)·Σ_i Σ_e 2·max(q_i·E, (q_i−1)·E)`
/// over all elements, divided by `Σ|target|`. A zero-magnitude target skips
/// the normalization. With one head at level 0.5 this reduces to
/// `mae / mean|target|`.
///
/// # Errors
/// Fails on a shape mismatch or empty target.
pub fn crps_from_quantiles(forecasts: &ForecastSet, target: &Array2<f64>) -> Result<f64> {
    let mut pinball_sum = 0.0;
    for (pred, &q) in forecasts.per_head.iter().zip(forecasts.quantiles.levels.iter()) {
        check_same_shape(pred, target)?;
        for (&p, &t) in pred.iter().zip(target.iter()) {
            let e = t - p;
            pinball_sum += 2.0 * (q * e).max((q - 1.0) * e);
        }
    }
    let numerator = pinball_sum / forecasts.quantiles.h() as f64;
    let target_mass: f64 = target.iter().map(|t| t.abs()).sum();
    Ok(if target_mass > 0.0 { numerator / target_mass } else { numerator })
}

/// Empirical coverage per head: the fraction of target elements at or below
/// the head's forecast (ties count as covered).
///
/// # Errors
/// Fails on a shape mismatch or empty target.
pub fn coverage(forecasts: &ForecastSet, target: &Array2<f64>) -> Result<Vec<f64>> {
    let n = target.len() as f64;
    forecasts
        .per_head
        .iter()
        .map(|pred| {
            check_same_shape(pred, target)?;
            let covered =
                pred.iter().zip(target.iter()).filter(|&(p, t)| t <= p).count();
            Ok(covered as f64 / n)
        })
        .collect()
}

/// Geometric mean of per-dataset MAE ratios against a naive baseline:
/// `exp(mean_d ln(mae_d / naive_d))`.
///
/// # Errors
/// Fails on mismatched key sets, an empty map, or a non-positive baseline.
pub fn normalized_mae_aggregate(
    per_dataset_mae: &BTreeMap<String, f64>,
    per_dataset_naive_mae: &BTreeMap<String, f64>,
) -> Result<f64> {
    if per_dataset_mae.is_empty() {
        return Err(Error::data("normalized MAE needs at least one dataset"));
    }
    let mut log_sum = 0.0;
    for (name, &mae) in per_dataset_mae {
        let naive = per_dataset_naive_mae.get(name).ok_or_else(|| {
            Error::data(format!("no naive baseline MAE for dataset {name}"))
        })?;
        if !(*naive > 0.0) {
            return Err(Error::data(format!(
                "naive baseline MAE for dataset {name} must be positive, got {naive}"
            )));
        }
        log_sum += (mae / naive).ln();
    }
    if per_dataset_naive_mae.len() != per_dataset_mae.len() {
        return Err(Error::data(format!(
            "{} baseline entries for {} datasets",
            per_dataset_naive_mae.len(),
            per_dataset_mae.len()
        )));
    }
    Ok((log_sum / per_dataset_mae.len() as f64).exp())
}

/// Anything that can answer a forecasting instance with quantile tracks.
pub trait EvalModel: Sync {
    /// Produces raw-unit quantile forecasts for the sample's horizon.
    fn forecast(&self, sample: &TimeSeriesSample) -> Result<ForecastSet>;
}

/// One rolling-window evaluation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolEntry {
    /// Dataset name within the archive.
    pub dataset: String,
    /// Context length fed to the model.
    pub context_len: usize,
    /// Forecast horizon scored per window.
    pub horizon: usize,
    /// Steps between consecutive forecast origins.
    pub stride: usize,
}

/// Per-dataset scores plus the naive baseline over the same windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEval {
    /// Model scores pooled over the dataset's windows.
    pub metrics: MetricReport,
    /// Seasonal-naive point scores over the identical windows.
    pub naive_mse: f64,
    /// Seasonal-naive MAE, the normalized-MAE denominator.
    pub naive_mae: f64,
    /// Seasonality used for the naive baseline and MASE scaling.
    pub period: usize,
    /// Number of rolling windows scored.
    pub windows: usize,
}

/// Cross-dataset means plus the geometric-mean MAE ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEval {
    /// Arithmetic means of the per-dataset scores.
    #[serde(flatten)]
    pub means: MetricReport,
    /// `exp(mean ln(mae/naive_mae))` across datasets.
    pub normalized_mae: f64,
}

/// Full benchmark output: one block per dataset, in name order, plus the
/// aggregate. An empty protocol produces an empty report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-dataset results keyed (and therefore serialized) by name.
    pub datasets: BTreeMap<String, DatasetEval>,
    /// Cross-dataset aggregate; absent when the protocol is empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateEval>,
}

fn evaluate_entry(
    model: &dyn EvalModel,
    archive: &Archive,
    entry: &ProtocolEntry,
    period_cache: Option<&Path>,
) -> Result<DatasetEval> {
    if entry.stride == 0 || entry.context_len == 0 || entry.horizon == 0 {
        return Err(Error::config(format!(
            "protocol entry for {} needs positive context_len, horizon, and stride",
            entry.dataset
        )));
    }
    let dataset = archive.get(&entry.dataset)?;
    let m = resolve_period(dataset, period_cache)?;
    let rows = dataset.values.nrows();
    let start = dataset.meta.train_end;
    if entry.context_len > start {
        return Err(Error::data(format!(
            "dataset {}: context of {} reaches before the first row (train_end {})",
            entry.dataset, entry.context_len, start
        )));
    }
    if start + entry.horizon > rows {
        return Err(Error::data(format!(
            "dataset {}: no evaluation window of {} steps fits after train_end {} in {} rows",
            entry.dataset, entry.horizon, start, rows
        )));
    }
    let mut se_sum = 0.0;
    let mut ae_sum = 0.0;
    let mut naive_se_sum = 0.0;
    let mut naive_ae_sum = 0.0;
    let mut mase_sum = 0.0;
    let mut pinball_sum = 0.0;
    let mut target_mass = 0.0;
    let mut covered: Option<Vec<f64>> = None;
    let mut elements = 0usize;
    let mut windows = 0usize;
    let mut origin = start;
    while origin + entry.horizon <= rows {
        let end = origin + entry.horizon;
        let (context, target) =
            split_window(&dataset.values, entry.context_len, entry.horizon, end)?;
        let sample = TimeSeriesSample::new(
            context.clone(),
            target.clone(),
            dataset.meta.frequency.clone(),
            m,
            dataset.meta.name.clone(),
        )?;
        let forecasts = model.forecast(&sample)?;
        let point = forecasts.point()?;
        let (se, ae) = mse_mae(point, &target)?;
        let n = target.len() as f64;
        se_sum += se * n;
        ae_sum += ae * n;
        mase_sum += mase(point, &target, &context, m)?;
        let naive = seasonal_naive(&context, entry.horizon, m)?;
        let (nse, nae) = mse_mae(&naive, &target)?;
        naive_se_sum += nse * n;
        naive_ae_sum += nae * n;
        for (pred, &q) in forecasts.per_head.iter().zip(forecasts.quantiles.levels.iter()) {
            check_same_shape(pred, &target)?;
            for (&p, &t) in pred.iter().zip(target.iter()) {
                let e = t - p;
                pinball_sum += 2.0 * (q * e).max((q - 1.0) * e);
            }
        }
        pinball_sum_scale_check(&forecasts)?;
        target_mass += target.iter().map(|t| t.abs()).sum::<f64>();
        let window_cov = coverage(&forecasts, &target)?;
        match covered.as_mut() {
            None => covered = Some(window_cov.iter().map(|c| c * n).collect()),
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(window_cov.iter()) {
                    *a += c * n;
                }
            }
        }
        elements += target.len();
        windows += 1;
        origin += entry.stride;
    }
    let n = elements as f64;
    let h = covered.as_ref().map_or(0, Vec::len);
    let crps_num = pinball_sum / h.max(1) as f64;
    let metrics = MetricReport {
        mse: se_sum / n,
        mae: ae_sum / n,
        mase: mase_sum / windows as f64,
        crps: if target_mass > 0.0 { crps_num / target_mass } else { crps_num },
        coverage: covered.filter(|c| c.len() > 1).map(|c| c.iter().map(|x| x / n).collect()),
    };
    Ok(DatasetEval {
        metrics,
        naive_mse: naive_se_sum / n,
        naive_mae: naive_ae_sum / n,
        period: m,
        windows,
    })
}

/// Guards the pooled CRPS accumulation against head/level drift mid-dataset.
fn pinball_sum_scale_check(forecasts: &ForecastSet) -> Result<()> {
    if forecasts.per_head.len() != forecasts.quantiles.h() {
        return Err(Error::data(format!(
            "{} heads for {} quantile levels",
            forecasts.per_head.len(),
            forecasts.quantiles.h()
        )));
    }
    Ok(())
}

/// Runs the rolling-window protocol: for each entry, forecast origins advance
/// from `train_end` in `stride` steps while a full horizon still fits, the
/// model and a seasonal-naive baseline score the same windows, and per-dataset
/// results pool across windows. Datasets evaluate in parallel; the report is
/// keyed by name, so its order is canonical regardless of scheduling.
///
/// # Errors
/// Fails on unknown datasets, duplicate protocol entries, infeasible window
/// shapes, or a model error; an empty protocol succeeds with an empty report.
pub fn evaluate(
    model: &dyn EvalModel,
    archive: &Archive,
    protocol: &[ProtocolEntry],
    period_cache: Option<&Path>,
) -> Result<EvalReport> {
    let mut seen = std::collections::BTreeSet::new();
    for entry in protocol {
        if !seen.insert(entry.dataset.as_str()) {
            return Err(Error::config(format!(
                "protocol lists dataset {} more than once",
                entry.dataset
            )));
        }
    }
    let results: Vec<(String, DatasetEval)> = protocol
        .par_iter()
        .map(|entry| {
            evaluate_entry(model, archive, entry, period_cache)
                .map(|eval| (entry.dataset.clone(), eval))
        })
        .collect::<Result<_>>()?;
    let datasets: BTreeMap<String, DatasetEval> = results.into_iter().collect();
    let aggregate = if datasets.is_empty() {
        None
    } else {
        let k = datasets.len() as f64;
        let mut mae_map = BTreeMap::new();
        let mut naive_map = BTreeMap::new();
        for (name, eval) in &datasets {
            mae_map.insert(name.clone(), eval.metrics.mae);
            naive_map.insert(name.clone(), eval.naive_mae);
        }
        let mean = |f: fn(&DatasetEval) -> f64| datasets.values().map(f).sum::<f64>() / k;
        let coverage = datasets
            .values()
            .next()
            .and_then(|d| d.metrics.coverage.as_ref())
            .map(|first| {
                let mut acc = vec![0.0; first.len()];
                for eval in datasets.values() {
                    if let Some(c) = &eval.metrics.coverage {
                        for (a, x) in acc.iter_mut().zip(c.iter()) {
                            *a += x;
                        }
                    }
                }
                acc.into_iter().map(|x| x / k).collect()
            });
        Some(AggregateEval {
            means: MetricReport {
                mse: mean(|d| d.metrics.mse),
                mae: mean(|d| d.metrics.mae),
                mase: mean(|d| d.metrics.mase),
                crps: mean(|d| d.metrics.crps),
                coverage,
            },
            normalized_mae: normalized_mae_aggregate(&mae_map, &naive_map)?,
        })
    };
    Ok(EvalReport { datasets, aggregate })
}

impl EvalReport {
    /// Serializes the report as pretty JSON with sorted keys.
    ///
    /// # Errors
    /// Fails when serialization fails.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("cannot serialize evaluation report: {e}")))
    }
}
