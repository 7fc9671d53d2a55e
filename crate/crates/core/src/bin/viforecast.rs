//! Command-line pipeline: synthesize archives, pretrain, forecast, evaluate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use ndarray::s;
use serde::Serialize;

use viforecast::archive::{read_dataset, resolve_period, write_dataset, Archive};
use viforecast::backbone::{checkpoint, Model};
use viforecast::config::AppConfig;
use viforecast::domain::{ForecastSet, QuantileSet};
use viforecast::error::{Error, Result};
use viforecast::evaluation::evaluate;
use viforecast::pipeline::Forecaster;
use viforecast::plot::plot_forecast;
use viforecast::synth::generate;
use viforecast::training::{train, write_trace};

/// Offset separating the window-sampling random stream from model init.
const SAMPLER_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Parser)]
#[command(
    name = "viforecast",
    version,
    about = "Image-based probabilistic time-series forecasting"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed; identical seeds give bit-identical artifacts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the config's synthetic datasets as an archive directory.
    Synth {
        /// Archive directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on an archive and write a checkpoint.
    Pretrain {
        /// Archive directory to train on.
        #[arg(long)]
        archive: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-step loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Ablation: accept windows the severity filter would reject.
        #[arg(long)]
        no_filter: bool,
        /// Ablation: render grayscale canvases instead of per-variate colors.
        #[arg(long)]
        no_color: bool,
        /// Ablation: override the head count (must stay odd).
        #[arg(long)]
        heads: Option<usize>,
        /// Initialization: `random` or `pretrained:<checkpoint>`.
        #[arg(long, default_value = "random")]
        init: String,
    },
    /// Forecast one window of one dataset with a checkpoint.
    Forecast {
        /// Checkpoint file to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Archive directory holding the dataset.
        #[arg(long)]
        archive: PathBuf,
        /// Dataset name within the archive.
        #[arg(long)]
        dataset: String,
        /// Context rows fed to the model.
        #[arg(long)]
        context_len: usize,
        /// Steps to forecast.
        #[arg(long)]
        horizon: usize,
        /// Exclusive end row of the forecast window; the context occupies the
        /// `context_len` rows before `end - horizon`. Defaults to
        /// `train_end + horizon`.
        #[arg(long)]
        end: Option<usize>,
        /// Write the forecast JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also draw context, median forecast, and quantile band to a PNG.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Query the model with grayscale canvases (match grayscale training).
        #[arg(long)]
        no_color: bool,
    },
    /// Score a checkpoint over the config's rolling-window protocol.
    Evaluate {
        /// Checkpoint file to load.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Archive directory holding the datasets.
        #[arg(long)]
        archive: PathBuf,
        /// Write the metric report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Query the model with grayscale canvases (match grayscale training).
        #[arg(long)]
        no_color: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init()
        .ok();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let cache = std::env::var_os("VIFORECAST_CACHE").map(PathBuf::from);
    let cache = cache.as_deref();
    match cli.command {
        Command::Synth { out } => cmd_synth(&config, cli.seed, &out),
        Command::Pretrain { archive, out, trace, no_filter, no_color, heads, init } => {
            cmd_pretrain(
                &config, cli.seed, cache, &archive, &out, trace.as_deref(), no_filter, no_color,
                heads, &init,
            )
        }
        Command::Forecast {
            checkpoint,
            archive,
            dataset,
            context_len,
            horizon,
            end,
            out,
            plot,
            no_color,
        } => cmd_forecast(
            cache,
            &checkpoint,
            &archive,
            &dataset,
            context_len,
            horizon,
            end,
            out.as_deref(),
            plot.as_deref(),
            no_color,
        ),
        Command::Evaluate { checkpoint, archive, out, no_color } => {
            cmd_evaluate(&config, cache, &checkpoint, &archive, out.as_deref(), no_color)
        }
    }
}

fn cmd_synth(config: &AppConfig, seed: u64, out: &Path) -> Result<()> {
    if config.synth.is_empty() {
        return Err(Error::config(
            "config has no [[synth]] entries; nothing to generate",
        ));
    }
    for spec in &config.synth {
        let mut spec = spec.clone();
        spec.seed = spec.seed.wrapping_add(seed);
        let dataset = generate(&spec)?;
        write_dataset(out, &dataset)?;
        log::info!("wrote dataset {} ({} rows)", dataset.meta.name, dataset.values.nrows());
    }
    // Round-trip sanity: the archive must load back.
    Archive::load(out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pretrain(
    config: &AppConfig,
    seed: u64,
    cache: Option<&Path>,
    archive_dir: &Path,
    out: &Path,
    trace: Option<&Path>,
    no_filter: bool,
    no_color: bool,
    heads: Option<usize>,
    init: &str,
) -> Result<()> {
    let mut model_cfg = config.model.build()?;
    if let Some(h) = heads {
        model_cfg.h = h;
    }
    if config.model.seed.is_none() {
        model_cfg.seed = seed;
    }
    model_cfg.validate()?;
    let mut data_cfg = config.data.clone();
    if no_filter {
        data_cfg.filter = false;
    }
    if no_color {
        data_cfg.color = false;
    }
    let model = match init {
        "random" => Model::init_random(model_cfg)?,
        other => match other.strip_prefix("pretrained:") {
            Some(path) => checkpoint::load(Path::new(path), &model_cfg)?.0,
            None => {
                return Err(Error::config(format!(
                    "--init must be `random` or `pretrained:<path>`, got `{other}`"
                )))
            }
        },
    };
    let archive = Archive::load(archive_dir)?;
    let outcome = train(
        &archive,
        model,
        &config.optim,
        &data_cfg,
        &config.filter,
        seed.wrapping_add(SAMPLER_SEED_OFFSET),
        cache,
    )?;
    checkpoint::save(out, &outcome.model, &config.filter)?;
    if let Some(trace_path) = trace {
        let quantiles = QuantileSet::evenly_spaced(outcome.model.cfg.h)?;
        write_trace(trace_path, &outcome.trace, &quantiles)?;
    }
    if let Some(last) = outcome.trace.last() {
        log::info!("finished {} steps, final loss {:.6}", outcome.trace.len(), last.loss);
    }
    Ok(())
}

/// Forecast output: quantile levels, one track per head, and the median.
#[derive(Serialize)]
struct ForecastJson {
    levels: Vec<f64>,
    per_head: Vec<Vec<Vec<f64>>>,
    point: Vec<Vec<f64>>,
}

fn rows_of(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|row| row.to_vec()).collect()
}

impl ForecastJson {
    fn from_set(set: &ForecastSet) -> Result<Self> {
        Ok(Self {
            levels: set.quantiles.levels.clone(),
            per_head: set.per_head.iter().map(rows_of).collect(),
            point: rows_of(set.point()?),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_forecast(
    cache: Option<&Path>,
    checkpoint_path: &Path,
    archive_dir: &Path,
    dataset_name: &str,
    context_len: usize,
    horizon: usize,
    end: Option<usize>,
    out: Option<&Path>,
    plot: Option<&Path>,
    no_color: bool,
) -> Result<()> {
    let (model_cfg, _) = checkpoint::read_header(checkpoint_path)?;
    let (model, settings) = checkpoint::load(checkpoint_path, &model_cfg)?;
    let dataset = read_dataset(&archive_dir.join(dataset_name))?;
    let period = resolve_period(&dataset, cache)?;
    if horizon == 0 || context_len == 0 {
        return Err(Error::config("context_len and horizon must be at least 1"));
    }
    let rows = dataset.values.nrows();
    let end = end.unwrap_or(dataset.meta.train_end + horizon);
    let origin = end.checked_sub(horizon).ok_or_else(|| {
        Error::config(format!("end {end} is shorter than the horizon {horizon}"))
    })?;
    if origin < context_len {
        return Err(Error::data(format!(
            "dataset {dataset_name}: a context of {context_len} rows does not fit before row {origin}"
        )));
    }
    if origin > rows {
        return Err(Error::data(format!(
            "dataset {dataset_name}: forecast origin {origin} is past the last row {rows}"
        )));
    }
    let context = dataset.values.slice(s![origin - context_len..origin, ..]).to_owned();
    let forecaster = Forecaster::new(model, settings, !no_color);
    let set = forecaster.forecast(&context, period, horizon)?;
    let json = serde_json::to_string_pretty(&ForecastJson::from_set(&set)?)
        .map_err(|e| Error::data(format!("cannot serialize forecast: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    if let Some(plot_path) = plot {
        plot_forecast(plot_path, &context, &set)?;
    }
    Ok(())
}

fn cmd_evaluate(
    config: &AppConfig,
    cache: Option<&Path>,
    checkpoint_path: &Path,
    archive_dir: &Path,
    out: Option<&Path>,
    no_color: bool,
) -> Result<()> {
    let (model_cfg, _) = checkpoint::read_header(checkpoint_path)?;
    let (model, settings) = checkpoint::load(checkpoint_path, &model_cfg)?;
    let archive = Archive::load(archive_dir)?;
    let forecaster = Forecaster::new(model, settings, !no_color);
    let report = evaluate(&forecaster, &archive, &config.protocol, cache)?;
    let json = report.to_json()?;
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}
