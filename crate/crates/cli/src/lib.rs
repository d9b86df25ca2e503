//! Experiment runner behind the `arraycal` binary.

pub mod config;
pub mod output;
pub mod pipeline;

use std::path::{Path, PathBuf};

use arraycal_core::calibration::CalibrationModel;
use arraycal_core::{summarize, CalibrationReport, DenominatorMode, Error};
use log::info;
use rayon::prelude::*;

use config::{ConfigError, ExperimentConfig};
use output::{FractionSummary, ModelFile, SummaryFile, TOOL_VERSION};
use pipeline::{Experiment, SeedState};

/// Failures surfaced by the CLI, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    State(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 1 for I/O and state problems, 2 for bad configuration or arguments,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::State(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidArgument { .. } => 2,
                Error::State { .. } => 1,
                Error::NumericalFailure { .. }
                | Error::Convergence { .. }
                | Error::DegenerateDistortion { .. }
                | Error::DegenerateNormalization => 3,
            },
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub denominator: Option<DenominatorMode>,
}

/// Loads, overrides and re-validates a config.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = &overrides.seeds {
        config.seeds = s.clone();
    }
    if let Some(o) = &overrides.output_dir {
        config.output_dir = o.clone();
    }
    if let Some(d) = overrides.denominator {
        config.denominator = d;
    }
    config
        .validate()
        .map_err(|(_, message)| ConfigError { path: Some(path.to_path_buf()), line: None, message })?;
    Ok(config)
}

fn with_pool<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(pool.install(work))
}

/// Artifacts requested from a run.
#[derive(Debug, Clone, Copy)]
struct Outputs {
    models: bool,
    cuts: bool,
    reports: bool,
}

/// Fits (or loads) the model for one run.
enum ModelSource<'a> {
    Fit,
    Load(&'a Path),
}

fn run_seed(
    exp: &Experiment,
    seed: u64,
    out_dir: &Path,
    source: &ModelSource<'_>,
    outputs: Outputs,
) -> Result<Vec<CalibrationReport>, CliError> {
    let config = exp.config();
    let state = exp.seed_state(seed)?;
    let mut reports = Vec::new();
    for &fraction in &config.fractions {
        let started = std::time::Instant::now();
        let model = match source {
            ModelSource::Fit => exp.fit(&state, fraction)?,
            ModelSource::Load(dir) => load_model(exp, dir, seed, fraction)?,
        };
        let fitted = started.elapsed();
        if outputs.models {
            let file = ModelFile {
                tool_version: TOOL_VERSION.into(),
                config_digest: exp.digest().into(),
                seed,
                fraction,
                model: model.to_state()?,
            };
            output::write_model(&output::model_path(&out_dir.join(output::MODELS_DIR), seed, fraction), &file)?;
        }
        if outputs.reports {
            let outcome = exp.evaluate(&state, fraction, &model)?;
            info!(
                "seed {seed} fraction {fraction}: ratio {:.3}, GP NRMSE {:.3e} (fit {:.2?}, total {:.2?})",
                outcome.report.improvement_ratio,
                outcome.report.gp_nrmse(),
                fitted,
                started.elapsed()
            );
            reports.push(outcome.report);
        }
        if outputs.cuts {
            write_cuts(exp, &state, &model, fraction, out_dir)?;
        }
    }
    Ok(reports)
}

fn write_cuts(exp: &Experiment, state: &SeedState, model: &CalibrationModel, fraction: f64, out_dir: &Path) -> Result<(), CliError> {
    let cuts = exp.cuts(state, model)?;
    let ue = exp.config().synthesis.ue_direction;
    output::write_cuts(&out_dir.join(output::CUTS_DIR), exp.digest(), state.seed, fraction, &cuts, ue)
}

fn load_model(exp: &Experiment, dir: &Path, seed: u64, fraction: f64) -> Result<CalibrationModel, CliError> {
    let path = output::model_path(dir, seed, fraction);
    let file = output::read_model(&path)?;
    if file.config_digest != exp.digest() {
        return Err(CliError::State(format!(
            "{}: model was fitted under config digest {}, current config is {}",
            path.display(),
            file.config_digest,
            exp.digest()
        )));
    }
    if file.seed != seed || file.fraction != fraction {
        return Err(CliError::State(format!("{}: model belongs to a different run", path.display())));
    }
    let model = CalibrationModel::from_state(file.model)?;
    if model.shape().to_vec() != exp.axes().shape() {
        return Err(CliError::State(format!("{}: model grid does not match the config", path.display())));
    }
    Ok(model)
}

fn execute(
    config: &ExperimentConfig,
    jobs: Option<usize>,
    source: ModelSource<'_>,
    outputs: Outputs,
) -> Result<Vec<CalibrationReport>, CliError> {
    let exp = Experiment::prepare(config)?;
    let out_dir = config.output_dir.clone();
    info!("{} seeds × {} fractions, grid {:?}, digest {}", config.seeds.len(), config.fractions.len(), config.grid_shape(), exp.digest());
    let per_seed = with_pool(jobs, || {
        config
            .seeds
            .par_iter()
            .map(|&seed| run_seed(&exp, seed, &out_dir, &source, outputs))
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Summary across seeds for each fraction, in ascending fraction order.
pub fn build_summary(config: &ExperimentConfig, reports: &[CalibrationReport]) -> Result<SummaryFile, CliError> {
    let mut fractions = config.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for fraction in fractions {
        let subset: Vec<CalibrationReport> = reports.iter().filter(|r| r.fraction == fraction).cloned().collect();
        out.push(FractionSummary { fraction, summary: summarize(&subset)? });
    }
    let medians: Vec<f64> = out.iter().map(|f| f.summary.gp_nrmse.median).collect();
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    Ok(SummaryFile {
        tool_version: TOOL_VERSION.into(),
        config_digest: config.digest(),
        name: config.name.clone(),
        mode: config.mode,
        denominator: config.denominator,
        seeds,
        median_gp_nrmse_monotone: medians.windows(2).all(|w| w[1] <= w[0]),
        fractions: out,
    })
}

fn write_reports(config: &ExperimentConfig, reports: &[CalibrationReport]) -> Result<SummaryFile, CliError> {
    let dir = &config.output_dir;
    output::write_runs(&dir.join(output::RUNS_FILE), &config.digest(), config.denominator, reports)?;
    let summary = build_summary(config, reports)?;
    output::write_summary(&dir.join(output::SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Full pipeline: per-run CSV, summary JSON, optional cuts and models.
pub fn run(config: &ExperimentConfig, jobs: Option<usize>, save_models: bool) -> Result<SummaryFile, CliError> {
    let outputs = Outputs { models: save_models, cuts: config.pattern.write_cuts, reports: true };
    let reports = execute(config, jobs, ModelSource::Fit, outputs)?;
    write_reports(config, &reports)
}

/// Fits and saves the models only.
pub fn fit(config: &ExperimentConfig, jobs: Option<usize>) -> Result<PathBuf, CliError> {
    execute(config, jobs, ModelSource::Fit, Outputs { models: true, cuts: false, reports: false })?;
    Ok(config.output_dir.join(output::MODELS_DIR))
}

/// Applies saved models and writes the same reports as [`run`].
pub fn apply(config: &ExperimentConfig, jobs: Option<usize>, models: &Path) -> Result<SummaryFile, CliError> {
    let outputs = Outputs { models: false, cuts: config.pattern.write_cuts, reports: true };
    let reports = execute(config, jobs, ModelSource::Load(models), outputs)?;
    write_reports(config, &reports)
}

/// Writes cut tables only, from saved models when a directory is given.
pub fn pattern_dump(config: &ExperimentConfig, jobs: Option<usize>, models: Option<&Path>) -> Result<PathBuf, CliError> {
    let source = models.map_or(ModelSource::Fit, ModelSource::Load);
    execute(config, jobs, source, Outputs { models: false, cuts: true, reports: false })?;
    Ok(config.output_dir.join(output::CUTS_DIR))
}
