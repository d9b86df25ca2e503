//! Report, summary, cut-table and model files.
//!
//! Every file carries the config digest and the tool version. Nothing
//! time-dependent is written, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use arraycal_core::calibration::CalibrationModelState;
use arraycal_core::geometry::magnitude_db;
use arraycal_core::metrics::ReportSummary;
use arraycal_core::{CalibrationMode, CalibrationReport, DenominatorMode};
use serde::{Deserialize, Serialize};

use crate::pipeline::{CutTable, PatternCuts};
use crate::CliError;

pub const TOOL_VERSION: &str = concat!("arraycal ", env!("CARGO_PKG_VERSION"));

pub const RUNS_FILE: &str = "runs.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MODELS_DIR: &str = "models";
pub const CUTS_DIR: &str = "cuts";

pub fn fraction_label(fraction: f64) -> String {
    format!("{fraction:.4}")
}

pub fn model_path(dir: &Path, seed: u64, fraction: f64) -> PathBuf {
    dir.join(format!("seed{seed}_frac{}.json", fraction_label(fraction)))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct RunRow<'a> {
    seed: u64,
    fraction: f64,
    denominator: DenominatorMode,
    bpa_distorted: f64,
    bpa_calibrated: f64,
    bpa_distorted_alt: f64,
    bpa_calibrated_alt: f64,
    improvement_ratio: f64,
    gp_nrmse_re: f64,
    gp_nrmse_im: f64,
    gp_nrmse: f64,
    config_digest: &'a str,
    tool_version: &'a str,
}

/// One row per run, sorted by (seed, fraction).
pub fn write_runs(path: &Path, digest: &str, denominator: DenominatorMode, reports: &[CalibrationReport]) -> Result<(), CliError> {
    let mut sorted: Vec<&CalibrationReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.fraction.total_cmp(&b.fraction)));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in sorted {
        w.serialize(RunRow {
            seed: r.seed,
            fraction: r.fraction,
            denominator,
            bpa_distorted: r.bpa_distorted,
            bpa_calibrated: r.bpa_calibrated,
            bpa_distorted_alt: r.bpa_distorted_alt,
            bpa_calibrated_alt: r.bpa_calibrated_alt,
            improvement_ratio: r.improvement_ratio,
            gp_nrmse_re: r.gp_nrmse_re,
            gp_nrmse_im: r.gp_nrmse_im,
            gp_nrmse: r.gp_nrmse(),
            config_digest: digest,
            tool_version: TOOL_VERSION,
        })
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write(path, &bytes)
}

/// Reads back the rows written by [`write_runs`].
pub fn read_runs(path: &Path) -> Result<Vec<CalibrationReport>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        seed: u64,
        fraction: f64,
        bpa_distorted: f64,
        bpa_calibrated: f64,
        bpa_distorted_alt: f64,
        bpa_calibrated_alt: f64,
        improvement_ratio: f64,
        gp_nrmse_re: f64,
        gp_nrmse_im: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(CalibrationReport {
                seed: row.seed,
                fraction: row.fraction,
                bpa_distorted: row.bpa_distorted,
                bpa_calibrated: row.bpa_calibrated,
                bpa_distorted_alt: row.bpa_distorted_alt,
                bpa_calibrated_alt: row.bpa_calibrated_alt,
                improvement_ratio: row.improvement_ratio,
                gp_nrmse_re: row.gp_nrmse_re,
                gp_nrmse_im: row.gp_nrmse_im,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    #[serde(flatten)]
    pub summary: ReportSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub tool_version: String,
    pub config_digest: String,
    pub name: String,
    pub mode: CalibrationMode,
    pub denominator: DenominatorMode,
    pub seeds: Vec<u64>,
    pub fractions: Vec<FractionSummary>,
    /// Median GP NRMSE never increases with the sampling fraction.
    pub median_gp_nrmse_monotone: bool,
}

pub fn write_summary(path: &Path, summary: &SummaryFile) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write(path, text.as_bytes())
}

fn write_cut(path: &Path, header: &str, cut: &CutTable) -> Result<(), CliError> {
    let mut out = format!("# {header}\n").into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["angle_deg", "ideal", "distorted", "calibrated", "ideal_db", "distorted_db", "calibrated_db"])
        .map_err(io)?;
    for i in 0..cut.angles.len() {
        let (a, b, c) = (cut.ideal[i], cut.distorted[i], cut.calibrated[i]);
        let row = [cut.angles[i], a, b, c, magnitude_db(a), magnitude_db(b), magnitude_db(c)];
        w.serialize(row).map_err(io)?;
    }
    out.extend(w.into_inner().map_err(|e| CliError::Io(e.to_string()))?);
    write(path, &out)
}

/// `cuts/seed{S}_frac{F}_{azimuth,elevation}.csv`.
pub fn write_cuts(dir: &Path, digest: &str, seed: u64, fraction: f64, cuts: &PatternCuts, ue: (f64, f64)) -> Result<(), CliError> {
    let stem = format!("seed{seed}_frac{}", fraction_label(fraction));
    let common = format!("config_digest={digest} tool_version={TOOL_VERSION} frequency_hz={}", cuts.frequency_hz);
    write_cut(&dir.join(format!("{stem}_azimuth.csv")), &format!("{common} elevation_deg={}", ue.1), &cuts.azimuth)?;
    write_cut(&dir.join(format!("{stem}_elevation.csv")), &format!("{common} azimuth_deg={}", ue.0), &cuts.elevation)
}

/// A fitted model together with the run it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub fraction: f64,
    pub model: CalibrationModelState,
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<(), CliError> {
    let text = serde_json::to_string(file).map_err(|e| CliError::Io(e.to_string()))?;
    write(path, text.as_bytes())
}

pub fn read_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::State(format!("{}: malformed model file: {e}", path.display())))
}
