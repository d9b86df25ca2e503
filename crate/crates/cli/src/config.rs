//! Experiment configuration (TOML, `schema_version = 1`).
//!
//! The schema is documented in `docs/config-schema.md`.

use std::fmt;
use std::path::{Path, PathBuf};

use arraycal_core::calibration::FitSettings;
use arraycal_core::gp::{HyperparameterBounds, KernelSpec, OptimizerOptions, SmComponent};
use arraycal_core::kron::{CgOptions, Preconditioner};
use arraycal_core::{
    make_abf_codebook, make_uniform_rect_array, AbfCodebook, ArrayGeometry, CalibrationMode, DenominatorMode,
    DistortionParams, SynthesisSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem, anchored to a line of the file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        match self.line {
            Some(l) => write!(f, "{file}:{l}: {}", self.message),
            None => write!(f, "{file}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub mode: CalibrationMode,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub denominator: DenominatorMode,
    pub array: ArrayConfig,
    pub band: BandConfig,
    pub codebook: CodebookConfig,
    pub distortion: DistortionConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub synthesis: SynthesisSpec,
    #[serde(default)]
    pub pattern: PatternConfig,
    #[serde(default)]
    pub abf: AbfConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("arraycal-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub nx: usize,
    pub ny: usize,
    /// Element spacing in wavelengths at the reference frequency.
    #[serde(default = "half")]
    pub spacing: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub step_hz: f64,
    /// Frequency at which the element spacing is given; band centre if absent.
    #[serde(default)]
    pub reference_hz: Option<f64>,
}

impl BandConfig {
    pub fn frequencies(&self) -> Vec<f64> {
        let n = ((self.f_max_hz - self.f_min_hz) / self.step_hz + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.f_min_hz + i as f64 * self.step_hz).collect()
    }

    pub fn reference(&self) -> f64 {
        self.reference_hz.unwrap_or(0.5 * (self.f_min_hz + self.f_max_hz))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub bits: u32,
    /// Smallest gain; `2^-bits` if absent.
    #[serde(default)]
    pub gain_min: Option<f64>,
    #[serde(default = "one")]
    pub gain_max: f64,
}

fn one() -> f64 {
    1.0
}

impl CodebookConfig {
    pub fn gain_range(&self) -> (f64, f64) {
        let levels = 2f64.powi(self.bits.min(30) as i32);
        (self.gain_min.unwrap_or(self.gain_max / levels), self.gain_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionConfig {
    pub re_amplitude: f64,
    pub im_amplitude: f64,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: [usize; 3],
}

fn default_cutoffs() -> [usize; 3] {
    [2, 2, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    /// Standard deviation of the noise on each of Re and Im.
    pub noise_std: f64,
    /// Share of unobserved grid points held out for diagnostics.
    pub validation_fraction: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { noise_std: 1e-3, validation_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Kernels for (F, N, Z); derived from the codebook when absent.
    pub kernels: Option<Vec<KernelSpec>>,
    pub noise_variance: f64,
    pub min_noise_variance: f64,
    pub learn_hyperparameters: bool,
    pub subsample: usize,
    pub optimizer: OptimizerOptions,
    pub bounds: HyperparameterBounds,
    pub cg: CgConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernels: None,
            noise_variance: 1e-6,
            min_noise_variance: 1e-6,
            learn_hyperparameters: false,
            subsample: 200,
            optimizer: OptimizerOptions::default(),
            bounds: HyperparameterBounds::default(),
            cg: CgConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub eigen_truncation: f64,
    pub preconditioner: Preconditioner,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 10_000, eigen_truncation: 1e-8, preconditioner: Preconditioner::Diagonal }
    }
}

impl From<CgConfig> for CgOptions {
    fn from(c: CgConfig) -> Self {
        CgOptions {
            tolerance: c.tolerance,
            max_iters: Some(c.max_iters),
            eigen_truncation: c.eigen_truncation,
            preconditioner: c.preconditioner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub azimuth_step: f64,
    pub elevation_step: f64,
    /// Evaluate patterns at every `frequency_stride`-th grid frequency.
    pub frequency_stride: usize,
    /// Write azimuth and elevation cuts for every run.
    pub write_cuts: bool,
    /// Angular step of the cut tables.
    pub cut_step: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self { azimuth_step: 2.0, elevation_step: 2.0, frequency_stride: 1, write_cuts: true, cut_step: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbfSelection {
    #[default]
    Nearest,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalFrequencies {
    #[default]
    All,
    Center,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbfConfig {
    pub selection: AbfSelection,
    pub eval_frequencies: EvalFrequencies,
}

impl Default for AbfConfig {
    fn default() -> Self {
        Self { selection: AbfSelection::Nearest, eval_frequencies: EvalFrequencies::All }
    }
}

/// Default kernels: rational quadratic along frequency and channel, and a
/// spectral mixture on the codebook axis with one component per harmonic of
/// the phase cycle (period `2^bits` indices), weights falling as `1/(k+1)`.
pub fn default_kernels(codebook_size: usize, bits: u32) -> Vec<KernelSpec> {
    let phases = 1usize << bits;
    let base = (codebook_size - 1) as f64 / phases as f64;
    let harmonics = (0..=phases / 2).map(|k| SmComponent::new(0.5 / (k + 1) as f64, k as f64 * base, 1.0)).collect();
    vec![KernelSpec::rq(1.0, 0.3, 2.0), KernelSpec::rq(1.0, 0.3, 2.0), KernelSpec::sm(harmonics)]
}

/// Line of the first `key = ...` assignment or `[key]` header.
fn locate(text: &str, key: &str) -> Option<usize> {
    let last = key.rsplit('.').next().unwrap_or(key);
    text.lines().position(|line| {
        let t = line.trim_start();
        let header = t.trim_start_matches('[').trim_end().trim_end_matches(']');
        (t.starts_with('[') && (header == key || header.ends_with(&format!(".{last}")) && header.contains(key)))
            || t.strip_prefix(last).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text).map_err(|e| ConfigError { path: Some(path.to_path_buf()), ..e })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError { path: None, line, message: e.message().to_string() }
        })?;
        config.validate().map_err(|(key, message)| ConfigError { path: None, line: locate(text, key), message })?;
        Ok(config)
    }

    /// Semantic checks; failures name the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(("schema_version", format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "at least one seed is required".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(("seeds", "seeds must be distinct".into()));
        }
        if self.fractions.is_empty() {
            return Err(("fractions", "at least one sampling fraction is required".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(("fractions", format!("sampling fraction {f} outside (0, 1]")));
        }
        let mut fr = self.fractions.clone();
        fr.sort_by(f64::total_cmp);
        if fr.windows(2).any(|w| w[0] == w[1]) {
            return Err(("fractions", "sampling fractions must be distinct".into()));
        }
        if self.array.nx == 0 || self.array.ny == 0 {
            return Err(("array", "array dimensions must be positive".into()));
        }
        if !(self.array.spacing > 0.0 && self.array.spacing.is_finite()) {
            return Err(("spacing", "element spacing must be positive".into()));
        }
        let b = &self.band;
        if !(b.f_min_hz > 0.0 && b.f_max_hz >= b.f_min_hz && b.step_hz > 0.0 && b.f_max_hz.is_finite()) {
            return Err(("band", "band needs 0 < f_min_hz ≤ f_max_hz and step_hz > 0".into()));
        }
        if b.reference_hz.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(("reference_hz", "reference frequency must be positive".into()));
        }
        if b.frequencies().len() > 4096 {
            return Err(("band", format!("{} frequencies exceed the limit of 4096", b.frequencies().len())));
        }
        if !(1..=10).contains(&self.codebook.bits) {
            return Err(("bits", format!("codebook bits must lie in 1..=10, got {}", self.codebook.bits)));
        }
        let (lo, hi) = self.codebook.gain_range();
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(("codebook", format!("gain range must satisfy 0 < gain_min < gain_max, got [{lo}, {hi}]")));
        }
        let d = &self.distortion;
        if !(d.re_amplitude >= 0.0 && d.im_amplitude >= 0.0 && d.re_amplitude.is_finite() && d.im_amplitude.is_finite()) {
            return Err(("distortion", "distortion amplitudes must be non-negative".into()));
        }
        if d.cutoffs.contains(&0) {
            return Err(("cutoffs", "mode cutoffs must be at least 1".into()));
        }
        let m = &self.measurement;
        if !(m.noise_std >= 0.0 && m.noise_std.is_finite()) {
            return Err(("noise_std", "noise_std must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&m.validation_fraction) {
            return Err(("validation_fraction", "validation_fraction must lie in [0, 1)".into()));
        }
        let model = &self.model;
        if let Some(k) = &model.kernels {
            if k.len() != 3 {
                return Err(("kernels", format!("expected 3 kernels (F, N, Z), got {}", k.len())));
            }
            for kernel in k {
                kernel.validate().map_err(|e| ("kernels", e.to_string()))?;
                kernel.check_input_dim(1).map_err(|e| ("kernels", e.to_string()))?;
            }
        }
        if !(model.noise_variance > 0.0 && model.min_noise_variance > 0.0) {
            return Err(("noise_variance", "noise variances must be positive".into()));
        }
        if model.learn_hyperparameters && model.subsample < 2 {
            return Err(("subsample", "subsample must hold at least two points".into()));
        }
        let cg = &model.cg;
        if !(cg.tolerance > 0.0 && cg.tolerance < 1.0) {
            return Err(("tolerance", "CG tolerance must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&cg.eigen_truncation) {
            return Err(("eigen_truncation", "eigen_truncation must lie in [0, 1)".into()));
        }
        if cg.max_iters == 0 {
            return Err(("max_iters", "max_iters must be positive".into()));
        }
        self.synthesis.validate().map_err(|e| ("synthesis", e.to_string()))?;
        let p = &self.pattern;
        for (key, step) in [("azimuth_step", p.azimuth_step), ("elevation_step", p.elevation_step), ("cut_step", p.cut_step)] {
            if !(step > 0.0 && step <= 180.0) {
                return Err((key, format!("angle step must lie in (0, 180], got {step}")));
            }
        }
        if p.frequency_stride == 0 {
            return Err(("frequency_stride", "frequency_stride must be at least 1".into()));
        }
        if self.mode == CalibrationMode::Abf && self.abf.selection == AbfSelection::Ratio && self.array.nx * self.array.ny < 2 {
            return Err(("selection", "ratio selection needs at least two channels".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.band.frequencies()
    }

    pub fn geometry(&self) -> arraycal_core::Result<ArrayGeometry> {
        make_uniform_rect_array(self.array.nx, self.array.ny, self.array.spacing)
    }

    pub fn codebook(&self) -> arraycal_core::Result<AbfCodebook> {
        make_abf_codebook(self.codebook.bits, self.codebook.gain_range())
    }

    /// `(F, N, Z)`.
    pub fn grid_shape(&self) -> [usize; 3] {
        [self.frequencies().len(), self.array.nx * self.array.ny, 1 << (2 * self.codebook.bits)]
    }

    pub fn distortion_params(&self) -> DistortionParams {
        DistortionParams {
            re_amplitude: self.distortion.re_amplitude,
            im_amplitude: self.distortion.im_amplitude,
            cutoffs: self.distortion.cutoffs,
        }
    }

    pub fn kernels(&self) -> Vec<KernelSpec> {
        let z = self.grid_shape()[2];
        self.model.kernels.clone().unwrap_or_else(|| default_kernels(z, self.codebook.bits))
    }

    pub fn fit_settings(&self, seed: u64) -> FitSettings {
        FitSettings {
            kernels: self.kernels(),
            noise_variance: self.model.noise_variance,
            min_noise_variance: self.model.min_noise_variance,
            learn_hyperparameters: self.model.learn_hyperparameters,
            subsample: self.model.subsample,
            bounds: self.model.bounds,
            optimizer: self.model.optimizer,
            cg: self.model.cg.into(),
            seed,
        }
    }

    /// SHA-256 over the canonical form of every setting that affects
    /// results; seeds and the output location are excluded.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.output_dir = PathBuf::new();
        canonical.model.kernels = Some(self.kernels());
        let json = serde_json::to_string(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parses seed lists such as `0-4,7,9`.
pub fn parse_seed_list(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (
                    a.trim().parse().map_err(|_| format!("bad seed range '{part}'"))?,
                    b.trim().parse().map_err(|_| format!("bad seed range '{part}'"))?,
                );
                if b < a {
                    return Err(format!("empty seed range '{part}'"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?),
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(out)
}
