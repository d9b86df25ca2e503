//! Sparse measurement simulation, GP calibration models and weight correction.
//!
//! The measurement grid spans frequency × channel × codebook index. Two grid
//! GPs model the real and imaginary parts of the measured distorted weights
//! `w_z · d(f, n, z)`; distortion estimates are the GP mean divided by the
//! commanded codebook weight.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{optimize_hyperparameters, Dataset, HyperparameterBounds, KernelSpec, OptimizerOptions};
use crate::grid::{GridAxes, ObservationMask};
use crate::impairment::{AbfCodebook, DistortionTensor};
use crate::kron::{CgOptions, KronGpModel, KronGpState};
use crate::metrics::nrmse;

const MODULE: &str = "calibration";
const COVERAGE_ATTEMPTS: usize = 100;
const MIN_DISTORTION: f64 = 1e-6;

// ChaCha8 streams used under one user seed.
const STREAM_PLAN: u64 = 3;
const STREAM_NOISE: u64 = 4;
const STREAM_VALIDATION: u64 = 5;
const STREAM_SUBSAMPLE: u64 = 6;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    Dbf,
    Abf,
}

/// Draws `round(fraction · m)` grid points uniformly without replacement.
///
/// When `fraction ≥ 1/N` the draw is repeated (up to 100 times) until every
/// channel slice holds at least one point.
pub fn design_sampling_plan(axes: &GridAxes, fraction: f64, seed: u64) -> Result<ObservationMask> {
    let m = axes.len();
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(MODULE, format!("sampling fraction must lie in (0, 1], got {fraction}")));
    }
    let k = (fraction * m as f64).round() as usize;
    if k == 0 {
        return Err(Error::invalid(MODULE, format!("fraction {fraction} of {m} grid points selects nothing")));
    }
    if k == m {
        return Ok(ObservationMask::full(m));
    }
    let channels = if axes.ndim() >= 2 { axes.shape()[1] } else { 1 };
    let need_coverage = axes.ndim() >= 2 && fraction >= 1.0 / channels as f64;
    let mut rng = rng_for(seed, STREAM_PLAN);
    let mut last = None;
    for _ in 0..COVERAGE_ATTEMPTS {
        let mask = ObservationMask::from_indices(m, sample(&mut rng, m, k).into_vec())?;
        if !need_coverage || covers_channels(axes, &mask) {
            return Ok(mask);
        }
        last = Some(mask);
    }
    log::warn!("sampling plan leaves a channel unobserved after {COVERAGE_ATTEMPTS} draws");
    Ok(last.expect("at least one draw"))
}

fn covers_channels(axes: &GridAxes, mask: &ObservationMask) -> bool {
    let mut seen = vec![false; axes.shape()[1]];
    for &i in mask.indices() {
        seen[axes.multi_index(i)[1]] = true;
    }
    seen.iter().all(|&s| s)
}

/// Observed distorted weights on the calibration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementGrid {
    axes: GridAxes,
    mask: ObservationMask,
    measured: Vec<Complex64>,
}

impl MeasurementGrid {
    pub fn new(axes: GridAxes, mask: ObservationMask, measured: Vec<Complex64>) -> Result<Self> {
        if axes.ndim() != 3 {
            return Err(Error::invalid(MODULE, "measurement grid must have axes (F, N, Z)"));
        }
        if mask.len() != axes.len() {
            return Err(Error::invalid(MODULE, "mask size does not match the grid"));
        }
        if mask.count() != measured.len() {
            return Err(Error::invalid(MODULE, format!("{} measurements for {} observed points", measured.len(), mask.count())));
        }
        if mask.count() == 0 {
            return Err(Error::invalid(MODULE, "measurement grid is empty"));
        }
        Ok(Self { axes, mask, measured })
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    pub fn mask(&self) -> &ObservationMask {
        &self.mask
    }

    /// Values at `mask.indices()`, in the same order.
    pub fn measured(&self) -> &[Complex64] {
        &self.measured
    }
}

/// Measurement `w_z · d(f, n, z)` at each observed point, plus independent
/// Gaussian noise of standard deviation `noise_std` on each component.
pub fn simulate_measurements(
    axes: &GridAxes,
    distortion: &DistortionTensor,
    codebook: &AbfCodebook,
    mask: &ObservationMask,
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementGrid> {
    let shape = distortion.shape();
    if axes.shape() != shape {
        return Err(Error::invalid(MODULE, format!("grid shape {:?} does not match distortion shape {shape:?}", axes.shape())));
    }
    if shape[2] != codebook.len() {
        return Err(Error::invalid(MODULE, format!("Z axis has {} points but the codebook has {}", shape[2], codebook.len())));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid(MODULE, format!("noise std must be non-negative, got {noise_std}")));
    }
    let mut rng = rng_for(seed, STREAM_NOISE);
    let measured = mask
        .indices()
        .iter()
        .map(|&i| {
            let z = i % shape[2];
            let clean = codebook.weight(z) * distortion.values()[i];
            if noise_std == 0.0 {
                return clean;
            }
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            clean + Complex64::new(re, im) * noise_std
        })
        .collect();
    MeasurementGrid::new(axes.clone(), mask.clone(), measured)
}

/// Held-out grid points for diagnostics: `fraction` of the unobserved points.
pub fn validation_indices(mask: &ObservationMask, fraction: f64, seed: u64) -> Vec<usize> {
    let free = mask.complement();
    let k = ((fraction * free.len() as f64).round() as usize).min(free.len());
    let mut rng = rng_for(seed, STREAM_VALIDATION);
    let mut picked: Vec<usize> = sample(&mut rng, free.len(), k).into_iter().map(|j| free[j]).collect();
    picked.sort_unstable();
    picked
}

/// How the two GP models are built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Per-axis kernels for (F, N, Z); the starting point when learning.
    pub kernels: Vec<KernelSpec>,
    pub noise_variance: f64,
    /// Lower limit on the noise variance handed to the grid solver.
    pub min_noise_variance: f64,
    pub learn_hyperparameters: bool,
    /// Observed points used for dense marginal-likelihood learning.
    pub subsample: usize,
    pub bounds: HyperparameterBounds,
    pub optimizer: OptimizerOptions,
    pub cg: CgOptions,
    pub seed: u64,
}

/// Per-component hyperparameters actually used by a grid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedHyperparameters {
    pub kernels: Vec<KernelSpec>,
    pub noise_variance: f64,
    /// Dense-subsample log likelihood before and after learning.
    pub initial_log_likelihood: Option<f64>,
    pub log_likelihood: Option<f64>,
}

/// Prediction error of both surfaces on held-out points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub points: usize,
    pub nrmse_re: f64,
    pub nrmse_im: f64,
}

/// Ground truth for held-out diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct HeldOut<'a> {
    pub indices: &'a [usize],
    /// True distorted weights at `indices`.
    pub truth: &'a [Complex64],
}

/// Real and imaginary GP surfaces over (F, N, Z).
#[derive(Debug, Clone)]
pub struct CalibrationModel {
    gp_re: KronGpModel,
    gp_im: KronGpModel,
    codebook: AbfCodebook,
    mode: CalibrationMode,
    hyper_re: LearnedHyperparameters,
    hyper_im: LearnedHyperparameters,
    validation: Option<ValidationReport>,
}

/// On-disk form of a [`CalibrationModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModelState {
    pub format_version: u32,
    pub mode: CalibrationMode,
    pub codebook_bits: u32,
    pub codebook_gain_range: (f64, f64),
    pub gp_re: KronGpState,
    pub gp_im: KronGpState,
    pub hyper_re: LearnedHyperparameters,
    pub hyper_im: LearnedHyperparameters,
    pub validation: Option<ValidationReport>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn learn_component(
    grid: &MeasurementGrid,
    targets: &[f64],
    settings: &FitSettings,
    stream_offset: u64,
) -> Result<LearnedHyperparameters> {
    if !settings.learn_hyperparameters {
        return Ok(LearnedHyperparameters {
            kernels: settings.kernels.clone(),
            noise_variance: settings.noise_variance,
            initial_log_likelihood: None,
            log_likelihood: None,
        });
    }
    let count = grid.mask.count();
    let k = settings.subsample.min(count);
    if k < 2 {
        return Err(Error::invalid(MODULE, "hyperparameter learning needs at least two observations"));
    }
    let mut rng = rng_for(settings.seed, STREAM_SUBSAMPLE + 8 * stream_offset);
    let mut picks = sample(&mut rng, count, k).into_vec();
    picks.sort_unstable();
    let inputs = picks.iter().map(|&j| grid.axes.point(grid.mask.indices()[j])).collect();
    let ys = picks.iter().map(|&j| targets[j]).collect();
    let dataset = Dataset::new(inputs, ys)?;
    let template = KernelSpec::product(settings.kernels.clone());
    let options = OptimizerOptions { seed: settings.optimizer.seed ^ settings.seed.rotate_left(17) ^ stream_offset, ..settings.optimizer };
    let fit = optimize_hyperparameters(&dataset, &template, settings.noise_variance, &settings.bounds, &options)?;
    let kernels = match fit.kernel {
        KernelSpec::Product { factors } => factors,
        other => vec![other],
    };
    Ok(LearnedHyperparameters {
        kernels,
        noise_variance: fit.noise_variance,
        initial_log_likelihood: Some(fit.initial_log_likelihood),
        log_likelihood: Some(fit.log_likelihood),
    })
}

fn fit_component(grid: &MeasurementGrid, targets: Vec<f64>, settings: &FitSettings, stream_offset: u64) -> Result<(KronGpModel, LearnedHyperparameters)> {
    let hyper = learn_component(grid, &targets, settings, stream_offset)?;
    let noise = hyper.noise_variance.max(settings.min_noise_variance);
    let mut gp = KronGpModel::new(grid.axes.clone(), hyper.kernels.clone(), noise, settings.cg)?;
    gp.fit(grid.mask.clone(), targets)?;
    Ok((gp, LearnedHyperparameters { noise_variance: noise, ..hyper }))
}

/// Fits the real and imaginary surfaces. When `held_out` is given, the
/// model records its prediction NRMSE there.
pub fn fit_calibration_model(
    grid: &MeasurementGrid,
    settings: &FitSettings,
    mode: CalibrationMode,
    codebook: &AbfCodebook,
    held_out: Option<HeldOut<'_>>,
) -> Result<CalibrationModel> {
    if settings.kernels.len() != 3 {
        return Err(Error::invalid(MODULE, format!("expected 3 axis kernels, got {}", settings.kernels.len())));
    }
    if grid.axes.shape()[2] != codebook.len() {
        return Err(Error::invalid(MODULE, "Z axis does not match the codebook size"));
    }
    let re = grid.measured.iter().map(|w| w.re).collect();
    let im = grid.measured.iter().map(|w| w.im).collect();
    let (gp_re, hyper_re) = fit_component(grid, re, settings, 0)?;
    let (gp_im, hyper_im) = fit_component(grid, im, settings, 1)?;
    let mut model = CalibrationModel { gp_re, gp_im, codebook: codebook.clone(), mode, hyper_re, hyper_im, validation: None };
    if let Some(h) = held_out {
        model.validation = Some(model.validate(h)?);
    }
    Ok(model)
}

impl CalibrationModel {
    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn codebook(&self) -> &AbfCodebook {
        &self.codebook
    }

    pub fn axes(&self) -> &GridAxes {
        self.gp_re.axes()
    }

    pub fn gp_re(&self) -> &KronGpModel {
        &self.gp_re
    }

    pub fn gp_im(&self) -> &KronGpModel {
        &self.gp_im
    }

    pub fn hyperparameters(&self) -> (&LearnedHyperparameters, &LearnedHyperparameters) {
        (&self.hyper_re, &self.hyper_im)
    }

    pub fn validation(&self) -> Option<&ValidationReport> {
        self.validation.as_ref()
    }

    /// `(F, N, Z)`.
    pub fn shape(&self) -> [usize; 3] {
        let s = self.axes().shape();
        [s[0], s[1], s[2]]
    }

    /// Predicted distorted weights over the whole grid, row-major.
    pub fn predict_grid(&self) -> Result<Vec<Complex64>> {
        let re = self.gp_re.predict_grid()?;
        let im = self.gp_im.predict_grid()?;
        Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
    }

    /// Predicted distorted weights at flat grid indices.
    pub fn predict_indices(&self, indices: &[usize]) -> Result<Vec<Complex64>> {
        let re = self.gp_re.predict_indices(indices)?;
        let im = self.gp_im.predict_indices(indices)?;
        Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
    }

    /// Held-out NRMSE of both surfaces.
    pub fn validate(&self, held_out: HeldOut<'_>) -> Result<ValidationReport> {
        if held_out.indices.len() != held_out.truth.len() {
            return Err(Error::invalid(MODULE, "held-out indices and truth differ in length"));
        }
        let pred = self.predict_indices(held_out.indices)?;
        let split = |f: fn(&Complex64) -> f64| -> (Vec<f64>, Vec<f64>) {
            (held_out.truth.iter().map(f).collect(), pred.iter().map(f).collect())
        };
        let (tr, pr) = split(|c| c.re);
        let (ti, pi) = split(|c| c.im);
        Ok(ValidationReport { points: held_out.indices.len(), nrmse_re: nrmse(&tr, &pr)?, nrmse_im: nrmse(&ti, &pi)? })
    }

    pub fn to_state(&self) -> Result<CalibrationModelState> {
        let gains = self.codebook.gains();
        Ok(CalibrationModelState {
            format_version: MODEL_FORMAT_VERSION,
            mode: self.mode,
            codebook_bits: self.codebook.bits(),
            codebook_gain_range: (gains[0], *gains.last().expect("codebook has gains")),
            gp_re: self.gp_re.to_state()?,
            gp_im: self.gp_im.to_state()?,
            hyper_re: self.hyper_re.clone(),
            hyper_im: self.hyper_im.clone(),
            validation: self.validation,
        })
    }

    pub fn from_state(state: CalibrationModelState) -> Result<Self> {
        if state.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::State {
                module: MODULE,
                message: format!("model format {} is not supported (expected {MODEL_FORMAT_VERSION})", state.format_version),
            });
        }
        let codebook = crate::impairment::make_abf_codebook(state.codebook_bits, state.codebook_gain_range)?;
        let gp_re = KronGpModel::from_state(state.gp_re)?;
        let gp_im = KronGpModel::from_state(state.gp_im)?;
        if gp_re.axes() != gp_im.axes() || gp_re.mask()? != gp_im.mask()? {
            return Err(Error::State { module: MODULE, message: "real and imaginary models disagree on grid or mask".into() });
        }
        if gp_re.axes().shape()[2] != codebook.len() {
            return Err(Error::State { module: MODULE, message: "codebook does not match the Z axis".into() });
        }
        Ok(Self {
            gp_re,
            gp_im,
            codebook,
            mode: state.mode,
            hyper_re: state.hyper_re,
            hyper_im: state.hyper_im,
            validation: state.validation,
        })
    }
}

/// Anything that can supply distortion estimates `d̂(f, n, z)`.
pub trait DistortionSource {
    /// `(F, N, Z)`.
    fn shape(&self) -> [usize; 3];

    /// Distortion at each `(f, n, z)` cell.
    fn distortions(&self, cells: &[[usize; 3]]) -> Result<Vec<Complex64>>;

    /// Distortion at every grid point, row-major.
    fn distortion_grid(&self) -> Result<Vec<Complex64>> {
        let [nf, nn, nz] = self.shape();
        let cells: Vec<[usize; 3]> =
            (0..nf).flat_map(|f| (0..nn).flat_map(move |n| (0..nz).map(move |z| [f, n, z]))).collect();
        self.distortions(&cells)
    }
}

fn check_cells(shape: [usize; 3], cells: &[[usize; 3]]) -> Result<()> {
    if let Some(c) = cells.iter().find(|c| c.iter().zip(&shape).any(|(i, s)| i >= s)) {
        return Err(Error::invalid(MODULE, format!("cell {c:?} outside grid {shape:?}")));
    }
    Ok(())
}

impl DistortionSource for DistortionTensor {
    fn shape(&self) -> [usize; 3] {
        DistortionTensor::shape(self)
    }

    fn distortions(&self, cells: &[[usize; 3]]) -> Result<Vec<Complex64>> {
        check_cells(self.shape(), cells)?;
        Ok(cells.iter().map(|&[f, n, z]| self.get(f, n, z)).collect())
    }

    fn distortion_grid(&self) -> Result<Vec<Complex64>> {
        Ok(self.values().to_vec())
    }
}

impl DistortionSource for CalibrationModel {
    fn shape(&self) -> [usize; 3] {
        CalibrationModel::shape(self)
    }

    fn distortions(&self, cells: &[[usize; 3]]) -> Result<Vec<Complex64>> {
        check_cells(self.shape(), cells)?;
        let axes = self.axes();
        let flat: Vec<usize> = cells.iter().map(|c| axes.flat_index(c)).collect();
        let w = self.predict_indices(&flat)?;
        Ok(w.iter().zip(cells).map(|(w, c)| w / self.codebook.weight(c[2])).collect())
    }

    fn distortion_grid(&self) -> Result<Vec<Complex64>> {
        let nz = self.codebook.len();
        let w = self.predict_grid()?;
        Ok(w.iter().enumerate().map(|(i, w)| w / self.codebook.weight(i % nz)).collect())
    }
}

/// `d̂(f, n, z) = ŵ^d / w_z` at one grid point.
pub fn estimate_distortion(model: &CalibrationModel, f: usize, n: usize, z: usize) -> Result<Complex64> {
    Ok(model.distortions(&[[f, n, z]])?[0])
}

/// Factor mapping continuous weights into the codebook's gain range: the
/// largest magnitude lands on the largest gain.
pub fn codebook_scale(weights: &[Vec<Complex64>], codebook: &AbfCodebook) -> Result<f64> {
    let peak = weights.iter().flatten().map(|w| w.norm()).fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(MODULE, "weights are all zero"));
    }
    Ok(codebook.max_gain() / peak)
}

/// Codebook cell of each desired DBF weight after scaling by `scale`; the
/// distortion of a continuous weight is read at this index.
pub fn canonical_indices(desired: &[Vec<Complex64>], codebook: &AbfCodebook, scale: f64) -> Vec<Vec<usize>> {
    desired.iter().map(|row| row.iter().map(|w| codebook.nearest(w * scale)).collect()).collect()
}

/// Corrected DBF weights `w / d̂(f, n, z_c)` over F × N, where `z_c` is the
/// canonical codebook index of each desired weight.
pub fn calibrate_dbf(
    desired: &[Vec<Complex64>],
    source: &dyn DistortionSource,
    canonical: &[Vec<usize>],
) -> Result<Vec<Vec<Complex64>>> {
    let [nf, nn, _] = source.shape();
    if desired.len() != nf || desired.iter().any(|r| r.len() != nn) {
        return Err(Error::invalid(MODULE, format!("desired weights must be {nf} × {nn}")));
    }
    if canonical.len() != nf || canonical.iter().any(|r| r.len() != nn) {
        return Err(Error::invalid(MODULE, "canonical indices do not match the desired weights"));
    }
    let cells: Vec<[usize; 3]> =
        (0..nf).flat_map(|f| (0..nn).map(move |n| [f, n, canonical[f][n]])).collect();
    let d_hat = source.distortions(&cells)?;
    let mut out = Vec::with_capacity(nf);
    for f in 0..nf {
        let mut row = Vec::with_capacity(nn);
        for n in 0..nn {
            let d = d_hat[f * nn + n];
            if d.norm() < MIN_DISTORTION {
                return Err(Error::DegenerateDistortion { f, n, magnitude: d.norm() });
            }
            row.push(desired[f][n] / d);
        }
        out.push(row);
    }
    Ok(out)
}

/// Weights realised by DBF hardware: each commanded weight times the true
/// distortion at its canonical cell.
pub fn realize_dbf(
    commanded: &[Vec<Complex64>],
    distortion: &DistortionTensor,
    canonical: &[Vec<usize>],
) -> Vec<Vec<Complex64>> {
    commanded
        .iter()
        .enumerate()
        .map(|(f, row)| row.iter().enumerate().map(|(n, w)| w * distortion.get(f, n, canonical[f][n])).collect())
        .collect()
}

/// Weights realised by ABF hardware at each listed frequency index.
pub fn realize_abf(
    indices: &[usize],
    codebook: &AbfCodebook,
    distortion: &DistortionTensor,
    frequencies: &[usize],
) -> Vec<Vec<Complex64>> {
    frequencies
        .iter()
        .map(|&f| indices.iter().enumerate().map(|(n, &z)| codebook.weight(z) * distortion.get(f, n, z)).collect())
        .collect()
}

fn abf_inputs(desired: &[Vec<Complex64>], source: &dyn DistortionSource, frequencies: &[usize], codebook: &AbfCodebook) -> Result<Vec<Complex64>> {
    let [nf, nn, nz] = source.shape();
    if nz != codebook.len() {
        return Err(Error::invalid(MODULE, "Z axis does not match the codebook size"));
    }
    if frequencies.is_empty() || frequencies.iter().any(|&f| f >= nf) {
        return Err(Error::invalid(MODULE, "evaluation frequencies must be non-empty and on the grid"));
    }
    if desired.len() != frequencies.len() || desired.iter().any(|r| r.len() != nn) {
        return Err(Error::invalid(MODULE, format!("desired weights must be {} × {nn}", frequencies.len())));
    }
    // ŵ^d at the evaluation frequencies, laid out [f_eval][n][z].
    let d = source.distortion_grid()?;
    let mut out = Vec::with_capacity(frequencies.len() * nn * nz);
    for &f in frequencies {
        for n in 0..nn {
            for z in 0..nz {
                out.push(codebook.weight(z) * d[(f * nn + n) * nz + z]);
            }
        }
    }
    Ok(out)
}

/// Per-channel codebook index minimising `Σ_f |w(f, n) − ŵ^d(f, n, z)|²`
/// over the evaluation frequencies; lowest index on ties.
pub fn calibrate_abf_nearest(
    desired: &[Vec<Complex64>],
    source: &dyn DistortionSource,
    codebook: &AbfCodebook,
    frequencies: &[usize],
) -> Result<Vec<usize>> {
    let wd = abf_inputs(desired, source, frequencies, codebook)?;
    let [_, nn, nz] = source.shape();
    Ok((0..nn)
        .map(|n| {
            let mut best = (f64::INFINITY, 0);
            for z in 0..nz {
                let cost: f64 = desired
                    .iter()
                    .enumerate()
                    .map(|(fi, row)| (row[n] - wd[(fi * nn + n) * nz + z]).norm_sqr())
                    .sum();
                if cost < best.0 {
                    best = (cost, z);
                }
            }
            best.1
        })
        .collect())
}

/// Objective of [`calibrate_abf_ratio`]:
/// `Σ_f Σ_{n≥1} |ŵ^d(z_n)/ŵ^d(z_{n−1}) − w_n/w_{n−1}|²`.
pub fn ratio_objective(
    desired: &[Vec<Complex64>],
    source: &dyn DistortionSource,
    codebook: &AbfCodebook,
    frequencies: &[usize],
    indices: &[usize],
) -> Result<f64> {
    let wd = abf_inputs(desired, source, frequencies, codebook)?;
    let problem = RatioProblem::new(desired, &wd, source.shape())?;
    if indices.len() != problem.nn || indices.iter().any(|&z| z >= problem.nz) {
        return Err(Error::invalid(MODULE, "index set does not match the channels and codebook"));
    }
    Ok((1..problem.nn).map(|n| problem.pair(n, indices[n - 1], indices[n])).sum())
}

struct RatioProblem<'a> {
    target: Vec<Vec<Complex64>>,
    wd: &'a [Complex64],
    nn: usize,
    nz: usize,
}

impl<'a> RatioProblem<'a> {
    fn new(desired: &[Vec<Complex64>], wd: &'a [Complex64], shape: [usize; 3]) -> Result<Self> {
        let [_, nn, nz] = shape;
        if nn < 2 {
            return Err(Error::invalid(MODULE, "ratio matching needs at least two channels"));
        }
        if desired.iter().flatten().any(|w| w.norm() == 0.0) {
            return Err(Error::invalid(MODULE, "ratio matching needs non-zero desired weights"));
        }
        let target = desired.iter().map(|row| (1..nn).map(|n| row[n] / row[n - 1]).collect()).collect();
        Ok(Self { target, wd, nn, nz })
    }

    fn w(&self, fi: usize, n: usize, z: usize) -> Complex64 {
        self.wd[(fi * self.nn + n) * self.nz + z]
    }

    /// Cost of the link between channels `n − 1` and `n`.
    fn pair(&self, n: usize, z_prev: usize, z: usize) -> f64 {
        self.target
            .iter()
            .enumerate()
            .map(|(fi, t)| {
                let prev = self.w(fi, n - 1, z_prev);
                if prev.norm_sqr() == 0.0 {
                    return f64::INFINITY;
                }
                (self.w(fi, n, z) / prev - t[n - 1]).norm_sqr()
            })
            .sum()
    }

    fn argmin(&self, cost: impl Fn(usize) -> f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for z in 0..self.nz {
            let c = cost(z);
            if improves(c, best.0) {
                best = (c, z);
            }
        }
        best.1
    }

    /// Exact minimiser of the chain objective by dynamic programming, run
    /// from the last channel back so ties resolve to low indices on the
    /// first channels.
    fn solve_exact(&self) -> Vec<usize> {
        let (nn, nz) = (self.nn, self.nz);
        // cost[z]: best cost of channels n.. given z at channel n − 1.
        let mut cost = vec![0.0; nz];
        let mut next = vec![vec![0usize; nz]; nn];
        for n in (1..nn).rev() {
            let mut here = vec![f64::INFINITY; nz];
            for zp in 0..nz {
                let mut best = (f64::INFINITY, 0);
                for (z, &c) in cost.iter().enumerate() {
                    let total = self.pair(n, zp, z) + c;
                    if improves(total, best.0) {
                        best = (total, z);
                    }
                }
                here[zp] = best.0;
                next[n][zp] = best.1;
            }
            cost = here;
        }
        let mut z = vec![self.argmin(|c| cost[c])];
        for n in 1..nn {
            z.push(next[n][z[n - 1]]);
        }
        z
    }

    /// First pair jointly, later channels greedily, then coordinate sweeps
    /// against both neighbours until nothing changes.
    fn solve_greedy(&self) -> Vec<usize> {
        let (nn, nz) = (self.nn, self.nz);
        let mut best = (f64::INFINITY, 0, 0);
        for z0 in 0..nz {
            for z1 in 0..nz {
                let c = self.pair(1, z0, z1);
                if improves(c, best.0) {
                    best = (c, z0, z1);
                }
            }
        }
        let mut z = vec![best.1, best.2];
        for n in 2..nn {
            let prev = z[n - 1];
            z.push(self.argmin(|c| self.pair(n, prev, c)));
        }
        const MAX_SWEEPS: usize = 20;
        for _ in 0..MAX_SWEEPS {
            let mut changed = false;
            for n in 0..nn {
                let local = |c: usize| {
                    let left = if n > 0 { self.pair(n, z[n - 1], c) } else { 0.0 };
                    let right = if n + 1 < nn { self.pair(n + 1, c, z[n + 1]) } else { 0.0 };
                    left + right
                };
                let cand = self.argmin(local);
                if improves(local(cand), local(z[n])) {
                    z[n] = cand;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        z
    }
}

/// Strictly better beyond round-off, so near-equal costs keep the lower index.
fn improves(candidate: f64, best: f64) -> bool {
    if best.is_infinite() {
        return candidate < best;
    }
    candidate < best - 1e-10 * best.abs() - 1e-24
}

/// Ratio-objective evaluations up to which the exact solver is used.
const EXACT_RATIO_BUDGET: usize = 1_000_000_000;

/// Index set matching the ratios between consecutive channels.
///
/// The objective is a chain over channels, solved exactly by dynamic
/// programming when `Z²·(N−1)·|frequencies|` is within budget and by a
/// greedy sweep with coordinate refinement otherwise. Ratios are blind to a
/// global complex factor, so symmetric solutions tie and the lowest indices
/// win.
pub fn calibrate_abf_ratio(
    desired: &[Vec<Complex64>],
    source: &dyn DistortionSource,
    codebook: &AbfCodebook,
    frequencies: &[usize],
) -> Result<Vec<usize>> {
    let wd = abf_inputs(desired, source, frequencies, codebook)?;
    let p = RatioProblem::new(desired, &wd, source.shape())?;
    if p.nz * p.nz * (p.nn - 1) * frequencies.len() <= EXACT_RATIO_BUDGET {
        Ok(p.solve_exact())
    } else {
        Ok(p.solve_greedy())
    }
}

/// Greedy variant of [`calibrate_abf_ratio`], whatever the problem size.
pub fn calibrate_abf_ratio_greedy(
    desired: &[Vec<Complex64>],
    source: &dyn DistortionSource,
    codebook: &AbfCodebook,
    frequencies: &[usize],
) -> Result<Vec<usize>> {
    let wd = abf_inputs(desired, source, frequencies, codebook)?;
    Ok(RatioProblem::new(desired, &wd, source.shape())?.solve_greedy())
}
