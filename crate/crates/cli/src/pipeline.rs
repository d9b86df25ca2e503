//! Seeded experiment pipeline: distortion, measurements, fit, calibration
//! and pattern metrics for each (seed, fraction) pair.

use arraycal_core::beamsynth::{abf_scale, quantize_weights};
use arraycal_core::calibration::{
    calibrate_abf_nearest, calibrate_abf_ratio, calibrate_dbf, canonical_indices, codebook_scale, fit_calibration_model,
    realize_abf, realize_dbf, simulate_measurements, validation_indices, CalibrationModel, HeldOut,
};
use arraycal_core::metrics::{bpa_rmse, nrmse, CalibrationReport, DenominatorMode};
use arraycal_core::{
    beam_pattern, design_sampling_plan, generate_distortion, synthesize_weights, AbfCodebook, AngleGrid,
    ArrayGeometry, BeamPattern, CalibrationMode, Complex64, DistortionTensor, GridAxes, Result,
};

use crate::config::{AbfSelection, EvalFrequencies, ExperimentConfig};

/// Desired weights in the form each mode needs.
#[derive(Debug, Clone)]
enum Desired {
    Dbf {
        /// Per-frequency LCMV weights, F × N.
        weights: Vec<Vec<Complex64>>,
        canonical: Vec<Vec<usize>>,
    },
    Abf {
        /// Centre-frequency weights scaled into the codebook gain range.
        weights: Vec<Complex64>,
        quantized: Vec<usize>,
        eval_frequencies: Vec<usize>,
    },
}

/// Everything that depends on the configuration alone.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    digest: String,
    geometry: ArrayGeometry,
    codebook: AbfCodebook,
    frequencies: Vec<f64>,
    reference_hz: f64,
    axes: GridAxes,
    angles: AngleGrid,
    pattern_indices: Vec<usize>,
    desired: Desired,
    ideal: BeamPattern,
}

/// Ground truth for one seed.
#[derive(Debug, Clone)]
pub struct SeedState {
    pub seed: u64,
    pub distortion: DistortionTensor,
    pub distorted: BeamPattern,
}

/// Result of one (seed, fraction) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: CalibrationReport,
    pub calibrated: BeamPattern,
}

/// Azimuth and elevation cuts through the UE direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCuts {
    pub frequency_hz: f64,
    pub azimuth: CutTable,
    pub elevation: CutTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutTable {
    pub angles: Vec<f64>,
    pub ideal: Vec<f64>,
    pub distorted: Vec<f64>,
    pub calibrated: Vec<f64>,
}

fn axis(step: f64) -> Vec<f64> {
    let n = (180.0 / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if *v.last().expect("non-empty") < 180.0 - 1e-9 {
        v.push(180.0);
    }
    v
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let geometry = config.geometry()?;
        let codebook = config.codebook()?;
        let frequencies = config.frequencies();
        let reference_hz = config.band.reference();
        let axes = GridAxes::uniform(&config.grid_shape())?;
        let angles = AngleGrid::new(axis(config.pattern.azimuth_step), axis(config.pattern.elevation_step))?;
        let pattern_indices: Vec<usize> = (0..frequencies.len()).step_by(config.pattern.frequency_stride).collect();
        let pattern_freqs: Vec<f64> = pattern_indices.iter().map(|&i| frequencies[i]).collect();
        let spec = &config.synthesis;

        let (desired, ideal_weights) = match config.mode {
            CalibrationMode::Dbf => {
                let weights = frequencies
                    .iter()
                    .map(|&f| synthesize_weights(&geometry, f, reference_hz, spec))
                    .collect::<Result<Vec<_>>>()?;
                let canonical = canonical_indices(&weights, &codebook, codebook_scale(&weights, &codebook)?);
                let ideal: Vec<_> = pattern_indices.iter().map(|&i| weights[i].clone()).collect();
                (Desired::Dbf { weights, canonical }, ideal)
            }
            CalibrationMode::Abf => {
                let centre = 0.5 * (frequencies[0] + frequencies[frequencies.len() - 1]);
                let w = synthesize_weights(&geometry, centre, reference_hz, spec)?;
                let scale = abf_scale(&w, &codebook)?;
                let quantized = quantize_weights(&w, &codebook, scale);
                let weights: Vec<Complex64> = w.iter().map(|v| v * scale).collect();
                let eval_frequencies = match config.abf.eval_frequencies {
                    EvalFrequencies::All => (0..frequencies.len()).collect(),
                    EvalFrequencies::Center => vec![frequencies.len() / 2],
                };
                let ideal = vec![weights.clone(); pattern_indices.len()];
                (Desired::Abf { weights, quantized, eval_frequencies }, ideal)
            }
        };
        let ideal = beam_pattern(&geometry, &ideal_weights, &angles, &pattern_freqs, reference_hz)?;
        Ok(Self {
            config: config.clone(),
            digest: config.digest(),
            geometry,
            codebook,
            frequencies,
            reference_hz,
            axes,
            angles,
            pattern_indices,
            desired,
            ideal,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn codebook(&self) -> &AbfCodebook {
        &self.codebook
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    pub fn ideal(&self) -> &BeamPattern {
        &self.ideal
    }

    fn pattern_freqs(&self) -> Vec<f64> {
        self.pattern_indices.iter().map(|&i| self.frequencies[i]).collect()
    }

    fn pattern(&self, weights: &[Vec<Complex64>]) -> Result<BeamPattern> {
        beam_pattern(&self.geometry, weights, &self.angles, &self.pattern_freqs(), self.reference_hz)
    }

    /// Realised weights at the pattern frequencies without calibration.
    fn uncalibrated_weights(&self, distortion: &DistortionTensor) -> Vec<Vec<Complex64>> {
        match &self.desired {
            Desired::Dbf { weights, canonical } => {
                let all = realize_dbf(weights, distortion, canonical);
                self.pattern_indices.iter().map(|&i| all[i].clone()).collect()
            }
            Desired::Abf { quantized, .. } => realize_abf(quantized, &self.codebook, distortion, &self.pattern_indices),
        }
    }

    /// Realised weights at the pattern frequencies after calibrating with `model`.
    fn calibrated_weights(&self, model: &CalibrationModel, distortion: &DistortionTensor) -> Result<Vec<Vec<Complex64>>> {
        match &self.desired {
            Desired::Dbf { weights, canonical } => {
                let commanded = calibrate_dbf(weights, model, canonical)?;
                let all = realize_dbf(&commanded, distortion, canonical);
                Ok(self.pattern_indices.iter().map(|&i| all[i].clone()).collect())
            }
            Desired::Abf { weights, eval_frequencies, .. } => {
                let rows = vec![weights.clone(); eval_frequencies.len()];
                let picks = match self.config.abf.selection {
                    AbfSelection::Nearest => calibrate_abf_nearest(&rows, model, &self.codebook, eval_frequencies)?,
                    AbfSelection::Ratio => calibrate_abf_ratio(&rows, model, &self.codebook, eval_frequencies)?,
                };
                Ok(realize_abf(&picks, &self.codebook, distortion, &self.pattern_indices))
            }
        }
    }

    pub fn seed_state(&self, seed: u64) -> Result<SeedState> {
        let distortion = generate_distortion(seed, &self.axes, &self.frequencies, &self.config.distortion_params())?;
        let distorted = self.pattern(&self.uncalibrated_weights(&distortion))?;
        Ok(SeedState { seed, distortion, distorted })
    }

    /// True distorted weights `w_z · d` at the given flat grid indices.
    fn truth(&self, distortion: &DistortionTensor, indices: &[usize]) -> Vec<Complex64> {
        let nz = self.codebook.len();
        indices.iter().map(|&i| self.codebook.weight(i % nz) * distortion.values()[i]).collect()
    }

    /// Simulates sparse measurements and fits both GP surfaces.
    pub fn fit(&self, state: &SeedState, fraction: f64) -> Result<CalibrationModel> {
        let c = &self.config;
        let mask = design_sampling_plan(&self.axes, fraction, state.seed)?;
        let grid = simulate_measurements(&self.axes, &state.distortion, &self.codebook, &mask, c.measurement.noise_std, state.seed)?;
        let held = validation_indices(&mask, c.measurement.validation_fraction, state.seed);
        let truth = self.truth(&state.distortion, &held);
        let held_out = (!held.is_empty()).then_some(HeldOut { indices: &held, truth: &truth });
        fit_calibration_model(&grid, &c.fit_settings(state.seed), c.mode, &self.codebook, held_out)
    }

    /// Applies `model` and scores the three patterns and both GP surfaces.
    pub fn evaluate(&self, state: &SeedState, fraction: f64, model: &CalibrationModel) -> Result<RunOutcome> {
        let calibrated = self.pattern(&self.calibrated_weights(model, &state.distortion)?)?;
        let mode = self.config.denominator;
        let alt = match mode {
            DenominatorMode::PaperSum => DenominatorMode::CellCount,
            DenominatorMode::CellCount => DenominatorMode::PaperSum,
        };
        let bpa_distorted = bpa_rmse(&self.ideal, &state.distorted, mode)?;
        let bpa_calibrated = bpa_rmse(&self.ideal, &calibrated, mode)?;

        let predicted = model.predict_grid()?;
        let all: Vec<usize> = (0..self.axes.len()).collect();
        let truth = self.truth(&state.distortion, &all);
        let part = |v: &[Complex64], f: fn(&Complex64) -> f64| v.iter().map(f).collect::<Vec<f64>>();
        let gp_nrmse_re = nrmse(&part(&truth, |c| c.re), &part(&predicted, |c| c.re))?;
        let gp_nrmse_im = nrmse(&part(&truth, |c| c.im), &part(&predicted, |c| c.im))?;

        let report = CalibrationReport {
            seed: state.seed,
            fraction,
            bpa_distorted,
            bpa_calibrated,
            bpa_distorted_alt: bpa_rmse(&self.ideal, &state.distorted, alt)?,
            bpa_calibrated_alt: bpa_rmse(&self.ideal, &calibrated, alt)?,
            improvement_ratio: CalibrationReport::ratio(bpa_distorted, bpa_calibrated),
            gp_nrmse_re,
            gp_nrmse_im,
        };
        Ok(RunOutcome { report, calibrated })
    }

    /// Azimuth cut at the UE elevation and elevation cut at the UE azimuth,
    /// at the middle pattern frequency.
    pub fn cuts(&self, state: &SeedState, model: &CalibrationModel) -> Result<PatternCuts> {
        let k = self.pattern_indices.len() / 2;
        let f = self.frequencies[self.pattern_indices[k]];
        let ideal_w = match &self.desired {
            Desired::Dbf { weights, .. } => weights[self.pattern_indices[k]].clone(),
            Desired::Abf { weights, .. } => weights.clone(),
        };
        let distorted_w = self.uncalibrated_weights(&state.distortion).swap_remove(k);
        let calibrated_w = self.calibrated_weights(model, &state.distortion)?.swap_remove(k);
        let (ue_az, ue_el) = self.config.synthesis.ue_direction;
        let grid = axis(self.config.pattern.cut_step);
        let cut = |angles: AngleGrid, along: Vec<f64>| -> Result<CutTable> {
            let eval = |w: &Vec<Complex64>| -> Result<Vec<f64>> {
                Ok(beam_pattern(&self.geometry, std::slice::from_ref(w), &angles, &[f], self.reference_hz)?.values().to_vec())
            };
            Ok(CutTable { angles: along, ideal: eval(&ideal_w)?, distorted: eval(&distorted_w)?, calibrated: eval(&calibrated_w)? })
        };
        Ok(PatternCuts {
            frequency_hz: f,
            azimuth: cut(AngleGrid::new(grid.clone(), vec![ue_el])?, grid.clone())?,
            elevation: cut(AngleGrid::new(vec![ue_az], grid.clone())?, grid)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use arraycal_core::calibration::DistortionSource;

    fn config(mode: &str, amplitude: f64) -> ExperimentConfig {
        let text = crate::config::tests::MINIMAL
            .replace("mode = \"dbf\"", &format!("mode = \"{mode}\""))
            .replace("re_amplitude = 0.1", &format!("re_amplitude = {amplitude}"))
            .replace("im_amplitude = 0.1", &format!("im_amplitude = {amplitude}"));
        let mut c = ExperimentConfig::parse(&text).unwrap();
        c.pattern.azimuth_step = 10.0;
        c.pattern.elevation_step = 10.0;
        c
    }

    #[test]
    fn angle_axis_always_ends_at_180() {
        assert_eq!(axis(45.0), vec![0.0, 45.0, 90.0, 135.0, 180.0]);
        assert_eq!(*axis(7.0).last().unwrap(), 180.0);
    }

    #[test]
    fn zero_distortion_dbf_is_lossless() {
        let mut c = config("dbf", 0.0);
        c.measurement.noise_std = 0.0;
        let exp = Experiment::prepare(&c).unwrap();
        let state = exp.seed_state(0).unwrap();
        let model = exp.fit(&state, 1.0).unwrap();
        let out = exp.evaluate(&state, 1.0, &model).unwrap();
        assert!(out.report.bpa_distorted < 1e-12);
        assert!(out.report.bpa_calibrated < 1e-6, "{}", out.report.bpa_calibrated);
    }

    #[test]
    fn zero_distortion_abf_sits_on_the_quantization_floor() {
        let mut c = config("abf", 0.0);
        c.measurement.noise_std = 0.0;
        let exp = Experiment::prepare(&c).unwrap();
        let state = exp.seed_state(3).unwrap();
        let model = exp.fit(&state, 1.0).unwrap();
        let out = exp.evaluate(&state, 1.0, &model).unwrap();
        assert!(out.report.bpa_distorted > 0.0);
        assert_eq!(out.report.bpa_distorted, out.report.bpa_calibrated);
    }

    #[test]
    fn distortion_degrades_the_pattern_and_calibration_helps() {
        let exp = Experiment::prepare(&config("dbf", 0.2)).unwrap();
        let state = exp.seed_state(1).unwrap();
        let model = exp.fit(&state, 1.0).unwrap();
        assert_eq!(DistortionSource::shape(&model), [4, 4, 4]);
        let out = exp.evaluate(&state, 1.0, &model).unwrap();
        assert!(out.report.bpa_distorted > 0.0);
        assert!(out.report.improvement_ratio > 1.0, "{:?}", out.report);
        let cuts = exp.cuts(&state, &model).unwrap();
        assert_eq!(cuts.azimuth.angles.len(), 181);
        assert_eq!(cuts.elevation.ideal.len(), 181);
    }

    #[test]
    fn runs_are_deterministic() {
        let exp = Experiment::prepare(&config("abf", 0.05)).unwrap();
        let a = exp.seed_state(4).unwrap();
        let b = exp.seed_state(4).unwrap();
        let ra = exp.evaluate(&a, 0.5, &exp.fit(&a, 0.5).unwrap()).unwrap();
        let rb = exp.evaluate(&b, 0.5, &exp.fit(&b, 0.5).unwrap()).unwrap();
        assert_eq!(ra.report, rb.report);
    }
}
