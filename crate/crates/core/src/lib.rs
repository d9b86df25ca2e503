//! Simulation and GP-based calibration of RF impairments in phased arrays.

pub mod beamsynth;
pub mod calibration;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod grid;
pub mod impairment;
pub mod kron;
pub mod metrics;

pub use beamsynth::{synthesize_abf_weights, synthesize_weights, Sector, SynthesisSpec};
pub use calibration::{
    calibrate_abf_nearest, calibrate_abf_ratio, calibrate_dbf, design_sampling_plan, estimate_distortion,
    fit_calibration_model, simulate_measurements, CalibrationMode, CalibrationModel, DistortionSource, FitSettings,
    MeasurementGrid,
};
pub use error::{Error, Result};
pub use geometry::{beam_pattern, make_uniform_rect_array, steering_vector, AngleGrid, ArrayGeometry, BeamPattern};
pub use gp::{KernelSpec, SmComponent};
pub use grid::{GridAxes, ObservationMask};
pub use impairment::{generate_distortion, make_abf_codebook, AbfCodebook, DistortionParams, DistortionTensor};
pub use kron::{CgOptions, KronGpModel, Preconditioner};
pub use metrics::{bpa_rmse, nrmse, summarize, CalibrationReport, DenominatorMode, ReportSummary};
pub use num_complex::Complex64;
