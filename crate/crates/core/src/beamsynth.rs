//! Desired beamforming weights: unit response toward the user, low response
//! over interference sectors.
//!
//! The weights are the linearly constrained minimum-variance solution
//! `w = R⁻¹a / (aᴴR⁻¹a)` with `R = ρI + mean(s·sᴴ)` over steering vectors
//! sampled across the sectors.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry};
use crate::impairment::AbfCodebook;

const MODULE: &str = "beamsynth";
const MIN_SECTOR_POINTS: usize = 4;
/// Relative Cholesky pivot below which `R` counts as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Angular box in degrees, bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
}

impl Sector {
    pub fn contains(&self, azimuth: f64, elevation: f64) -> bool {
        (self.azimuth.0..=self.azimuth.1).contains(&azimuth) && (self.elevation.0..=self.elevation.1).contains(&elevation)
    }
}

fn default_density() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    /// (azimuth, elevation) in degrees.
    pub ue_direction: (f64, f64),
    #[serde(default)]
    pub interference_sectors: Vec<Sector>,
    pub regularization: f64,
    /// Sector samples per degree along each axis.
    #[serde(default = "default_density")]
    pub density: f64,
}

impl SynthesisSpec {
    pub fn new(ue_direction: (f64, f64), interference_sectors: Vec<Sector>, regularization: f64) -> Self {
        Self { ue_direction, interference_sectors, regularization, density: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let in_box = |v: f64| (0.0..=180.0).contains(&v);
        let (az, el) = self.ue_direction;
        if !in_box(az) || !in_box(el) {
            return Err(Error::invalid(MODULE, format!("UE direction ({az}°, {el}°) outside [0, 180]²")));
        }
        for (i, s) in self.interference_sectors.iter().enumerate() {
            for (lo, hi) in [s.azimuth, s.elevation] {
                if !in_box(lo) || !in_box(hi) || lo > hi {
                    return Err(Error::invalid(MODULE, format!("sector {i} bounds [{lo}, {hi}] are not an interval in [0, 180]")));
                }
            }
            if s.contains(az, el) {
                return Err(Error::invalid(MODULE, format!("UE direction lies inside sector {i}")));
            }
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::invalid(MODULE, format!("regularization must be non-negative, got {}", self.regularization)));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::invalid(MODULE, format!("sector density must be positive, got {}", self.density)));
        }
        Ok(())
    }

    /// Sample directions over all sectors.
    pub fn sector_samples(&self) -> Vec<(f64, f64)> {
        self.interference_sectors.iter().flat_map(|s| sample_sector(s, self.density)).collect()
    }
}

fn axis_count(width: f64, density: f64) -> usize {
    if width == 0.0 {
        1
    } else {
        (width * density).round() as usize + 1
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn sample_sector(s: &Sector, density: f64) -> Vec<(f64, f64)> {
    let (wa, we) = (s.azimuth.1 - s.azimuth.0, s.elevation.1 - s.elevation.0);
    let mut na = axis_count(wa, density);
    let mut ne = axis_count(we, density);
    if na * ne < MIN_SECTOR_POINTS {
        match (wa > 0.0, we > 0.0) {
            (true, true) => {
                na = na.max(2);
                ne = ne.max(2);
            }
            (true, false) => na = MIN_SECTOR_POINTS,
            (false, true) => ne = MIN_SECTOR_POINTS,
            (false, false) => {}
        }
    }
    let azs = linspace(s.azimuth.0, s.azimuth.1, na);
    let els = linspace(s.elevation.0, s.elevation.1, ne);
    azs.iter().flat_map(|&a| els.iter().map(move |&e| (a, e))).collect()
}

/// Continuous LCMV weights at one frequency.
pub fn synthesize_weights(
    geom: &ArrayGeometry,
    frequency: f64,
    reference_frequency: f64,
    spec: &SynthesisSpec,
) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let n = geom.len();
    let a = steering_vector(geom, spec.ue_direction.0, spec.ue_direction.1, frequency, reference_frequency)?;
    let samples = spec.sector_samples();
    let mut r = DMatrix::<Complex64>::identity(n, n) * Complex64::from(spec.regularization);
    if !samples.is_empty() {
        let mut s = DMatrix::<Complex64>::zeros(n, samples.len());
        for (j, &(az, el)) in samples.iter().enumerate() {
            let v = steering_vector(geom, az, el, frequency, reference_frequency)?;
            s.set_column(j, &nalgebra::DVector::from_vec(v));
        }
        r.gemm(Complex64::from(1.0 / samples.len() as f64), &s, &s.adjoint(), Complex64::from(1.0));
    }
    let singular = || Error::numerical(MODULE, "interference covariance is singular; increase the regularization");
    let chol = r.cholesky().ok_or_else(singular)?;
    let pivots: Vec<f64> = chol.l_dirty().diagonal().iter().map(|v| v.norm_sqr()).collect();
    let top = pivots.iter().copied().fold(0.0, f64::max);
    if pivots.iter().any(|&v| v <= SINGULAR_PIVOT * top) {
        return Err(singular());
    }
    let av = nalgebra::DVector::from_vec(a);
    let x = chol.solve(&av);
    let denom = av.dotc(&x);
    if !(denom.norm() > 0.0 && denom.re.is_finite()) {
        return Err(Error::numerical(MODULE, "distortionless constraint cannot be normalised"));
    }
    Ok(x.iter().map(|v| v / denom.conj()).collect())
}

/// Scale putting the largest weight magnitude on the largest codebook gain.
pub fn abf_scale(weights: &[Complex64], codebook: &AbfCodebook) -> Result<f64> {
    let peak = weights.iter().map(|w| w.norm()).fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::invalid(MODULE, "weights are all zero"));
    }
    Ok(codebook.max_gain() / peak)
}

/// Nearest codebook entry for each weight after scaling by `scale`.
pub fn quantize_weights(weights: &[Complex64], codebook: &AbfCodebook, scale: f64) -> Vec<usize> {
    weights.iter().map(|w| codebook.nearest(w * scale)).collect()
}

/// Ideal ABF indices: the LCMV weights at `frequency`, scaled into the gain
/// range and rounded to the nearest codebook entry per channel.
pub fn synthesize_abf_weights(
    geom: &ArrayGeometry,
    frequency: f64,
    reference_frequency: f64,
    spec: &SynthesisSpec,
    codebook: &AbfCodebook,
) -> Result<Vec<usize>> {
    let w = synthesize_weights(geom, frequency, reference_frequency, spec)?;
    Ok(quantize_weights(&w, codebook, abf_scale(&w, codebook)?))
}
