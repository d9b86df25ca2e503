//! Simulated RF impairments and the discrete ABF weight codebook.
//!
//! The impairment at grid point (f, n, z) is one complex multiplicative factor
//! `d = (1 + field_re) + j·field_im`, where both fields are smooth random
//! Fourier series over the normalised grid coordinates. The distorted weight
//! is the commanded weight times `d`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridAxes;
use crate::kron::kron_matvec;

const MODULE: &str = "impairment";

/// All gain × phase combinations of a `bits`-bit attenuator and phase shifter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbfCodebook {
    bits: u32,
    gains: Vec<f64>,
    phases: Vec<f64>,
    weights: Vec<Complex64>,
}

/// Builds the codebook. Index `z = gain_index·2^bits + phase_index`.
pub fn make_abf_codebook(bits: u32, gain_range: (f64, f64)) -> Result<AbfCodebook> {
    let (g_min, g_max) = gain_range;
    if !(1..=10).contains(&bits) {
        return Err(Error::invalid(MODULE, format!("codebook bits must lie in 1..=10, got {bits}")));
    }
    if !(g_min > 0.0 && g_max > g_min && g_max.is_finite()) {
        return Err(Error::invalid(MODULE, format!("gain range must satisfy 0 < g_min < g_max, got [{g_min}, {g_max}]")));
    }
    let levels = 1usize << bits;
    let gains: Vec<f64> = (0..levels).map(|i| g_min + (g_max - g_min) * i as f64 / (levels - 1) as f64).collect();
    let phases: Vec<f64> = (0..levels).map(|i| 2.0 * PI * i as f64 / levels as f64).collect();
    let weights = gains.iter().flat_map(|&g| phases.iter().map(move |&p| Complex64::from_polar(g, p))).collect();
    Ok(AbfCodebook { bits, gains, phases, weights })
}

impl AbfCodebook {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, z: usize) -> Complex64 {
        self.weights[z]
    }

    pub fn max_gain(&self) -> f64 {
        *self.gains.last().expect("codebook has gains")
    }

    pub fn index(&self, gain_index: usize, phase_index: usize) -> usize {
        gain_index * self.phases.len() + phase_index
    }

    pub fn split_index(&self, z: usize) -> (usize, usize) {
        (z / self.phases.len(), z % self.phases.len())
    }

    /// Closest codebook weight in the complex plane; lowest index on ties.
    pub fn nearest(&self, w: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (z, c) in self.weights.iter().enumerate() {
            let d = (w - c).norm_sqr();
            if d < best_d {
                best_d = d;
                best = z;
            }
        }
        best
    }
}

/// Random finite Fourier series on `[0, 1]³`.
///
/// Per axis the basis is `1, cos(2πx), sin(2πx), …, cos(2πmx), sin(2πmx)`;
/// the field is a scaled sum over all products of one basis function per axis
/// with i.i.d. standard normal coefficients. The scale makes the standard
/// deviation of the field over the unit cube equal to `amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothField {
    cutoffs: [usize; 3],
    amplitude: f64,
    seed: u64,
    coefficients: Vec<f64>,
    scale: f64,
}

fn basis_len(cutoff: usize) -> usize {
    2 * cutoff + 1
}

/// Wavenumber of basis slot `t`.
fn wavenumber(t: usize) -> usize {
    t.div_ceil(2)
}

fn basis_value(t: usize, x: f64) -> f64 {
    match t {
        0 => 1.0,
        _ if t % 2 == 1 => (2.0 * PI * wavenumber(t) as f64 * x).cos(),
        _ => (2.0 * PI * wavenumber(t) as f64 * x).sin(),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a field; the same arguments always give the same field.
pub fn smooth_random_field_3d(seed: u64, cutoffs: [usize; 3], amplitude: f64) -> Result<SmoothField> {
    smooth_field_from_stream(seed, 0, cutoffs, amplitude)
}

fn smooth_field_from_stream(seed: u64, stream: u64, cutoffs: [usize; 3], amplitude: f64) -> Result<SmoothField> {
    check_field_args(cutoffs, amplitude)?;
    let n: usize = cutoffs.iter().map(|&m| basis_len(m)).product();
    let mut rng = rng_for(seed, stream);
    let coefficients = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    SmoothField::from_coefficients(seed, cutoffs, amplitude, coefficients)
}

fn check_field_args(cutoffs: [usize; 3], amplitude: f64) -> Result<()> {
    if cutoffs.contains(&0) {
        return Err(Error::invalid(MODULE, format!("mode cutoffs must be at least 1, got {cutoffs:?}")));
    }
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::invalid(MODULE, format!("field amplitude must be positive, got {amplitude}")));
    }
    Ok(())
}

impl SmoothField {
    /// Field with given raw coefficients, row-major over the three axes'
    /// basis slots.
    pub fn from_coefficients(seed: u64, cutoffs: [usize; 3], amplitude: f64, coefficients: Vec<f64>) -> Result<Self> {
        check_field_args(cutoffs, amplitude)?;
        let dims = cutoffs.map(basis_len);
        if coefficients.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(MODULE, "coefficient count does not match cutoffs"));
        }
        // Continuous variance over the unit cube: the basis is orthogonal with
        // mean square 1 for the constant and 1/2 for each trigonometric term.
        let mut variance = 0.0;
        for (i, c) in coefficients.iter().enumerate() {
            if i == 0 {
                continue;
            }
            let idx = [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]];
            let w: f64 = idx.iter().map(|&t| if t == 0 { 1.0 } else { 0.5 }).product();
            variance += c * c * w;
        }
        let scale = if variance > 0.0 {
            amplitude / variance.sqrt()
        } else if coefficients[0] != 0.0 {
            amplitude / coefficients[0].abs()
        } else {
            0.0
        };
        Ok(Self { cutoffs, amplitude, seed, coefficients, scale })
    }

    pub fn cutoffs(&self) -> [usize; 3] {
        self.cutoffs
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Value at one point of the unit cube.
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let b: Vec<Vec<f64>> = (0..3).map(|d| (0..basis_len(self.cutoffs[d])).map(|t| basis_value(t, x[d])).collect()).collect();
        let (n1, n2) = (b[1].len(), b[2].len());
        let mut acc = 0.0;
        for (i, c) in self.coefficients.iter().enumerate() {
            acc += c * b[0][i / (n1 * n2)] * b[1][(i / n2) % n1] * b[2][i % n2];
        }
        self.scale * acc
    }

    /// Values on a product grid, row-major.
    pub fn eval_grid(&self, axes: &GridAxes) -> Result<Vec<f64>> {
        if axes.ndim() != 3 {
            return Err(Error::invalid(MODULE, "smooth fields are three-dimensional"));
        }
        let factors: Vec<DMatrix<f64>> = (0..3)
            .map(|d| {
                let a = axes.axis(d);
                DMatrix::from_fn(a.len(), basis_len(self.cutoffs[d]), |i, t| basis_value(t, a[i]))
            })
            .collect();
        let mut out = kron_matvec(&factors, &self.coefficients)?;
        for v in out.iter_mut() {
            *v *= self.scale;
        }
        Ok(out)
    }

    /// Upper bound on the Euclidean Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        self.derivative_bound(|k| 2.0 * PI * (k.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt())
    }

    /// Upper bound on `|∂²f/∂x_d²|` for every axis `d`.
    pub fn second_derivative_bound(&self) -> f64 {
        self.derivative_bound(|k| k.iter().map(|&v| (2.0 * PI * v as f64).powi(2)).fold(0.0, f64::max))
    }

    fn derivative_bound(&self, per_term: impl Fn([usize; 3]) -> f64) -> f64 {
        let dims = self.cutoffs.map(basis_len);
        self.scale
            * self
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let k = [wavenumber(i / (dims[1] * dims[2])), wavenumber((i / dims[2]) % dims[1]), wavenumber(i % dims[2])];
                    c.abs() * per_term(k)
                })
                .sum::<f64>()
    }
}

/// Distortion factors over the F × N × Z grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionTensor {
    frequencies_hz: Vec<f64>,
    channels: usize,
    codebook_size: usize,
    values: Vec<Complex64>,
}

impl DistortionTensor {
    pub fn new(frequencies_hz: Vec<f64>, channels: usize, codebook_size: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != frequencies_hz.len() * channels * codebook_size || values.is_empty() {
            return Err(Error::invalid(MODULE, "distortion values do not match the grid shape"));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid(MODULE, "distortion values must be finite"));
        }
        Ok(Self { frequencies_hz, channels, codebook_size, values })
    }

    /// `(F, N, Z)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.frequencies_hz.len(), self.channels, self.codebook_size]
    }

    pub fn frequencies_hz(&self) -> &[f64] {
        &self.frequencies_hz
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn flat_index(&self, f: usize, n: usize, z: usize) -> usize {
        (f * self.channels + n) * self.codebook_size + z
    }

    pub fn get(&self, f: usize, n: usize, z: usize) -> Complex64 {
        self.values[self.flat_index(f, n, z)]
    }

    /// The F × N slice at codebook index `z`, row-major.
    pub fn slice_z(&self, z: usize) -> Vec<Complex64> {
        (0..self.frequencies_hz.len())
            .flat_map(|f| (0..self.channels).map(move |n| (f, n)))
            .map(|(f, n)| self.get(f, n, z))
            .collect()
    }

    /// Largest `|d − 1|` over the grid.
    pub fn max_deviation(&self) -> f64 {
        self.values.iter().map(|d| (d - 1.0).norm()).fold(0.0, f64::max)
    }
}

/// Settings for [`generate_distortion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub re_amplitude: f64,
    pub im_amplitude: f64,
    /// Fourier mode cutoffs along (F, N, Z).
    pub cutoffs: [usize; 3],
}

/// Draws `d(f, n, z) = (1 + field_re) + j·field_im` on the grid. `axes` holds
/// the normalised (F, N, Z) coordinates; `frequencies_hz` labels the F axis.
/// A zero amplitude switches the corresponding field off.
pub fn generate_distortion(seed: u64, axes: &GridAxes, frequencies_hz: &[f64], params: &DistortionParams) -> Result<DistortionTensor> {
    if axes.ndim() != 3 {
        return Err(Error::invalid(MODULE, "distortion grid must have three axes"));
    }
    let shape = axes.shape();
    if frequencies_hz.len() != shape[0] {
        return Err(Error::invalid(MODULE, "frequency labels do not match the F axis"));
    }
    let component = |stream: u64, amplitude: f64| -> Result<Vec<f64>> {
        if amplitude < 0.0 || !amplitude.is_finite() {
            return Err(Error::invalid(MODULE, format!("distortion amplitude must be non-negative, got {amplitude}")));
        }
        if amplitude == 0.0 {
            return Ok(vec![0.0; axes.len()]);
        }
        smooth_field_from_stream(seed, stream, params.cutoffs, amplitude)?.eval_grid(axes)
    };
    let re = component(1, params.re_amplitude)?;
    let im = component(2, params.im_amplitude)?;
    let values = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(1.0 + a, b)).collect();
    DistortionTensor::new(frequencies_hz.to_vec(), shape[1], shape[2], values)
}

/// Element-wise `w·d`.
pub fn distort_weights(weights: &[Complex64], distortion: &[Complex64]) -> Result<Vec<Complex64>> {
    if weights.len() != distortion.len() {
        return Err(Error::invalid(MODULE, format!("{} weights but {} distortion factors", weights.len(), distortion.len())));
    }
    Ok(weights.iter().zip(distortion).map(|(w, d)| w * d).collect())
}
