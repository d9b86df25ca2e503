//! Planar rectangular arrays, steering vectors and beam-pattern tensors.
//!
//! Elements sit on a uniform lattice in the x–z plane, centred at the origin,
//! with coordinates in wavelengths at the reference frequency. A direction is
//! given by azimuth and elevation in degrees, both in `[0, 180]`, with unit
//! vector `(sin el · cos az, sin el · sin az, cos el)`. Broadside is therefore
//! `(az, el) = (90°, 90°)`, the +y axis, and the angle box covers the forward
//! half-space.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "geometry";

/// Uniform rectangular array. Element `n = iy * nx + ix` sits at
/// `((ix - (nx-1)/2) * spacing, 0, (iy - (ny-1)/2) * spacing)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    nx: usize,
    ny: usize,
    spacing: f64,
    positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Element positions in reference wavelengths.
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    fn x_coords(&self) -> Vec<f64> {
        lattice(self.nx, self.spacing)
    }

    fn z_coords(&self) -> Vec<f64> {
        lattice(self.ny, self.spacing)
    }
}

fn lattice(count: usize, spacing: f64) -> Vec<f64> {
    let centre = (count as f64 - 1.0) / 2.0;
    (0..count).map(|i| (i as f64 - centre) * spacing).collect()
}

/// Builds an `nx × ny` array with uniform `spacing` (in wavelengths).
pub fn make_uniform_rect_array(nx: usize, ny: usize, spacing: f64) -> Result<ArrayGeometry> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid(MODULE, format!("array dimensions must be positive, got {nx}×{ny}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(MODULE, format!("element spacing must be positive, got {spacing}")));
    }
    let xs = lattice(nx, spacing);
    let zs = lattice(ny, spacing);
    let positions = zs
        .iter()
        .flat_map(|&z| xs.iter().map(move |&x| [x, 0.0, z]))
        .collect();
    Ok(ArrayGeometry { nx, ny, spacing, positions })
}

/// Azimuth and elevation sample points, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
}

impl AngleGrid {
    pub fn new(azimuths: Vec<f64>, elevations: Vec<f64>) -> Result<Self> {
        check_axis("azimuth", &azimuths)?;
        check_axis("elevation", &elevations)?;
        Ok(Self { azimuths, elevations })
    }

    /// Both axes sampled from 0° to 180° inclusive with the given steps.
    pub fn uniform(azimuth_step: f64, elevation_step: f64) -> Result<Self> {
        Self::new(uniform_axis(azimuth_step)?, uniform_axis(elevation_step)?)
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }
}

fn uniform_axis(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 180.0) {
        return Err(Error::invalid(MODULE, format!("angle step must lie in (0, 180], got {step}")));
    }
    let count = (180.0 / step + 1e-9).floor() as usize + 1;
    let mut axis: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
    if *axis.last().unwrap() < 180.0 - 1e-9 {
        axis.push(180.0);
    }
    Ok(axis)
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::invalid(MODULE, format!("{name} axis is empty")));
    }
    for &a in axis {
        check_angle(name, a)?;
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(MODULE, format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

fn check_angle(name: &str, degrees: f64) -> Result<()> {
    if !(0.0..=180.0).contains(&degrees) {
        return Err(Error::invalid(MODULE, format!("{name} {degrees}° outside [0, 180]")));
    }
    Ok(())
}

/// Unit propagation direction for an (azimuth, elevation) pair in degrees.
pub fn unit_direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    let (az, el) = (azimuth.to_radians(), elevation.to_radians());
    [el.sin() * az.cos(), el.sin() * az.sin(), el.cos()]
}

/// Per-element plane-wave phasors `exp(j·2π·(f/f_ref)·⟨p_n, u⟩)`.
pub fn steering_vector(
    geom: &ArrayGeometry,
    azimuth: f64,
    elevation: f64,
    frequency: f64,
    reference_frequency: f64,
) -> Result<Vec<Complex64>> {
    check_angle("azimuth", azimuth)?;
    check_angle("elevation", elevation)?;
    check_frequencies(frequency, reference_frequency)?;
    let u = unit_direction(azimuth, elevation);
    let k = 2.0 * PI * frequency / reference_frequency;
    Ok(geom
        .positions
        .iter()
        .map(|p| Complex64::cis(k * (p[0] * u[0] + p[1] * u[1] + p[2] * u[2])))
        .collect())
}

fn check_frequencies(frequency: f64, reference_frequency: f64) -> Result<()> {
    if !(frequency > 0.0 && reference_frequency > 0.0) {
        return Err(Error::invalid(
            MODULE,
            format!("frequencies must be positive (f={frequency}, f_ref={reference_frequency})"),
        ));
    }
    Ok(())
}

/// Magnitude of the array response over azimuth × elevation × frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    values: Vec<f64>,
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
    frequencies: Vec<f64>,
}

impl BeamPattern {
    /// Wraps raw values laid out `[azimuth][elevation][frequency]`.
    pub fn from_values(
        values: Vec<f64>,
        azimuths: Vec<f64>,
        elevations: Vec<f64>,
        frequencies: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != azimuths.len() * elevations.len() * frequencies.len() {
            return Err(Error::invalid(MODULE, "pattern values do not match axis lengths"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(MODULE, "pattern values must be finite and non-negative"));
        }
        Ok(Self { values, azimuths, elevations, frequencies })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.azimuths.len(), self.elevations.len(), self.frequencies.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, ne, nf) = self.dims();
        self.values[(i * ne + j) * nf + k]
    }

    /// True when both patterns share identical axes.
    pub fn same_axes(&self, other: &BeamPattern) -> bool {
        self.azimuths == other.azimuths
            && self.elevations == other.elevations
            && self.frequencies == other.frequencies
    }
}

/// Evaluates `|w_kᴴ · a(az_i, el_j, f_k)|` for every angle pair and frequency.
///
/// `weights[k]` is the weight vector applied at `frequencies[k]`.
pub fn beam_pattern(
    geom: &ArrayGeometry,
    weights: &[Vec<Complex64>],
    angles: &AngleGrid,
    frequencies: &[f64],
    reference_frequency: f64,
) -> Result<BeamPattern> {
    if frequencies.is_empty() {
        return Err(Error::invalid(MODULE, "frequency list is empty"));
    }
    if weights.len() != frequencies.len() {
        return Err(Error::invalid(
            MODULE,
            format!("{} weight vectors for {} frequencies", weights.len(), frequencies.len()),
        ));
    }
    if let Some(w) = weights.iter().find(|w| w.len() != geom.len()) {
        return Err(Error::invalid(
            MODULE,
            format!("weight vector of length {} for {} elements", w.len(), geom.len()),
        ));
    }
    for &f in frequencies {
        check_frequencies(f, reference_frequency)?;
    }

    // The lattice factorises the steering vector into an x-phasor times a
    // z-phasor, so each direction costs nx + ny exponentials.
    let xs = geom.x_coords();
    let zs = geom.z_coords();
    let (nx, ny) = (geom.nx, geom.ny);
    let (na, ne, nf) = (angles.azimuths.len(), angles.elevations.len(), frequencies.len());
    let conj_weights: Vec<Vec<Complex64>> =
        weights.iter().map(|w| w.iter().map(|c| c.conj()).collect()).collect();

    let mut values = vec![0.0; na * ne * nf];
    let mut ax = vec![Complex64::new(0.0, 0.0); nx];
    let mut bz = vec![Complex64::new(0.0, 0.0); ny];
    for (i, &az) in angles.azimuths.iter().enumerate() {
        for (j, &el) in angles.elevations.iter().enumerate() {
            let u = unit_direction(az, el);
            for (k, &f) in frequencies.iter().enumerate() {
                let kw = 2.0 * PI * f / reference_frequency;
                for (a, &x) in ax.iter_mut().zip(&xs) {
                    *a = Complex64::cis(kw * x * u[0]);
                }
                for (b, &z) in bz.iter_mut().zip(&zs) {
                    *b = Complex64::cis(kw * z * u[2]);
                }
                let w = &conj_weights[k];
                let mut total = Complex64::new(0.0, 0.0);
                for (iy, b) in bz.iter().enumerate() {
                    let row = &w[iy * nx..(iy + 1) * nx];
                    let inner: Complex64 = row.iter().zip(&ax).map(|(w, a)| w * a).sum();
                    total += inner * b;
                }
                values[(i * ne + j) * nf + k] = total.norm();
            }
        }
    }
    Ok(BeamPattern {
        values,
        azimuths: angles.azimuths.clone(),
        elevations: angles.elevations.clone(),
        frequencies: frequencies.to_vec(),
    })
}

/// Magnitude to decibels, floored at -300 dB.
pub fn magnitude_db(magnitude: f64) -> f64 {
    20.0 * magnitude.max(1e-15).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_force_pattern(
        geom: &ArrayGeometry,
        w: &[Complex64],
        az: f64,
        el: f64,
        f: f64,
        f_ref: f64,
    ) -> f64 {
        let s = steering_vector(geom, az, el, f, f_ref).unwrap();
        w.iter().zip(&s).map(|(w, s)| w.conj() * s).sum::<Complex64>().norm()
    }

    #[test]
    fn single_element_sits_at_origin() {
        let g = make_uniform_rect_array(1, 1, 0.5).unwrap();
        assert_eq!(g.positions(), &[[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_by_two_lattice() {
        let g = make_uniform_rect_array(2, 2, 0.5).unwrap();
        assert_eq!(g.len(), 4);
        for p in g.positions() {
            assert_abs_diff_eq!(p[0].abs(), 0.25);
            assert_abs_diff_eq!(p[2].abs(), 0.25);
            assert_eq!(p[1], 0.0);
        }
        let centroid: f64 = g.positions().iter().map(|p| p[0] + p[2]).sum();
        assert_abs_diff_eq!(centroid, 0.0);
    }

    #[test]
    fn thirty_two_square_has_1024_elements() {
        assert_eq!(make_uniform_rect_array(32, 32, 0.5).unwrap().len(), 1024);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(make_uniform_rect_array(0, 4, 0.5).unwrap_err().is_invalid_argument());
        assert!(make_uniform_rect_array(4, 4, 0.0).unwrap_err().is_invalid_argument());
        assert!(make_uniform_rect_array(4, 4, -1.0).is_err());
    }

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = make_uniform_rect_array(4, 3, 0.5).unwrap();
        for s in steering_vector(&g, 90.0, 90.0, 3.6e9, 3.5e9).unwrap() {
            assert_abs_diff_eq!(s.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn endfire_phase_difference_is_pi() {
        let g = make_uniform_rect_array(2, 1, 0.5).unwrap();
        let s = steering_vector(&g, 0.0, 90.0, 1.0, 1.0).unwrap();
        let dphi = (s[1] / s[0]).arg();
        assert_abs_diff_eq!(dphi.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_range_angles() {
        let g = make_uniform_rect_array(2, 2, 0.5).unwrap();
        assert!(steering_vector(&g, -1.0, 90.0, 1.0, 1.0).is_err());
        assert!(steering_vector(&g, 90.0, 181.0, 1.0, 1.0).is_err());
        assert!(steering_vector(&g, 90.0, 90.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn isotropic_single_element_pattern() {
        let g = make_uniform_rect_array(1, 1, 0.5).unwrap();
        let angles = AngleGrid::uniform(30.0, 30.0).unwrap();
        let p = beam_pattern(&g, &[vec![Complex64::new(1.0, 0.0)]], &angles, &[1.0], 1.0).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_element_broadside_and_endfire() {
        let g = make_uniform_rect_array(2, 1, 0.5).unwrap();
        let angles = AngleGrid::new(vec![0.0, 90.0], vec![90.0]).unwrap();
        let w = vec![vec![Complex64::new(1.0, 0.0); 2]];
        let p = beam_pattern(&g, &w, &angles, &[1.0], 1.0).unwrap();
        assert_abs_diff_eq!(p.get(1, 0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.get(0, 0, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_pattern() {
        let g = make_uniform_rect_array(3, 2, 0.5).unwrap();
        let angles = AngleGrid::uniform(45.0, 45.0).unwrap();
        let w = vec![vec![Complex64::new(0.0, 0.0); 6]; 2];
        let p = beam_pattern(&g, &w, &angles, &[1.0, 1.1], 1.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_length_mismatch_is_rejected() {
        let g = make_uniform_rect_array(2, 2, 0.5).unwrap();
        let angles = AngleGrid::uniform(90.0, 90.0).unwrap();
        let w = vec![vec![Complex64::new(1.0, 0.0); 3]];
        assert!(beam_pattern(&g, &w, &angles, &[1.0], 1.0).unwrap_err().is_invalid_argument());
        assert!(beam_pattern(&g, &[], &angles, &[], 1.0).is_err());
    }

    #[test]
    fn symmetric_line_array_pattern_is_symmetric_about_broadside() {
        let g = make_uniform_rect_array(4, 1, 0.5).unwrap();
        let w: Vec<Complex64> = [0.5, 1.0, 1.0, 0.5].iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let angles = AngleGrid::uniform(5.0, 90.0).unwrap();
        let p = beam_pattern(&g, &[w], &angles, &[1.0], 1.0).unwrap();
        let na = p.azimuths().len();
        for i in 0..na {
            for j in 0..p.elevations().len() {
                assert_abs_diff_eq!(p.get(i, j, 0), p.get(na - 1 - i, j, 0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn separable_evaluation_matches_steering_vectors() {
        let g = make_uniform_rect_array(3, 4, 0.6).unwrap();
        let w: Vec<Complex64> =
            (0..12).map(|n| Complex64::from_polar(1.0 + 0.1 * n as f64, 0.3 * n as f64)).collect();
        let angles = AngleGrid::new(vec![10.0, 77.0, 140.0], vec![5.0, 90.0, 170.0]).unwrap();
        let freqs = [3.3e9, 3.7e9];
        let p = beam_pattern(&g, &[w.clone(), w.clone()], &angles, &freqs, 3.5e9).unwrap();
        for (i, &az) in angles.azimuths().iter().enumerate() {
            for (j, &el) in angles.elevations().iter().enumerate() {
                for (k, &f) in freqs.iter().enumerate() {
                    let expected = brute_force_pattern(&g, &w, az, el, f, 3.5e9);
                    assert_abs_diff_eq!(p.get(i, j, k), expected, epsilon = 1e-10);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn steering_entries_have_unit_modulus(az in 0.0..=180.0f64, el in 0.0..=180.0f64, f in 0.5..2.0f64) {
            let g = make_uniform_rect_array(3, 3, 0.5).unwrap();
            for s in steering_vector(&g, az, el, f, 1.0).unwrap() {
                prop_assert!((s.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn pattern_scales_with_weight_magnitude(
            scale in 0.1..5.0f64,
            phase in -PI..PI,
            seed_phases in proptest::collection::vec(-PI..PI, 6),
        ) {
            let g = make_uniform_rect_array(3, 2, 0.5).unwrap();
            let w: Vec<Complex64> = seed_phases.iter().map(|&p| Complex64::cis(p)).collect();
            let c = Complex64::from_polar(scale, phase);
            let wc: Vec<Complex64> = w.iter().map(|x| x * c).collect();
            let rot: Vec<Complex64> = w.iter().map(|x| x * Complex64::cis(phase)).collect();
            let angles = AngleGrid::uniform(30.0, 30.0).unwrap();
            let p = beam_pattern(&g, &[w], &angles, &[1.0], 1.0).unwrap();
            let pc = beam_pattern(&g, &[wc], &angles, &[1.0], 1.0).unwrap();
            let pr = beam_pattern(&g, &[rot], &angles, &[1.0], 1.0).unwrap();
            for ((a, b), r) in p.values().iter().zip(pc.values()).zip(pr.values()) {
                prop_assert!((a * scale - b).abs() < 1e-9);
                prop_assert!((a - r).abs() < 1e-9);
            }
        }
    }
}
