//! Product grids and observation masks.
//!
//! Grid points are stored row-major: the last axis varies fastest. For the
//! calibration grid the axes are (frequency, channel, codebook index).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "gp-kronecker";

/// Sorted per-axis coordinates, each within [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    axes: Vec<Vec<f64>>,
}

impl GridAxes {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid(MODULE, "grid needs at least one axis"));
        }
        for (d, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::invalid(MODULE, format!("axis {d} is empty")));
            }
            if axis.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(MODULE, format!("axis {d} has coordinates outside [0, 1]")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(MODULE, format!("axis {d} is not strictly increasing")));
            }
        }
        Ok(Self { axes })
    }

    /// Evenly spaced coordinates from 0 to 1 on each axis; a length-one axis
    /// sits at 0.
    pub fn uniform(shape: &[usize]) -> Result<Self> {
        let axes = shape
            .iter()
            .map(|&n| match n {
                0 => Vec::new(),
                1 => vec![0.0],
                _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            })
            .collect();
        Self::new(axes)
    }

    /// Rescales physical coordinates affinely onto [0, 1].
    pub fn normalized(physical: &[Vec<f64>]) -> Result<Self> {
        let axes = physical
            .iter()
            .map(|axis| {
                let lo = axis.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = axis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if axis.len() == 1 {
                    vec![0.0]
                } else {
                    axis.iter().map(|v| (v - lo) / (hi - lo)).collect()
                }
            })
            .collect();
        Self::new(axes)
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &[f64] {
        &self.axes[d]
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for d in (0..self.axes.len()).rev() {
            let n = self.axes[d].len();
            out[d] = flat % n;
            flat /= n;
        }
        out
    }

    /// Coordinates of the grid point at a flat index.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.axes).map(|(&i, a)| a[i]).collect()
    }
}

/// Which grid points carry a measurement, as a sorted list of flat indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    len: usize,
    observed: Vec<usize>,
}

impl ObservationMask {
    /// From any list of distinct indices below `len`.
    pub fn from_indices(len: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(MODULE, "observation indices contain duplicates"));
        }
        if indices.last().is_some_and(|&i| i >= len) {
            return Err(Error::invalid(MODULE, "observation index outside the grid"));
        }
        Ok(Self { len, observed: indices })
    }

    pub fn from_bools(flags: &[bool]) -> Self {
        let observed = flags.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        Self { len: flags.len(), observed }
    }

    pub fn full(len: usize) -> Self {
        Self { len, observed: (0..len).collect() }
    }

    /// Grid size.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> usize {
        self.observed.len()
    }

    pub fn fraction(&self) -> f64 {
        self.observed.len() as f64 / self.len as f64
    }

    /// Sorted observed indices.
    pub fn indices(&self) -> &[usize] {
        &self.observed
    }

    pub fn contains(&self, index: usize) -> bool {
        self.observed.binary_search(&index).is_ok()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut out = vec![false; self.len];
        for &i in &self.observed {
            out[i] = true;
        }
        out
    }

    /// Unobserved indices, sorted.
    pub fn complement(&self) -> Vec<usize> {
        let flags = self.to_bools();
        (0..self.len).filter(|&i| !flags[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_axes_are_normalised() {
        let g = GridAxes::uniform(&[3, 1, 5]).unwrap();
        assert_eq!(g.axis(0), &[0.0, 0.5, 1.0]);
        assert_eq!(g.axis(1), &[0.0]);
        assert_eq!(g.len(), 15);
        assert!(GridAxes::uniform(&[3, 0]).is_err());
    }

    #[test]
    fn irregular_axes_are_allowed() {
        let g = GridAxes::new(vec![vec![0.0, 0.1, 0.9], vec![0.3, 1.0]]).unwrap();
        assert_eq!(g.shape(), vec![3, 2]);
        assert!(GridAxes::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(GridAxes::new(vec![vec![0.5, 0.2]]).is_err());
        assert!(GridAxes::new(vec![vec![1.5]]).is_err());
    }

    #[test]
    fn normalisation_from_physical_units() {
        let g = GridAxes::normalized(&[vec![3.4e9, 3.5e9, 3.6e9]]).unwrap();
        assert!((g.axis(0)[1] - 0.5).abs() < 1e-12);
        assert_eq!(g.axis(0)[2], 1.0);
    }

    #[test]
    fn index_round_trip_is_row_major() {
        let g = GridAxes::uniform(&[2, 3, 4]).unwrap();
        assert_eq!(g.flat_index(&[1, 2, 3]), 23);
        assert_eq!(g.flat_index(&[0, 0, 1]), 1);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.point(4), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn mask_behaviour() {
        let m = ObservationMask::from_indices(6, vec![4, 1]).unwrap();
        assert_eq!(m.indices(), &[1, 4]);
        assert!(m.contains(4) && !m.contains(2));
        assert_eq!(m.complement(), vec![0, 2, 3, 5]);
        assert_eq!(ObservationMask::from_bools(&m.to_bools()), m);
        assert!(ObservationMask::from_indices(3, vec![1, 1]).is_err());
        assert!(ObservationMask::from_indices(3, vec![3]).is_err());
        assert_eq!(ObservationMask::full(4).fraction(), 1.0);
    }
}
