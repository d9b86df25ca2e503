//! Beam-pattern accuracy, surface NRMSE and per-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BeamPattern;

const MODULE: &str = "metrics";

/// Denominator of the beam-pattern RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// `I + J + K`.
    #[default]
    PaperSum,
    /// `I · J · K`, the usual mean over cells.
    CellCount,
}

impl DenominatorMode {
    pub fn value(self, dims: (usize, usize, usize)) -> f64 {
        let (i, j, k) = dims;
        match self {
            DenominatorMode::PaperSum => (i + j + k) as f64,
            DenominatorMode::CellCount => (i * j * k) as f64,
        }
    }
}

/// `sqrt(Σ (P − P̂)² / D)` over azimuth × elevation × frequency.
pub fn bpa_rmse(p: &BeamPattern, q: &BeamPattern, mode: DenominatorMode) -> Result<f64> {
    if !p.same_axes(q) {
        return Err(Error::invalid(MODULE, "beam patterns have different axes"));
    }
    let sum: f64 = p.values().iter().zip(q.values()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sum / mode.value(p.dims())).sqrt())
}

/// RMSE divided by the range of `truth`.
pub fn nrmse(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::invalid(MODULE, format!("NRMSE needs equal non-empty inputs, got {} and {}", truth.len(), estimate.len())));
    }
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::DegenerateNormalization);
    }
    let mse = truth.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// Metrics of one (seed, fraction) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub seed: u64,
    pub fraction: f64,
    /// BPA of the uncalibrated pattern in the selected denominator mode.
    pub bpa_distorted: f64,
    pub bpa_calibrated: f64,
    /// Same quantities in the other denominator mode.
    pub bpa_distorted_alt: f64,
    pub bpa_calibrated_alt: f64,
    pub improvement_ratio: f64,
    pub gp_nrmse_re: f64,
    pub gp_nrmse_im: f64,
}

impl CalibrationReport {
    /// Ratio `bpa_distorted / bpa_calibrated`; 1 when both vanish and
    /// infinite when only the calibrated error does.
    pub fn ratio(bpa_distorted: f64, bpa_calibrated: f64) -> f64 {
        if bpa_calibrated > 0.0 {
            bpa_distorted / bpa_calibrated
        } else if bpa_distorted > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }

    pub fn gp_nrmse(&self) -> f64 {
        0.5 * (self.gp_nrmse_re + self.gp_nrmse_im)
    }
}

/// Order statistics of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(MODULE, "cannot aggregate zero values"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        Ok(Self { median: quantile(&v, 0.5), q1, q3, iqr: q3 - q1, min: v[0], max: v[v.len() - 1] })
    }
}

/// Aggregates over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: usize,
    pub bpa_distorted: Aggregate,
    pub bpa_calibrated: Aggregate,
    pub bpa_distorted_alt: Aggregate,
    pub bpa_calibrated_alt: Aggregate,
    pub improvement_ratio: Aggregate,
    pub gp_nrmse_re: Aggregate,
    pub gp_nrmse_im: Aggregate,
    pub gp_nrmse: Aggregate,
    /// Share of runs whose improvement ratio exceeds 1.
    pub improved_fraction: f64,
}

/// Median, quartiles and IQR of every metric.
pub fn summarize(reports: &[CalibrationReport]) -> Result<ReportSummary> {
    if reports.is_empty() {
        return Err(Error::invalid(MODULE, "no reports to summarise"));
    }
    let agg = |f: fn(&CalibrationReport) -> f64| Aggregate::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(ReportSummary {
        runs: reports.len(),
        bpa_distorted: agg(|r| r.bpa_distorted)?,
        bpa_calibrated: agg(|r| r.bpa_calibrated)?,
        bpa_distorted_alt: agg(|r| r.bpa_distorted_alt)?,
        bpa_calibrated_alt: agg(|r| r.bpa_calibrated_alt)?,
        improvement_ratio: agg(|r| r.improvement_ratio)?,
        gp_nrmse_re: agg(|r| r.gp_nrmse_re)?,
        gp_nrmse_im: agg(|r| r.gp_nrmse_im)?,
        gp_nrmse: agg(CalibrationReport::gp_nrmse)?,
        improved_fraction: reports.iter().filter(|r| r.improvement_ratio > 1.0).count() as f64 / reports.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pattern(dims: (usize, usize, usize), values: Vec<f64>) -> BeamPattern {
        let axis = |n: usize| (0..n).map(|i| i as f64).collect::<Vec<_>>();
        BeamPattern::from_values(values, axis(dims.0), axis(dims.1), (1..=dims.2).map(|i| i as f64).collect()).unwrap()
    }

    fn report(seed: u64, ratio: f64) -> CalibrationReport {
        CalibrationReport {
            seed,
            fraction: 0.2,
            bpa_distorted: ratio,
            bpa_calibrated: 1.0,
            bpa_distorted_alt: ratio / 2.0,
            bpa_calibrated_alt: 0.5,
            improvement_ratio: ratio,
            gp_nrmse_re: 0.01,
            gp_nrmse_im: 0.03,
        }
    }

    #[test]
    fn identical_patterns_have_zero_error() {
        let p = pattern((2, 3, 4), (0..24).map(f64::from).collect());
        assert_eq!(bpa_rmse(&p, &p, DenominatorMode::PaperSum).unwrap(), 0.0);
    }

    #[test]
    fn single_unit_cell_in_two_cube() {
        let p = pattern((2, 2, 2), vec![0.0; 8]);
        let mut v = vec![0.0; 8];
        v[5] = 1.0;
        let q = pattern((2, 2, 2), v);
        assert_abs_diff_eq!(bpa_rmse(&p, &q, DenominatorMode::PaperSum).unwrap(), (1.0f64 / 6.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(bpa_rmse(&p, &q, DenominatorMode::CellCount).unwrap(), (1.0f64 / 8.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn constant_offset_formula() {
        let dims = (3, 4, 5);
        let delta = 0.3;
        let p = pattern(dims, vec![1.0; 60]);
        let q = pattern(dims, vec![1.0 + delta; 60]);
        let want = (60.0 * delta * delta / 12.0f64).sqrt();
        assert_abs_diff_eq!(bpa_rmse(&p, &q, DenominatorMode::PaperSum).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn axis_mismatch_is_rejected() {
        let p = pattern((2, 2, 2), vec![0.0; 8]);
        let q = pattern((2, 2, 1), vec![0.0; 4]);
        assert!(bpa_rmse(&p, &q, DenominatorMode::PaperSum).unwrap_err().is_invalid_argument());
    }

    #[test]
    fn nrmse_examples() {
        let truth: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        assert_eq!(nrmse(&truth, &truth).unwrap(), 0.0);
        let off: Vec<f64> = truth.iter().map(|t| t + 0.01).collect();
        assert_abs_diff_eq!(nrmse(&truth, &off).unwrap(), 0.01, epsilon = 1e-12);
        let t10: Vec<f64> = truth.iter().map(|t| 10.0 * t).collect();
        let o10: Vec<f64> = off.iter().map(|t| 10.0 * t).collect();
        assert_abs_diff_eq!(nrmse(&t10, &o10).unwrap(), nrmse(&truth, &off).unwrap(), epsilon = 1e-12);
        assert_eq!(nrmse(&[2.0, 2.0], &[1.0, 2.0]).unwrap_err(), Error::DegenerateNormalization);
    }

    #[test]
    fn summary_of_one_report_is_that_report() {
        let s = summarize(&[report(0, 2.5)]).unwrap();
        assert_eq!(s.improvement_ratio.median, 2.5);
        assert_eq!(s.improvement_ratio.iqr, 0.0);
        assert_eq!(s.gp_nrmse.median, 0.02);
    }

    #[test]
    fn summary_of_two_reports_averages() {
        let s = summarize(&[report(0, 2.0), report(1, 5.0)]).unwrap();
        assert_eq!(s.improvement_ratio.median, 3.5);
        assert_eq!(s.improved_fraction, 1.0);
    }

    #[test]
    fn median_of_101_is_51st_value() {
        let reports: Vec<CalibrationReport> = (0..101).rev().map(|i| report(i, i as f64)).collect();
        let s = summarize(&reports).unwrap();
        assert_eq!(s.improvement_ratio.median, 50.0);
        assert_eq!(s.improvement_ratio.q1, 25.0);
        assert_eq!(s.improvement_ratio.q3, 75.0);
        assert!(summarize(&[]).is_err());
    }

    type Dims = (usize, usize, usize);

    fn dims_and_values() -> impl Strategy<Value = (Dims, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|d| {
            let n = d.0 * d.1 * d.2;
            (
                Just(d),
                prop::collection::vec(0.0..5.0f64, n),
                prop::collection::vec(0.0..5.0f64, n),
                prop::collection::vec(0.0..5.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn bpa_is_a_metric((dims, a, b, c) in dims_and_values()) {
            let (pa, pb, pc) = (pattern(dims, a), pattern(dims, b), pattern(dims, c));
            for mode in [DenominatorMode::PaperSum, DenominatorMode::CellCount] {
                let ab = bpa_rmse(&pa, &pb, mode).unwrap();
                let ba = bpa_rmse(&pb, &pa, mode).unwrap();
                let bc = bpa_rmse(&pb, &pc, mode).unwrap();
                let ac = bpa_rmse(&pa, &pc, mode).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ac <= ab + bc + 1e-12);
                prop_assert_eq!(bpa_rmse(&pa, &pa, mode).unwrap(), 0.0);
                prop_assert!(pa.values() == pb.values() || ab > 0.0);
            }
        }

        #[test]
        fn denominator_modes_differ_by_known_factor((dims, a, b, _c) in dims_and_values()) {
            let (pa, pb) = (pattern(dims, a), pattern(dims, b));
            let sum = bpa_rmse(&pa, &pb, DenominatorMode::PaperSum).unwrap();
            let cells = bpa_rmse(&pa, &pb, DenominatorMode::CellCount).unwrap();
            let factor = (DenominatorMode::CellCount.value(dims) / DenominatorMode::PaperSum.value(dims)).sqrt();
            prop_assert!((sum - cells * factor).abs() <= 1e-12 * (1.0 + sum));
        }
    }
}
