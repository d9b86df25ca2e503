//! GP regression on a product grid with missing observations.
//!
//! The prior covariance is `K = K_1 ⊗ … ⊗ K_D`, factored once per axis as
//! `K ≈ L·Lᵀ` with `L = (⊗Q_d)·diag(√Λ)`. Observed grid points are picked out
//! by a selection operator `S`. Rather than running conjugate gradients on
//! `S·K·Sᵀ + σ²·I` directly, which is hopelessly conditioned for small noise,
//! we solve the equivalent whitened system
//!
//! ```text
//! (I + Lᵀ·Sᵀ·S·L / σ²)·ε = Lᵀ·Sᵀ·y / σ²
//! ```
//!
//! with a diagonal preconditioner built from the observed fraction. The
//! representer weights are recovered as `u = (y − S·L·ε)/σ²` and the posterior
//! mean on the full grid is simply `L·ε`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matvec::{kron_apply, kron_eigendecomposition, AxisEigen, MatView};
use crate::error::{Error, Result};
use crate::gp::KernelSpec;
use crate::grid::{GridAxes, ObservationMask};

const MODULE: &str = "gp-kronecker";
const MAX_ROLLBACKS: usize = 5;

/// Preconditioner for the whitened system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    /// `1 + p·λ/σ²` with `p` the observed fraction: exact on a full grid.
    #[default]
    Diagonal,
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgOptions {
    /// Relative residual `‖(S·K·Sᵀ+σ²I)·u − y‖ / ‖y‖` to reach.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10·√m_grid`.
    pub max_iters: Option<usize>,
    /// Per-axis eigenvalues below this fraction of the axis maximum are
    /// dropped from the factorisation.
    pub eigen_truncation: f64,
    #[serde(default)]
    pub preconditioner: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iters: None, eigen_truncation: 1e-12, preconditioner: Preconditioner::default() }
    }
}

impl CgOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::invalid(MODULE, format!("CG tolerance must lie in (0, 1), got {}", self.tolerance)));
        }
        if !(0.0..1.0).contains(&self.eigen_truncation) {
            return Err(Error::invalid(MODULE, "eigen truncation must lie in [0, 1)"));
        }
        if self.max_iters == Some(0) {
            return Err(Error::invalid(MODULE, "CG needs at least one iteration"));
        }
        Ok(())
    }
}

/// What the solver did on the last fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgDiagnostics {
    pub iterations: usize,
    /// Final relative residual of the original (unwhitened) system.
    pub residual: f64,
    /// Restarts forced by round-off growth of the smoothed residual.
    pub rollbacks: usize,
    /// Iterations where the smoothed residual grew by more than 10 %.
    pub monotonicity_violations: usize,
    /// Residual bound after each iteration.
    pub residual_history: Vec<f64>,
    /// Number of retained product eigenvalues.
    pub rank: usize,
}

/// Eigenbasis of the Kronecker prior, truncated per axis.
#[derive(Debug, Clone)]
struct KronBasis {
    eig: Vec<AxisEigen>,
    sqrt_lambda: Vec<f64>,
    lambda_max: f64,
    grams: Vec<DMatrix<f64>>,
}

impl KronBasis {
    fn new(axes: &GridAxes, kernels: &[KernelSpec], truncation: f64) -> Result<Self> {
        let grams: Vec<DMatrix<f64>> = kernels.iter().zip(axes.axes()).map(|(k, a)| k.gram_1d(a)).collect();
        let full = kron_eigendecomposition(&grams)?;
        let mut eig = Vec::with_capacity(full.len());
        for e in full {
            let top = e.values[0].max(0.0);
            if top <= 0.0 || !top.is_finite() {
                return Err(Error::numerical(MODULE, "axis covariance has no positive eigenvalue"));
            }
            let keep = e.values.iter().take_while(|&&v| v > truncation * top).count().max(1);
            let values: Vec<f64> = e.values[..keep].to_vec();
            let vectors = e.vectors.columns(0, keep).into_owned();
            eig.push(AxisEigen { values, vectors });
        }
        let mut sqrt_lambda = vec![1.0];
        for e in &eig {
            sqrt_lambda = sqrt_lambda.iter().flat_map(|&a| e.values.iter().map(move |&b| a * b.sqrt())).collect();
        }
        let lambda_max = eig.iter().map(|e| e.values[0]).product();
        Ok(Self { eig, sqrt_lambda, lambda_max, grams })
    }

    fn rank(&self) -> usize {
        self.sqrt_lambda.len()
    }

    /// `L·x`: rank space to grid.
    fn apply_l(&self, x: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = x.iter().zip(&self.sqrt_lambda).map(|(a, b)| a * b).collect();
        let ops: Vec<MatView> = self.eig.iter().map(|e| MatView::of(&e.vectors)).collect();
        kron_apply(&ops, &scaled)
    }

    /// `Lᵀ·g`: grid to rank space.
    fn apply_lt(&self, g: &[f64]) -> Vec<f64> {
        let ops: Vec<MatView> = self.eig.iter().map(|e| MatView::transposed(&e.vectors)).collect();
        let mut out = kron_apply(&ops, g);
        for (o, s) in out.iter_mut().zip(&self.sqrt_lambda) {
            *o *= s;
        }
        out
    }

    /// Row `i` of `L`.
    fn l_row(&self, multi: &[usize]) -> Vec<f64> {
        let mut row = vec![1.0];
        for (e, &i) in self.eig.iter().zip(multi) {
            let r = e.vectors.row(i);
            row = row.iter().flat_map(|&a| r.iter().map(move |&b| a * b)).collect();
        }
        for (v, s) in row.iter_mut().zip(&self.sqrt_lambda) {
            *v *= s;
        }
        row
    }
}

#[derive(Debug, Clone)]
struct FitState {
    mask: ObservationMask,
    targets: Vec<f64>,
    whitened: Vec<f64>,
    diagnostics: CgDiagnostics,
}

/// Terms of the approximate log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KronLmlTerms {
    /// `yᵀ(S·K·Sᵀ + σ²I)⁻¹y`.
    pub data_fit: f64,
    /// Approximate `log det(S·K·Sᵀ + σ²I)`.
    pub log_det: f64,
    pub value: f64,
}

/// GP on a product grid, one 1-D kernel per axis.
#[derive(Debug, Clone)]
pub struct KronGpModel {
    axes: GridAxes,
    kernels: Vec<KernelSpec>,
    noise_variance: f64,
    options: CgOptions,
    basis: KronBasis,
    fit: Option<FitState>,
}

/// Serialisable snapshot of a fitted model. The eigendecomposition is
/// recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KronGpState {
    pub axes: GridAxes,
    pub kernels: Vec<KernelSpec>,
    pub noise_variance: f64,
    pub options: CgOptions,
    pub observed: Vec<usize>,
    pub targets: Vec<f64>,
    pub whitened: Vec<f64>,
    pub diagnostics: CgDiagnostics,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct PcgOutcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
    rollbacks: usize,
    violations: usize,
    history: Vec<f64>,
}

impl KronGpModel {
    /// Unfitted model: validates inputs and factorises the per-axis Gram
    /// matrices.
    pub fn new(axes: GridAxes, kernels: Vec<KernelSpec>, noise_variance: f64, options: CgOptions) -> Result<Self> {
        if kernels.len() != axes.ndim() {
            return Err(Error::invalid(MODULE, format!("{} kernels for {} axes", kernels.len(), axes.ndim())));
        }
        for k in &kernels {
            k.validate()?;
            k.check_input_dim(1)?;
        }
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid(MODULE, format!("noise variance must be positive, got {noise_variance}")));
        }
        options.validate()?;
        let basis = KronBasis::new(&axes, &kernels, options.eigen_truncation)?;
        Ok(Self { axes, kernels, noise_variance, options, basis, fit: None })
    }

    pub fn axes(&self) -> &GridAxes {
        &self.axes
    }

    pub fn kernels(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn options(&self) -> &CgOptions {
        &self.options
    }

    /// Per-axis Gram factors `K_d`.
    pub fn gram_factors(&self) -> &[DMatrix<f64>] {
        &self.basis.grams
    }

    pub fn is_fitted(&self) -> bool {
        self.fit.is_some()
    }

    fn state(&self) -> Result<&FitState> {
        self.fit.as_ref().ok_or_else(|| Error::State { module: MODULE, message: "model has not been fitted".into() })
    }

    pub fn diagnostics(&self) -> Result<&CgDiagnostics> {
        Ok(&self.state()?.diagnostics)
    }

    pub fn mask(&self) -> Result<&ObservationMask> {
        Ok(&self.state()?.mask)
    }

    pub fn targets(&self) -> Result<&[f64]> {
        Ok(&self.state()?.targets)
    }

    fn max_iters(&self) -> usize {
        self.options.max_iters.unwrap_or_else(|| ((10.0 * (self.axes.len() as f64).sqrt()).ceil() as usize).max(1))
    }

    fn masked(&self, mask: &ObservationMask, g: &mut [f64]) {
        let mut next = mask.indices().iter().peekable();
        for (i, v) in g.iter_mut().enumerate() {
            if next.peek() == Some(&&i) {
                next.next();
            } else {
                *v = 0.0;
            }
        }
    }

    fn scatter(&self, mask: &ObservationMask, values: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.axes.len()];
        for (&i, &v) in mask.indices().iter().zip(values) {
            g[i] = v;
        }
        g
    }

    /// `B·x = x + Lᵀ·Sᵀ·S·L·x / σ²`.
    fn apply_b(&self, mask: &ObservationMask, x: &[f64]) -> Vec<f64> {
        let mut g = self.basis.apply_l(x);
        self.masked(mask, &mut g);
        let mut out = self.basis.apply_lt(&g);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + *o / self.noise_variance;
        }
        out
    }

    fn preconditioner(&self, mask: &ObservationMask) -> Vec<f64> {
        if self.options.preconditioner == Preconditioner::None {
            return vec![1.0; self.basis.rank()];
        }
        let p = mask.fraction();
        self.basis.sqrt_lambda.iter().map(|s| 1.0 + p * s * s / self.noise_variance).collect()
    }

    /// Preconditioned CG on `B·x = b`, stopping once `‖b − B·x‖ ≤ threshold`.
    ///
    /// Plain CG residuals oscillate, so the iterate reported is the
    /// minimal-residual smoothing of the CG sequence, whose residual norm is
    /// non-increasing by construction. A smoothed residual that still grows by
    /// more than 10 % (round-off) triggers a restart from the smoothed iterate.
    fn pcg(&self, mask: &ObservationMask, b: &[f64], x0: Vec<f64>, threshold: f64, max_iters: usize) -> PcgOutcome {
        let diag = self.preconditioner(mask);
        let n = b.len();
        let mut x = x0;
        let bx = self.apply_b(mask, &x);
        let mut r: Vec<f64> = b.iter().zip(&bx).map(|(a, c)| a - c).collect();
        let mut xs = x.clone();
        let mut rs = r.clone();
        let mut rs_norm = norm(&rs);
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut history = Vec::new();
        let mut rollbacks = 0;
        let mut violations = 0;
        let mut iterations = 0;
        let mut converged = false;

        while iterations < max_iters {
            if rs_norm <= threshold {
                // Recurrences drift; confirm against the true residual.
                let bx = self.apply_b(mask, &xs);
                rs = b.iter().zip(&bx).map(|(a, c)| a - c).collect();
                rs_norm = norm(&rs);
                if rs_norm <= threshold {
                    converged = true;
                    break;
                }
                x = xs.clone();
                r = rs.clone();
                z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
                p = z.clone();
                rz = dot(&r, &z);
            }
            iterations += 1;
            let bp = self.apply_b(mask, &p);
            let pbp = dot(&p, &bp);
            if pbp.is_nan() || pbp <= 0.0 {
                break;
            }
            let alpha = rz / pbp;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * bp[i];
            }

            // Minimal-residual smoothing.
            let mut dd = 0.0;
            let mut rd = 0.0;
            for i in 0..n {
                let d = r[i] - rs[i];
                dd += d * d;
                rd += rs[i] * d;
            }
            let eta = if dd > 0.0 { -rd / dd } else { 0.0 };
            for i in 0..n {
                xs[i] += eta * (x[i] - xs[i]);
                rs[i] += eta * (r[i] - rs[i]);
            }
            let new_norm = norm(&rs);
            history.push(new_norm);
            if new_norm > 1.1 * rs_norm {
                violations += 1;
                if rollbacks < MAX_ROLLBACKS {
                    rollbacks += 1;
                    let bx = self.apply_b(mask, &xs);
                    rs = b.iter().zip(&bx).map(|(a, c)| a - c).collect();
                    x = xs.clone();
                    r = rs.clone();
                    rs_norm = norm(&rs);
                    z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
                    p = z.clone();
                    rz = dot(&r, &z);
                    continue;
                }
            }
            rs_norm = new_norm;

            z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if !converged && rs_norm <= threshold {
            let bx = self.apply_b(mask, &xs);
            let true_r: Vec<f64> = b.iter().zip(&bx).map(|(a, c)| a - c).collect();
            converged = norm(&true_r) <= threshold;
        }
        PcgOutcome { x: xs, iterations, converged, rollbacks, violations, history }
    }

    /// Conditions the model on `targets` at the observed points of `mask`.
    pub fn fit(&mut self, mask: ObservationMask, targets: Vec<f64>) -> Result<()> {
        if mask.len() != self.axes.len() {
            return Err(Error::invalid(MODULE, "mask size does not match the grid"));
        }
        if mask.count() == 0 {
            return Err(Error::invalid(MODULE, "no observed grid points"));
        }
        if targets.len() != mask.count() {
            return Err(Error::invalid(MODULE, format!("{} targets for {} observations", targets.len(), mask.count())));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "targets must be finite"));
        }
        let y_norm = norm(&targets);
        let rank = self.basis.rank();
        if y_norm == 0.0 {
            let diagnostics = CgDiagnostics {
                iterations: 0,
                residual: 0.0,
                rollbacks: 0,
                monotonicity_violations: 0,
                residual_history: Vec::new(),
                rank,
            };
            self.fit = Some(FitState { mask, targets, whitened: vec![0.0; rank], diagnostics });
            return Ok(());
        }

        let mut b = self.basis.apply_lt(&self.scatter(&mask, &targets));
        for v in b.iter_mut() {
            *v /= self.noise_variance;
        }
        let diag = self.preconditioner(&mask);
        let x0: Vec<f64> = b.iter().zip(&diag).map(|(a, d)| a / d).collect();
        // ‖S·L·r‖ ≤ √λ_max·‖r‖ bounds the original-system residual.
        let threshold = self.options.tolerance * y_norm / self.basis.lambda_max.sqrt();
        let outcome = self.pcg(&mask, &b, x0, threshold, self.max_iters());

        let bx = self.apply_b(&mask, &outcome.x);
        let r: Vec<f64> = b.iter().zip(&bx).map(|(a, c)| a - c).collect();
        let mut slr = self.basis.apply_l(&r);
        self.masked(&mask, &mut slr);
        let residual = norm(&slr) / y_norm;
        let scale = self.basis.lambda_max.sqrt() / y_norm;
        let diagnostics = CgDiagnostics {
            iterations: outcome.iterations,
            residual,
            rollbacks: outcome.rollbacks,
            monotonicity_violations: outcome.violations,
            residual_history: outcome.history.iter().map(|v| v * scale).collect(),
            rank,
        };
        if outcome.violations > 0 {
            log::warn!("CG residual grew {} times despite smoothing", outcome.violations);
        }
        if !outcome.converged && residual > self.options.tolerance {
            return Err(Error::Convergence { iterations: outcome.iterations, residual });
        }
        log::debug!(
            "grid fit: {} iterations, residual {:.2e}, rank {} of {}",
            outcome.iterations,
            residual,
            rank,
            self.axes.len()
        );
        self.fit = Some(FitState { mask, targets, whitened: outcome.x, diagnostics });
        Ok(())
    }

    /// Representer weights `u = (S·K·Sᵀ + σ²I)⁻¹·y` at the observed points.
    pub fn representer_weights(&self) -> Result<Vec<f64>> {
        let st = self.state()?;
        let g = self.basis.apply_l(&st.whitened);
        Ok(st
            .mask
            .indices()
            .iter()
            .zip(&st.targets)
            .map(|(&i, &y)| (y - g[i]) / self.noise_variance)
            .collect())
    }

    /// Posterior mean at every grid point, row-major.
    pub fn predict_grid(&self) -> Result<Vec<f64>> {
        Ok(self.basis.apply_l(&self.state()?.whitened))
    }

    /// Posterior mean at selected grid points.
    pub fn predict_indices(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let st = self.state()?;
        if indices.iter().any(|&i| i >= self.axes.len()) {
            return Err(Error::invalid(MODULE, "grid index out of range"));
        }
        let per_point = self.basis.rank();
        let full: usize = self.axes.len() * self.basis.eig.iter().map(|e| e.values.len()).sum::<usize>();
        if indices.len() * per_point > full {
            let g = self.predict_grid()?;
            return Ok(indices.iter().map(|&i| g[i]).collect());
        }
        Ok(indices
            .iter()
            .map(|&i| dot(&self.basis.l_row(&self.axes.multi_index(i)), &st.whitened))
            .collect())
    }

    /// Posterior mean at arbitrary points in normalised coordinates.
    pub fn predict_points(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let st = self.state()?;
        let d = self.axes.ndim();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid(MODULE, format!("query points must have {d} coordinates")));
        }
        let u = self.representer_weights()?;
        let weights = self.scatter(&st.mask, &u);
        Ok(points
            .iter()
            .map(|p| {
                let rows: Vec<Vec<f64>> = self
                    .kernels
                    .iter()
                    .zip(self.axes.axes())
                    .zip(p)
                    .map(|((k, axis), &x)| axis.iter().map(|&a| k.eval_1d(x, a)).collect())
                    .collect();
                let ops: Vec<MatView> = rows.iter().map(|r| MatView::row_major(r, 1, r.len())).collect();
                kron_apply(&ops, &weights)[0]
            })
            .collect())
    }

    /// Posterior variance at selected grid points, one inner solve each.
    pub fn predict_variance_indices(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let st = self.state()?;
        if indices.iter().any(|&i| i >= self.axes.len()) {
            return Err(Error::invalid(MODULE, "grid index out of range"));
        }
        let prior: f64 = self.kernels.iter().map(KernelSpec::prior_variance).product();
        let diag = self.preconditioner(&st.mask);
        indices
            .iter()
            .map(|&i| {
                let l = self.basis.l_row(&self.axes.multi_index(i));
                let l_norm = norm(&l);
                if l_norm == 0.0 {
                    return Ok(prior);
                }
                let x0: Vec<f64> = l.iter().zip(&diag).map(|(a, d)| a / d).collect();
                let out = self.pcg(&st.mask, &l, x0, self.options.tolerance * l_norm, self.max_iters());
                if !out.converged {
                    return Err(Error::Convergence { iterations: out.iterations, residual: f64::NAN });
                }
                let truncated = (prior - l_norm * l_norm).max(0.0);
                Ok((truncated + dot(&l, &out.x)).clamp(0.0, prior))
            })
            .collect()
    }

    /// Log marginal likelihood terms. The data-fit term is exact up to the
    /// solver tolerance; the log-determinant uses the largest `m_obs` product
    /// eigenvalues scaled by the observed fraction, which is exact when every
    /// grid point is observed.
    pub fn log_marginal_likelihood_terms(&self) -> Result<KronLmlTerms> {
        let st = self.state()?;
        let g = self.basis.apply_l(&st.whitened);
        let resid: f64 = st.mask.indices().iter().zip(&st.targets).map(|(&i, &y)| (y - g[i]).powi(2)).sum();
        let data_fit = resid / self.noise_variance + dot(&st.whitened, &st.whitened);

        let m_obs = st.mask.count();
        let p = st.mask.fraction();
        let mut lambda: Vec<f64> = self.basis.sqrt_lambda.iter().map(|s| s * s).collect();
        lambda.sort_by(|a, b| b.total_cmp(a));
        let log_det: f64 = (0..m_obs)
            .map(|i| (p * lambda.get(i).copied().unwrap_or(0.0) + self.noise_variance).ln())
            .sum();
        let value = -0.5 * data_fit - 0.5 * log_det - 0.5 * m_obs as f64 * (2.0 * PI).ln();
        Ok(KronLmlTerms { data_fit, log_det, value })
    }

    pub fn to_state(&self) -> Result<KronGpState> {
        let st = self.state()?;
        Ok(KronGpState {
            axes: self.axes.clone(),
            kernels: self.kernels.clone(),
            noise_variance: self.noise_variance,
            options: self.options,
            observed: st.mask.indices().to_vec(),
            targets: st.targets.clone(),
            whitened: st.whitened.clone(),
            diagnostics: st.diagnostics.clone(),
        })
    }

    pub fn from_state(state: KronGpState) -> Result<Self> {
        let mut model = Self::new(state.axes, state.kernels, state.noise_variance, state.options)?;
        let mask = ObservationMask::from_indices(model.axes.len(), state.observed)?;
        if state.targets.len() != mask.count() || state.whitened.len() != model.basis.rank() {
            return Err(Error::State { module: MODULE, message: "stored solution does not match the model".into() });
        }
        model.fit = Some(FitState { mask, targets: state.targets, whitened: state.whitened, diagnostics: state.diagnostics });
        Ok(model)
    }
}

/// Builds and fits a grid model in one step.
pub fn grid_gp_fit(
    axes: GridAxes,
    mask: ObservationMask,
    targets: Vec<f64>,
    kernels: Vec<KernelSpec>,
    noise_variance: f64,
    options: CgOptions,
) -> Result<KronGpModel> {
    let mut model = KronGpModel::new(axes, kernels, noise_variance, options)?;
    model.fit(mask, targets)?;
    Ok(model)
}

/// Posterior mean over the whole grid.
pub fn grid_gp_predict(model: &KronGpModel) -> Result<Vec<f64>> {
    model.predict_grid()
}

/// Approximate log marginal likelihood of a fitted grid model.
pub fn kron_log_marginal_likelihood(model: &KronGpModel) -> Result<f64> {
    Ok(model.log_marginal_likelihood_terms()?.value)
}
