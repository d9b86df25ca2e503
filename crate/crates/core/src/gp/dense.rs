//! Exact GP regression with a dense Cholesky factorisation.
//!
//! Cubic in the number of training points, so it only serves small problems:
//! hyperparameter learning on subsamples and the reference answer for the
//! grid solver.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::KernelSpec;
use crate::error::{Error, Result};

const MODULE: &str = "gp-core";

/// Relative jitter levels tried, in order, when a factorisation fails.
const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Training inputs and noisy targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::invalid(
                MODULE,
                format!("{} inputs but {} targets", inputs.len(), targets.len()),
            ));
        }
        if inputs.is_empty() {
            return Err(Error::invalid(MODULE, "dataset is empty"));
        }
        let dim = inputs[0].len();
        if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid(MODULE, "inputs must share a positive dimension"));
        }
        if inputs.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid(MODULE, "dataset contains non-finite values"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }
}

fn check_noise(noise_variance: f64) -> Result<()> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(MODULE, format!("noise variance must be non-negative, got {noise_variance}")));
    }
    Ok(())
}

/// Cholesky of `a`, adding diagonal jitter relative to the mean diagonal if
/// needed. Returns the factor and the absolute jitter used.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    let mean_diag = a.trace() / n as f64;
    for &rel in &JITTER_SCHEDULE {
        let jitter = rel * mean_diag.abs().max(f64::MIN_POSITIVE);
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            if jitter > 0.0 {
                log::debug!("cholesky needed jitter {jitter:.3e}");
            }
            return Ok((ch, jitter));
        }
    }
    Err(Error::numerical(MODULE, format!("covariance of size {n} is not positive definite even with jitter")))
}

/// A fitted dense GP.
#[derive(Debug, Clone)]
pub struct DenseGpModel {
    dataset: Dataset,
    kernel: KernelSpec,
    noise_variance: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Factorises `K + σ²_noise·I` for the dataset.
pub fn fit_dense_gp(dataset: Dataset, kernel: KernelSpec, noise_variance: f64) -> Result<DenseGpModel> {
    check_noise(noise_variance)?;
    let mut k = super::kernel::gram_matrix(&kernel, dataset.inputs())?;
    for i in 0..dataset.len() {
        k[(i, i)] += noise_variance;
    }
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let alpha = chol.solve(&DVector::from_column_slice(dataset.targets()));
    Ok(DenseGpModel { dataset, kernel, noise_variance, chol, alpha, jitter })
}

impl DenseGpModel {
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Jitter that had to be added to the diagonal, zero if none.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross(&self, query: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dataset.len(),
            self.dataset.inputs().iter().map(|x| self.kernel.eval(query, x)),
        )
    }

    /// Posterior means only.
    pub fn predict_mean(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_queries(queries)?;
        Ok(queries.iter().map(|q| self.cross(q).dot(&self.alpha)).collect())
    }

    /// Posterior means and variances. Variances are clamped at zero.
    pub fn predict(&self, queries: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_queries(queries)?;
        let mut means = Vec::with_capacity(queries.len());
        let mut vars = Vec::with_capacity(queries.len());
        for q in queries {
            let ks = self.cross(q);
            means.push(ks.dot(&self.alpha));
            let v = self.chol.l().solve_lower_triangular(&ks).expect("cholesky factor is non-singular");
            let var = self.kernel.eval(q, q) - v.norm_squared();
            if var < -1e-10 * self.kernel.prior_variance().max(1.0) {
                log::warn!("posterior variance {var:.3e} below zero, clamped");
            }
            vars.push(var.max(0.0));
        }
        Ok((means, vars))
    }

    fn check_queries(&self, queries: &[Vec<f64>]) -> Result<()> {
        let dim = self.dataset.dim();
        if queries.iter().any(|q| q.len() != dim) {
            return Err(Error::invalid(MODULE, format!("query points must have dimension {dim}")));
        }
        Ok(())
    }

    /// `log det(K + σ²_noise·I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `log p(y | X, θ)` at the fitted hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let y = DVector::from_column_slice(self.dataset.targets());
        let m = self.dataset.len() as f64;
        -0.5 * y.dot(&self.alpha) - 0.5 * self.log_det() - 0.5 * m * (2.0 * PI).ln()
    }
}

/// Posterior mean and variance at `queries`.
pub fn dense_gp_predict(model: &DenseGpModel, queries: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.predict(queries)
}

/// `−½yᵀ(K+σ²I)⁻¹y − ½log det(K+σ²I) − (m/2)log 2π`.
pub fn log_marginal_likelihood(dataset: &Dataset, kernel: &KernelSpec, noise_variance: f64) -> Result<f64> {
    Ok(fit_dense_gp(dataset.clone(), kernel.clone(), noise_variance)?.log_marginal_likelihood())
}

/// Log marginal likelihood and its gradient with respect to the natural
/// hyperparameters, kernel parameters first and the noise variance last.
pub(crate) fn lml_with_gradient(dataset: &Dataset, kernel: &KernelSpec, noise_variance: f64) -> Result<(f64, Vec<f64>)> {
    kernel.validate()?;
    kernel.check_input_dim(dataset.dim())?;
    check_noise(noise_variance)?;
    let m = dataset.len();
    let (mut k, grads) = kernel.gram_with_gradients(dataset.inputs());
    for i in 0..m {
        k[(i, i)] += noise_variance;
    }
    let (chol, _) = cholesky_with_jitter(&k)?;
    let y = DVector::from_column_slice(dataset.targets());
    let alpha = chol.solve(&y);
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * m as f64 * (2.0 * PI).ln();

    // ½ tr((ααᵀ − K⁻¹) dK)
    let k_inv = chol.inverse();
    let mut w = &alpha * alpha.transpose();
    w -= k_inv;
    let mut out: Vec<f64> = grads.iter().map(|dk| 0.5 * w.component_mul(dk).sum()).collect();
    out.push(0.5 * w.trace());
    Ok((lml, out))
}
