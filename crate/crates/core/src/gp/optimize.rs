//! Marginal-likelihood hyperparameter learning.
//!
//! Box-constrained L-BFGS with projected steps and Armijo backtracking.
//! Positive hyperparameters live in log coordinates; spectral means, which
//! may legitimately sit at zero, stay linear. Only steps that increase the
//! likelihood are accepted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{lml_with_gradient, Dataset};
use super::kernel::{HyperKind, KernelSpec};
use crate::error::{Error, Result};

const MODULE: &str = "gp-core";
const MEMORY: usize = 8;

/// Closed intervals for each kind of hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparameterBounds {
    pub variance: (f64, f64),
    pub length_scale: (f64, f64),
    pub alpha: (f64, f64),
    pub sm_weight: (f64, f64),
    pub sm_mean: (f64, f64),
    pub sm_variance: (f64, f64),
    pub noise: (f64, f64),
}

impl Default for HyperparameterBounds {
    fn default() -> Self {
        Self {
            variance: (1e-4, 10.0),
            length_scale: (0.01, 10.0),
            alpha: (0.1, 100.0),
            sm_weight: (1e-4, 10.0),
            sm_mean: (0.0, 1000.0),
            sm_variance: (1e-4, 1e4),
            noise: (1e-8, 1.0),
        }
    }
}

impl HyperparameterBounds {
    pub fn for_kind(&self, kind: HyperKind) -> (f64, f64) {
        match kind {
            HyperKind::Variance => self.variance,
            HyperKind::LengthScale => self.length_scale,
            HyperKind::Alpha => self.alpha,
            HyperKind::SmWeight => self.sm_weight,
            HyperKind::SmMean => self.sm_mean,
            HyperKind::SmVariance => self.sm_variance,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [
            ("variance", self.variance),
            ("length_scale", self.length_scale),
            ("alpha", self.alpha),
            ("sm_weight", self.sm_weight),
            ("sm_variance", self.sm_variance),
            ("noise", self.noise),
        ];
        for (name, (lo, hi)) in all {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid(MODULE, format!("{name} bounds must be positive and ordered, got [{lo}, {hi}]")));
            }
        }
        let (lo, hi) = self.sm_mean;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid(MODULE, format!("sm_mean bounds must be non-negative and ordered, got [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    /// Iterations per restart.
    pub max_iters: usize,
    /// Number of starts; the first is always the initial point itself.
    pub restarts: usize,
    /// Seeds the perturbation of the extra starts.
    pub seed: u64,
    pub learn_noise: bool,
    /// Relative change in the objective below which a run stops.
    pub tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { max_iters: 100, restarts: 3, seed: 0, learn_noise: true, tolerance: 1e-7 }
    }
}

/// Result of hyperparameter learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterFit {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    /// False when no start improved on the initial point; the initial
    /// hyperparameters are returned unchanged in that case.
    pub improved: bool,
    /// Objective after each accepted step of the winning start.
    pub trace: Vec<f64>,
}

struct Problem<'a> {
    dataset: &'a Dataset,
    template: &'a KernelSpec,
    log_coord: Vec<bool>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    natural_bounds: Vec<(f64, f64)>,
    fixed_noise: Option<f64>,
}

impl Problem<'_> {
    fn to_natural(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.log_coord)
            .zip(&self.natural_bounds)
            .map(|((&v, &lg), &(lo, hi))| if lg { v.exp().clamp(lo, hi) } else { v })
            .collect()
    }

    fn split(&self, theta: &[f64]) -> (KernelSpec, f64) {
        let (kparams, noise) = match self.fixed_noise {
            Some(n) => (theta, n),
            None => (&theta[..theta.len() - 1], theta[theta.len() - 1]),
        };
        let kernel = self.template.with_hyperparameters(kparams).expect("structure fixed by template");
        (kernel, noise)
    }

    /// Negative log likelihood and its gradient in transformed coordinates.
    /// Numerical failures become +∞ so the line search backs off.
    fn objective(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let theta = self.to_natural(u);
        let (kernel, noise) = self.split(&theta);
        match lml_with_gradient(self.dataset, &kernel, noise) {
            Ok((lml, mut grad)) if lml.is_finite() => {
                if self.fixed_noise.is_some() {
                    grad.pop();
                }
                let g = grad
                    .iter()
                    .zip(&theta)
                    .zip(&self.log_coord)
                    .map(|((g, t), &lg)| if lg { -g * t } else { -g })
                    .collect();
                (-lml, g)
            }
            _ => (f64::INFINITY, vec![0.0; u.len()]),
        }
    }

    fn project(&self, u: &mut [f64]) {
        for ((v, lo), hi) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct RunResult {
    u: Vec<f64>,
    f: f64,
    trace: Vec<f64>,
}

fn lbfgs(problem: &Problem, start: Vec<f64>, options: &OptimizerOptions) -> Option<RunResult> {
    let n = start.len();
    let mut x = start;
    problem.project(&mut x);
    let (mut f, mut g) = problem.objective(&x);
    if !f.is_finite() {
        return None;
    }
    let mut trace = vec![-f];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();

    for _ in 0..options.max_iters {
        // Variables pinned at a bound with the gradient pushing outward.
        let pinned: Vec<bool> = (0..n)
            .map(|i| (x[i] <= problem.lower[i] && g[i] > 0.0) || (x[i] >= problem.upper[i] && g[i] < 0.0))
            .collect();
        let pg: Vec<f64> = (0..n).map(|i| if pinned[i] { 0.0 } else { g[i] }).collect();
        if pg.iter().all(|v| v.abs() < 1e-10) {
            break;
        }

        let mut d = two_loop(&pg, &s_hist, &y_hist);
        for i in 0..n {
            if pinned[i] {
                d[i] = 0.0;
            }
            d[i] = -d[i];
        }
        if dot(&d, &pg) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut step = if s_hist.is_empty() { (1.0 / norm_inf(&d)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            problem.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if norm_inf(&moved) == 0.0 {
                break;
            }
            let (ft, gt) = problem.objective(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * dot(&g, &moved) && ft < f {
                accepted = Some((trial, ft, gt, moved));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else { break };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let rel = (f - fn_).abs() / (1.0 + f.abs());
        x = xn;
        f = fn_;
        g = gn;
        trace.push(-f);
        if rel < options.tolerance {
            break;
        }
    }
    Some(RunResult { u: x, f, trace })
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let k = s_hist.len();
    let mut alphas = vec![0.0; k];
    for i in (0..k).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
        for v in q.iter_mut() {
            *v *= gamma;
        }
    }
    for i in 0..k {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q
}

/// Maximises the log marginal likelihood starting from the hyperparameters in
/// `template` and `init_noise`. Deterministic for fixed inputs and seed.
pub fn optimize_hyperparameters(
    dataset: &Dataset,
    template: &KernelSpec,
    init_noise: f64,
    bounds: &HyperparameterBounds,
    options: &OptimizerOptions,
) -> Result<HyperparameterFit> {
    template.validate()?;
    template.check_input_dim(dataset.dim())?;
    bounds.validate()?;
    if options.restarts == 0 {
        return Err(Error::invalid(MODULE, "at least one start is required"));
    }

    let params = template.hyperparameters();
    let mut kinds: Vec<Option<HyperKind>> = params.iter().map(|(k, _)| Some(*k)).collect();
    let mut theta0: Vec<f64> = params.iter().map(|(_, v)| *v).collect();
    if options.learn_noise {
        kinds.push(None);
        theta0.push(init_noise);
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut log_coord = Vec::new();
    let mut natural_bounds = Vec::new();
    for (kind, &t) in kinds.iter().zip(&theta0) {
        let (lo, hi) = kind.map_or(bounds.noise, |k| bounds.for_kind(k));
        natural_bounds.push((lo, hi));
        if !(t >= lo && t <= hi) {
            return Err(Error::invalid(MODULE, format!("initial value {t} of {kind:?} outside [{lo}, {hi}]")));
        }
        let lg = *kind != Some(HyperKind::SmMean);
        log_coord.push(lg);
        if lg {
            lower.push(lo.ln());
            upper.push(hi.ln());
        } else {
            lower.push(lo);
            upper.push(hi);
        }
    }
    if !options.learn_noise && !(init_noise >= 0.0 && init_noise.is_finite()) {
        return Err(Error::invalid(MODULE, "noise variance must be non-negative"));
    }

    let problem = Problem {
        dataset,
        template,
        log_coord: log_coord.clone(),
        lower,
        upper,
        natural_bounds,
        fixed_noise: (!options.learn_noise).then_some(init_noise),
    };
    let u0: Vec<f64> = theta0.iter().zip(&log_coord).map(|(&t, &lg)| if lg { t.ln() } else { t }).collect();
    let (f0, _) = problem.objective(&u0);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<RunResult> = None;
    for r in 0..options.restarts {
        let start: Vec<f64> = if r == 0 {
            u0.clone()
        } else {
            u0.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let span = if log_coord[i] { 1.0 } else { 0.1 * (problem.upper[i] - problem.lower[i]) };
                    v + span * rng.random_range(-1.0..1.0)
                })
                .collect()
        };
        if let Some(run) = lbfgs(&problem, start, options) {
            if best.as_ref().is_none_or(|b| run.f < b.f) {
                best = Some(run);
            }
        }
    }

    let initial_log_likelihood = -f0;
    match best {
        Some(run) if run.f < f0 || (!f0.is_finite() && run.f.is_finite()) => {
            let (kernel, noise_variance) = problem.split(&problem.to_natural(&run.u));
            Ok(HyperparameterFit {
                kernel,
                noise_variance,
                log_likelihood: -run.f,
                initial_log_likelihood,
                improved: true,
                trace: run.trace,
            })
        }
        _ => {
            log::warn!("hyperparameter optimisation did not improve on the initial point");
            Ok(HyperparameterFit {
                kernel: template.clone(),
                noise_variance: init_noise,
                log_likelihood: initial_log_likelihood,
                initial_log_likelihood,
                improved: false,
                trace: vec![initial_log_likelihood],
            })
        }
    }
}
