//! Covariance kernels.
//!
//! Three kinds are supported: the rational quadratic (isotropic on vector
//! inputs), the one-dimensional spectral mixture, and a separable product in
//! which factor `d` acts on input coordinate `d` only. The product is what the
//! grid models use: one factor per grid axis.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MODULE: &str = "gp-core";

/// Rational quadratic hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RqParams {
    /// Magnitude σ².
    pub variance: f64,
    /// Length-scale ℓ.
    pub length_scale: f64,
    /// Mixture weighting α between large- and small-scale variation.
    pub alpha: f64,
}

impl RqParams {
    pub fn new(variance: f64, length_scale: f64, alpha: f64) -> Self {
        Self { variance, length_scale, alpha }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("variance", self.variance), ("length_scale", self.length_scale), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(MODULE, format!("rational quadratic {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    #[inline]
    fn eval_sq(&self, r2: f64) -> f64 {
        self.variance * (1.0 + r2 / (2.0 * self.alpha * self.length_scale * self.length_scale)).powf(-self.alpha)
    }
}

/// One Gaussian component of a spectral mixture: weight `w`, spectral mean
/// `μ` (cycles per unit input) and spectral variance `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmComponent {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

impl SmComponent {
    pub fn new(weight: f64, mean: f64, variance: f64) -> Self {
        Self { weight, mean, variance }
    }

    #[inline]
    fn eval(&self, tau: f64) -> f64 {
        self.weight * (-2.0 * PI * PI * tau * tau * self.variance).exp() * (2.0 * PI * tau * self.mean).cos()
    }
}

fn validate_sm(components: &[SmComponent]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::invalid(MODULE, "spectral mixture needs at least one component"));
    }
    for c in components {
        if !(c.weight > 0.0 && c.weight.is_finite()) || !(c.variance > 0.0 && c.variance.is_finite()) {
            return Err(Error::invalid(MODULE, format!("spectral mixture weight and variance must be positive, got {c:?}")));
        }
        if !c.mean.is_finite() {
            return Err(Error::invalid(MODULE, "spectral mixture mean must be finite"));
        }
    }
    Ok(())
}

/// `σ²·(1 + ‖x−x'‖²/(2αℓ²))^(−α)`.
pub fn rq_kernel(x: &[f64], y: &[f64], params: &RqParams) -> Result<f64> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::invalid(MODULE, "kernel inputs differ in dimension"));
    }
    Ok(params.eval_sq(sq_dist(x, y)))
}

/// `Σ_q w_q·exp(−2π²τ²v_q)·cos(2πτμ_q)` with `τ = x − x'`.
pub fn sm_kernel(x: f64, y: f64, components: &[SmComponent]) -> Result<f64> {
    validate_sm(components)?;
    let tau = x - y;
    Ok(components.iter().map(|c| c.eval(tau)).sum())
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Which hyperparameter a flattened slot refers to. Drives bounds and the
/// optimiser's choice between log and linear coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperKind {
    Variance,
    LengthScale,
    Alpha,
    SmWeight,
    SmMean,
    SmVariance,
}

/// Covariance kernel specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    RationalQuadratic(RqParams),
    SpectralMixture { components: Vec<SmComponent> },
    /// Factor `d` acts on input coordinate `d`.
    Product { factors: Vec<KernelSpec> },
}

impl KernelSpec {
    pub fn rq(variance: f64, length_scale: f64, alpha: f64) -> Self {
        KernelSpec::RationalQuadratic(RqParams::new(variance, length_scale, alpha))
    }

    pub fn sm(components: Vec<SmComponent>) -> Self {
        KernelSpec::SpectralMixture { components }
    }

    pub fn product(factors: Vec<KernelSpec>) -> Self {
        KernelSpec::Product { factors }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::RationalQuadratic(p) => p.validate(),
            KernelSpec::SpectralMixture { components } => validate_sm(components),
            KernelSpec::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::invalid(MODULE, "product kernel has no factors"));
                }
                for f in factors {
                    if matches!(f, KernelSpec::Product { .. }) {
                        return Err(Error::invalid(MODULE, "nested product kernels are not supported"));
                    }
                    f.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Checks that the kernel can consume inputs of dimension `dim`.
    pub fn check_input_dim(&self, dim: usize) -> Result<()> {
        let ok = match self {
            KernelSpec::RationalQuadratic(_) => dim >= 1,
            KernelSpec::SpectralMixture { .. } => dim == 1,
            KernelSpec::Product { factors } => factors.len() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(MODULE, format!("kernel cannot take {dim}-dimensional inputs")))
        }
    }

    /// `k(x, x)`; every kernel here is stationary.
    pub fn prior_variance(&self) -> f64 {
        match self {
            KernelSpec::RationalQuadratic(p) => p.variance,
            KernelSpec::SpectralMixture { components } => components.iter().map(|c| c.weight).sum(),
            KernelSpec::Product { factors } => factors.iter().map(KernelSpec::prior_variance).product(),
        }
    }

    /// Evaluates the kernel without re-validating hyperparameters.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::RationalQuadratic(p) => p.eval_sq(sq_dist(x, y)),
            KernelSpec::SpectralMixture { components } => {
                let tau = x[0] - y[0];
                components.iter().map(|c| c.eval(tau)).sum()
            }
            KernelSpec::Product { factors } => factors
                .iter()
                .enumerate()
                .map(|(d, f)| f.eval(&x[d..d + 1], &y[d..d + 1]))
                .product(),
        }
    }

    /// Scalar-input evaluation for a single grid axis.
    pub fn eval_1d(&self, x: f64, y: f64) -> f64 {
        self.eval(&[x], &[y])
    }

    /// Flattened hyperparameters in a fixed order.
    pub fn hyperparameters(&self) -> Vec<(HyperKind, f64)> {
        let mut out = Vec::new();
        self.push_hyperparameters(&mut out);
        out
    }

    fn push_hyperparameters(&self, out: &mut Vec<(HyperKind, f64)>) {
        match self {
            KernelSpec::RationalQuadratic(p) => {
                out.push((HyperKind::Variance, p.variance));
                out.push((HyperKind::LengthScale, p.length_scale));
                out.push((HyperKind::Alpha, p.alpha));
            }
            KernelSpec::SpectralMixture { components } => {
                for c in components {
                    out.push((HyperKind::SmWeight, c.weight));
                    out.push((HyperKind::SmMean, c.mean));
                    out.push((HyperKind::SmVariance, c.variance));
                }
            }
            KernelSpec::Product { factors } => {
                for f in factors {
                    f.push_hyperparameters(out);
                }
            }
        }
    }

    /// Same structure with hyperparameters replaced, in `hyperparameters()` order.
    pub fn with_hyperparameters(&self, values: &[f64]) -> Result<KernelSpec> {
        let mut it = values.iter().copied();
        let out = self.rebuild(&mut it);
        if it.next().is_some() || out.hyperparameters().len() != values.len() {
            return Err(Error::invalid(MODULE, "hyperparameter count does not match kernel structure"));
        }
        Ok(out)
    }

    fn rebuild(&self, it: &mut impl Iterator<Item = f64>) -> KernelSpec {
        let mut next = |old: f64| it.next().unwrap_or(old);
        match self {
            KernelSpec::RationalQuadratic(p) => {
                KernelSpec::RationalQuadratic(RqParams::new(next(p.variance), next(p.length_scale), next(p.alpha)))
            }
            KernelSpec::SpectralMixture { components } => KernelSpec::SpectralMixture {
                components: components
                    .iter()
                    .map(|c| SmComponent::new(next(c.weight), next(c.mean), next(c.variance)))
                    .collect(),
            },
            KernelSpec::Product { factors } => {
                KernelSpec::Product { factors: factors.iter().map(|f| f.rebuild(it)).collect() }
            }
        }
    }

    /// Gram matrix over one-dimensional points.
    pub fn gram_1d(&self, xs: &[f64]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.eval_1d(xs[i], xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Gram matrix and its derivatives with respect to each hyperparameter
    /// (natural, not log, coordinates), in `hyperparameters()` order.
    pub fn gram_with_gradients(&self, xs: &[Vec<f64>]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        match self {
            KernelSpec::Product { factors } => {
                let parts: Vec<(DMatrix<f64>, Vec<DMatrix<f64>>)> = factors
                    .iter()
                    .enumerate()
                    .map(|(d, f)| {
                        let coords: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[d]]).collect();
                        f.gram_with_gradients(&coords)
                    })
                    .collect();
                let n = xs.len();
                let mut total = DMatrix::from_element(n, n, 1.0);
                for (k, _) in &parts {
                    total.component_mul_assign(k);
                }
                let mut grads = Vec::new();
                for (d, (_, dks)) in parts.iter().enumerate() {
                    let mut others = DMatrix::from_element(n, n, 1.0);
                    for (e, (k, _)) in parts.iter().enumerate() {
                        if e != d {
                            others.component_mul_assign(k);
                        }
                    }
                    for dk in dks {
                        grads.push(dk.component_mul(&others));
                    }
                }
                (total, grads)
            }
            _ => {
                let n = xs.len();
                let n_params = self.hyperparameters().len();
                let mut k = DMatrix::zeros(n, n);
                let mut grads = vec![DMatrix::zeros(n, n); n_params];
                let mut buf = vec![0.0; n_params];
                for j in 0..n {
                    for i in j..n {
                        let v = self.eval_with_gradient(&xs[i], &xs[j], &mut buf);
                        k[(i, j)] = v;
                        k[(j, i)] = v;
                        for (g, &b) in grads.iter_mut().zip(&buf) {
                            g[(i, j)] = b;
                            g[(j, i)] = b;
                        }
                    }
                }
                (k, grads)
            }
        }
    }

    fn eval_with_gradient(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            KernelSpec::RationalQuadratic(p) => {
                let r2 = sq_dist(x, y);
                let l2 = p.length_scale * p.length_scale;
                let x = r2 / (2.0 * p.alpha * l2);
                let base = 1.0 + x;
                let pow = base.powf(-p.alpha);
                let k = p.variance * pow;
                grad[0] = pow;
                grad[1] = p.variance * pow / base * r2 / (l2 * p.length_scale);
                grad[2] = k * (x / base - x.ln_1p());
                k
            }
            KernelSpec::SpectralMixture { components } => {
                let tau = x[0] - y[0];
                let mut k = 0.0;
                for (q, c) in components.iter().enumerate() {
                    let env = (-2.0 * PI * PI * tau * tau * c.variance).exp();
                    let phase = 2.0 * PI * tau * c.mean;
                    let (s, co) = phase.sin_cos();
                    k += c.weight * env * co;
                    grad[3 * q] = env * co;
                    grad[3 * q + 1] = -c.weight * env * s * 2.0 * PI * tau;
                    grad[3 * q + 2] = -2.0 * PI * PI * tau * tau * c.weight * env * co;
                }
                k
            }
            KernelSpec::Product { .. } => unreachable!("products are handled factor-wise"),
        }
    }
}

/// `K[i, j] = k(x_i, x_j)`.
pub fn gram_matrix(kernel: &KernelSpec, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    if xs.is_empty() {
        return Err(Error::invalid(MODULE, "gram matrix needs at least one point"));
    }
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(Error::invalid(MODULE, "points differ in dimension"));
    }
    kernel.check_input_dim(dim)?;
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.eval(&xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rq_at_zero_distance_is_the_variance() {
        let p = RqParams::new(2.5, 0.7, 3.0);
        assert_eq!(rq_kernel(&[0.3, 1.0], &[0.3, 1.0], &p).unwrap(), 2.5);
    }

    #[test]
    fn rq_hand_computed_value() {
        // (1 + 2/2)^-1 = 0.5
        let p = RqParams::new(1.0, 1.0, 1.0);
        let k = rq_kernel(&[0.0, 0.0], &[1.0, 1.0], &p).unwrap();
        assert_abs_diff_eq!(k, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rq_tends_to_squared_exponential() {
        let p = RqParams::new(1.0, 0.8, 1e6);
        for i in 0..=30 {
            let r = 3.0 * 0.8 * i as f64 / 30.0;
            let se = (-r * r / (2.0 * 0.8 * 0.8)).exp();
            assert_abs_diff_eq!(rq_kernel(&[0.0], &[r], &p).unwrap(), se, epsilon = 1e-4);
        }
    }

    #[test]
    fn rq_rejects_non_positive_hyperparameters() {
        assert!(rq_kernel(&[0.0], &[1.0], &RqParams::new(0.0, 1.0, 1.0)).unwrap_err().is_invalid_argument());
        assert!(rq_kernel(&[0.0], &[1.0], &RqParams::new(1.0, -1.0, 1.0)).is_err());
        assert!(rq_kernel(&[0.0], &[1.0], &RqParams::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn sm_at_zero_lag_is_weight_sum() {
        let c = [SmComponent::new(0.3, 2.0, 0.1), SmComponent::new(1.2, 0.0, 4.0)];
        assert_abs_diff_eq!(sm_kernel(0.4, 0.4, &c).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn sm_with_zero_mean_is_monotone_in_lag() {
        let c = [SmComponent::new(1.0, 0.0, 0.5)];
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let k = sm_kernel(0.0, i as f64 * 0.05, &c).unwrap();
            assert!(k < prev);
            prev = k;
        }
    }

    #[test]
    fn sm_narrow_component_tends_to_cosine() {
        let c = [SmComponent::new(1.0, 1.0, 1e-8)];
        assert_abs_diff_eq!(sm_kernel(0.0, 0.5, &c).unwrap(), -1.0, epsilon = 1e-3);
    }

    #[test]
    fn sm_rejects_bad_components() {
        assert!(sm_kernel(0.0, 1.0, &[]).is_err());
        assert!(sm_kernel(0.0, 1.0, &[SmComponent::new(-1.0, 0.0, 1.0)]).is_err());
        assert!(sm_kernel(0.0, 1.0, &[SmComponent::new(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn gram_single_point() {
        let k = KernelSpec::rq(1.7, 0.5, 2.0);
        let g = gram_matrix(&k, &[vec![0.2]]).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], 1.7);
    }

    #[test]
    fn rq_gram_on_equispaced_points_is_toeplitz() {
        let k = KernelSpec::rq(1.0, 0.4, 1.5);
        let g = gram_matrix(&k, &[vec![0.0], vec![0.5], vec![1.0]]).unwrap();
        assert_abs_diff_eq!(g[(0, 1)], g[(1, 2)], epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 0)], g[(2, 2)], epsilon = 1e-15);
    }

    #[test]
    fn permuting_points_permutes_the_gram_matrix() {
        let k = KernelSpec::product(vec![KernelSpec::rq(1.0, 0.3, 1.0), KernelSpec::sm(vec![SmComponent::new(1.0, 1.0, 0.5)])]);
        let xs = vec![vec![0.1, 0.2], vec![0.7, 0.9], vec![0.4, 0.0]];
        let perm = [2, 0, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let g = gram_matrix(&k, &xs).unwrap();
        let gp = gram_matrix(&k, &permuted).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(gp[(a, b)], g[(perm[a], perm[b])]);
            }
        }
    }

    #[test]
    fn product_dimension_is_checked() {
        let k = KernelSpec::product(vec![KernelSpec::rq(1.0, 0.3, 1.0)]);
        assert!(gram_matrix(&k, &[vec![0.0, 1.0]]).is_err());
        let sm = KernelSpec::sm(vec![SmComponent::new(1.0, 0.0, 1.0)]);
        assert!(gram_matrix(&sm, &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn hyperparameter_round_trip() {
        let k = KernelSpec::product(vec![
            KernelSpec::rq(1.0, 0.3, 2.0),
            KernelSpec::sm(vec![SmComponent::new(0.5, 0.0, 1.0), SmComponent::new(0.5, 8.0, 2.0)]),
        ]);
        let values: Vec<f64> = k.hyperparameters().iter().map(|(_, v)| v * 2.0).collect();
        let k2 = k.with_hyperparameters(&values).unwrap();
        let back: Vec<f64> = k2.hyperparameters().iter().map(|(_, v)| *v).collect();
        assert_eq!(back, values);
        assert!(k.with_hyperparameters(&values[1..]).is_err());
    }

    fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
        KernelSpec::product(vec![
            KernelSpec::rq(rng.random_range(1e-4..10.0), rng.random_range(0.01..10.0), rng.random_range(0.1..100.0)),
            KernelSpec::rq(rng.random_range(1e-4..10.0), rng.random_range(0.01..10.0), rng.random_range(0.1..100.0)),
            KernelSpec::sm(vec![
                SmComponent::new(rng.random_range(1e-4..10.0), rng.random_range(0.0..5.0), rng.random_range(1e-3..10.0)),
                SmComponent::new(rng.random_range(1e-4..10.0), rng.random_range(0.0..5.0), rng.random_range(1e-3..10.0)),
            ]),
        ])
    }

    #[test]
    fn random_gram_matrices_are_numerically_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let k = random_kernel(&mut rng);
            let xs: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let g = gram_matrix(&k, &xs).unwrap();
            let trace = g.trace();
            let jittered = &g + DMatrix::identity(25, 25) * (1e-8 * trace);
            assert!(jittered.cholesky().is_some(), "gram not PSD for {k:?}");
            let min_eig = g.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-10 * trace);
        }
    }

    #[test]
    fn analytic_gram_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = random_kernel(&mut rng);
            let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let (_, grads) = k.gram_with_gradients(&xs);
            let theta: Vec<f64> = k.hyperparameters().iter().map(|(_, v)| *v).collect();
            for (p, grad) in grads.iter().enumerate() {
                // Five-point stencil keeps truncation error well below the tolerance.
                let h = 1e-3 * theta[p].abs().max(1e-3);
                let at = |delta: f64| {
                    let mut t = theta.clone();
                    t[p] += delta;
                    gram_matrix(&k.with_hyperparameters(&t).unwrap(), &xs).unwrap()
                };
                let fd = (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h);
                // Relative tolerance plus the stencil's own round-off floor.
                let roundoff = 1e-13 * at(0.0).abs().max() / h;
                let err = (&fd - grad).abs().max();
                assert!(err <= 1e-5 * fd.abs().max() + roundoff, "param {p}: error {err} of {k:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn kernels_are_exactly_symmetric(
            x in proptest::collection::vec(-2.0..2.0f64, 3),
            y in proptest::collection::vec(-2.0..2.0f64, 3),
            l in 0.01..10.0f64,
            a in 0.1..100.0f64,
            mu in 0.0..10.0f64,
        ) {
            let k = KernelSpec::product(vec![
                KernelSpec::rq(1.3, l, a),
                KernelSpec::sm(vec![SmComponent::new(0.7, mu, 0.3)]),
                KernelSpec::rq(0.5, l * 0.5, a),
            ]);
            prop_assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
            let rq = RqParams::new(1.0, l, a);
            prop_assert_eq!(rq_kernel(&x, &y, &rq).unwrap(), rq_kernel(&y, &x, &rq).unwrap());
        }
    }
}
