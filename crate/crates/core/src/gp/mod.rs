//! Kernels, dense GP regression and hyperparameter learning.

pub mod dense;
pub mod kernel;
pub mod optimize;

pub use dense::{dense_gp_predict, fit_dense_gp, log_marginal_likelihood, Dataset, DenseGpModel};
pub use kernel::{gram_matrix, rq_kernel, sm_kernel, HyperKind, KernelSpec, RqParams, SmComponent};
pub use optimize::{optimize_hyperparameters, HyperparameterBounds, HyperparameterFit, OptimizerOptions};
