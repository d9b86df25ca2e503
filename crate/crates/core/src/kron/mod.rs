//! Scalable GP inference on product grids.

mod matvec;
mod model;

pub use matvec::{kron_eigendecomposition, kron_eigenvalues, kron_matvec, AxisEigen};
pub use model::{
    grid_gp_fit, grid_gp_predict, kron_log_marginal_likelihood, CgDiagnostics, CgOptions, KronGpModel, KronGpState,
    KronLmlTerms, Preconditioner,
};
