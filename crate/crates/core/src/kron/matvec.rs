//! Kronecker-structured products and per-axis eigendecompositions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MODULE: &str = "gp-kronecker";

/// A borrowed dense matrix with explicit strides, so a factor and its
/// transpose can share storage.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> MatView<'a> {
    pub(crate) fn of(m: &'a DMatrix<f64>) -> Self {
        Self { data: m.as_slice(), rows: m.nrows(), cols: m.ncols(), rs: 1, cs: m.nrows() as isize }
    }

    pub(crate) fn transposed(m: &'a DMatrix<f64>) -> Self {
        Self { data: m.as_slice(), rows: m.ncols(), cols: m.nrows(), rs: m.nrows() as isize, cs: 1 }
    }

    pub(crate) fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }
}

/// `(M_1 ⊗ … ⊗ M_D)·v` for a row-major tensor `v` with shape given by the
/// factor column counts. Each factor is applied along its own axis with one
/// GEMM per leading block.
pub(crate) fn kron_apply(ops: &[MatView], v: &[f64]) -> Vec<f64> {
    let mut shape: Vec<usize> = ops.iter().map(|m| m.cols).collect();
    debug_assert_eq!(v.len(), shape.iter().product::<usize>());
    let mut cur = v.to_vec();
    for (d, op) in ops.iter().enumerate() {
        let pre: usize = shape[..d].iter().product();
        let post: usize = shape[d + 1..].iter().product();
        let n = op.cols;
        let r = op.rows;
        let mut out = vec![0.0; pre * r * post];
        if pre * r * post > 0 && n > 0 {
            // SAFETY: every pointer/stride pair below addresses elements inside
            // the corresponding slice, as the shapes were just derived from
            // those slice lengths.
            unsafe {
                if post == 1 {
                    matrixmultiply::dgemm(
                        pre,
                        n,
                        r,
                        1.0,
                        cur.as_ptr(),
                        n as isize,
                        1,
                        op.data.as_ptr(),
                        op.cs,
                        op.rs,
                        0.0,
                        out.as_mut_ptr(),
                        r as isize,
                        1,
                    );
                } else {
                    for p in 0..pre {
                        matrixmultiply::dgemm(
                            post,
                            n,
                            r,
                            1.0,
                            cur.as_ptr().add(p * n * post),
                            1,
                            post as isize,
                            op.data.as_ptr(),
                            op.cs,
                            op.rs,
                            0.0,
                            out.as_mut_ptr().add(p * r * post),
                            1,
                            post as isize,
                        );
                    }
                }
            }
        }
        shape[d] = r;
        cur = out;
    }
    cur
}

/// `(K_1 ⊗ … ⊗ K_D)·v` without forming the product. Factors may be
/// rectangular; `v` must have length equal to the product of column counts.
pub fn kron_matvec(factors: &[DMatrix<f64>], v: &[f64]) -> Result<Vec<f64>> {
    if factors.is_empty() {
        return Err(Error::invalid(MODULE, "no Kronecker factors"));
    }
    let expected: usize = factors.iter().map(|f| f.ncols()).product();
    if v.len() != expected {
        return Err(Error::invalid(MODULE, format!("vector length {} does not match factor product {expected}", v.len())));
    }
    let ops: Vec<MatView> = factors.iter().map(MatView::of).collect();
    Ok(kron_apply(&ops, v))
}

/// Eigenpairs of one factor, eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisEigen {
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`.
    pub vectors: DMatrix<f64>,
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::invalid(MODULE, "Kronecker factor must be square and non-empty"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::invalid(MODULE, "Kronecker factor is not symmetric"));
            }
        }
    }
    Ok(())
}

/// Symmetric eigendecomposition of each factor. The eigenvalues of the full
/// Kronecker product are all products of one eigenvalue per factor.
pub fn kron_eigendecomposition(factors: &[DMatrix<f64>]) -> Result<Vec<AxisEigen>> {
    factors
        .iter()
        .map(|f| {
            check_symmetric(f)?;
            let eig = f.clone().symmetric_eigen();
            let mut order: Vec<usize> = (0..f.nrows()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            let vectors = DMatrix::from_fn(f.nrows(), f.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
            Ok(AxisEigen { values, vectors })
        })
        .collect()
}

/// Eigenvalues of the Kronecker product, row-major over the factor indices.
pub fn kron_eigenvalues(eigs: &[AxisEigen]) -> Vec<f64> {
    let mut out = vec![1.0];
    for e in eigs {
        out = out.iter().flat_map(|&a| e.values.iter().map(move |&b| a * b)).collect();
    }
    out
}
