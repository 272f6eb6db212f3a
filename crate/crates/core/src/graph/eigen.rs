//! Dense symmetric eigendecomposition, backed by nalgebra.

use nalgebra::DMatrix;

use crate::error::{DftError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `j` is the unit eigenvector for `values[j]`.
    pub vectors: Tensor,
}

pub fn symmetric_eigen(a: &Tensor) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(DftError::Shape {
            op: "symmetric_eigen",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Tensor::zeros(0, 0),
        });
    }
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(DftError::contract("symmetric_eigen: non-finite entry"));
    }
    let m = DMatrix::from_row_slice(n, n, a.data());
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vectors = Tensor::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new, eig.eigenvectors[(r, old)]);
        }
    }
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
    })
}
