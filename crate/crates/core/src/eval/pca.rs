//! Principal component analysis through a symmetric eigendecomposition of the
//! sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-norm principal axis per row, by decreasing variance.
    pub components: Matrix<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components. Each axis is oriented so its largest-magnitude
    /// loading is positive, which makes the result independent of the solver's
    /// sign choice.
    pub fn fit<T: Scalar>(data: &Matrix<T>, k: usize) -> Result<Pca> {
        let (n, d) = data.shape();
        if n < 2 {
            return Err(SitError::arg(format!("PCA needs at least 2 points, got {n}")));
        }
        if k == 0 || k > d {
            return Err(SitError::arg(format!("cannot take {k} components of {d}-d data")));
        }
        let x: Matrix<f64> = data.cast();
        let mean = x.column_means();
        let centred = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
        let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut rows = Vec::with_capacity(k);
        let mut explained = Vec::with_capacity(k);
        for &c in order.iter().take(k) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let mut pivot = 0;
            for (j, v) in axis.iter().enumerate() {
                if v.abs() > axis[pivot].abs() {
                    pivot = j;
                }
            }
            if axis[pivot] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            rows.push(axis);
            explained.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(Pca {
            mean,
            components: Matrix::from_rows(&rows)?,
            explained_variance: explained,
        })
    }

    pub fn transform<T: Scalar>(&self, data: &Matrix<T>) -> Result<Matrix<f64>> {
        if data.cols() != self.mean.len() {
            return Err(SitError::Dimension {
                op: "pca transform",
                left: data.shape(),
                right: (1, self.mean.len()),
            });
        }
        let x: Matrix<f64> = data.cast();
        let neg: Vec<f64> = self.mean.iter().map(|m| -m).collect();
        x.add_row_vector(&neg)?.matmul_nt(&self.components)
    }

    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self, coords: &Matrix<f64>) -> Result<Matrix<f64>> {
        coords.matmul(&self.components)?.add_row_vector(&self.mean)
    }
}
