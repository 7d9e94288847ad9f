use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Added to the variance of a dimension that is (numerically) constant.
pub const NORM_EPSILON: f64 = 1e-8;

/// Variances below this are treated as zero.
const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Concatenates each frame with `left` preceding and `right` following frames.
///
/// Indices before the first or after the last frame are clamped to the nearest
/// valid frame.
pub fn splice<T: Scalar>(frames: &Matrix<T>, left: usize, right: usize) -> Result<Matrix<T>> {
    let n = frames.rows();
    if n == 0 {
        return Err(SitError::arg("cannot splice an empty frame sequence"));
    }
    let d = frames.cols();
    let width = (left + right + 1) * d;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        for k in 0..=(left + right) {
            let src = (i + k).saturating_sub(left).min(n - 1);
            data.extend_from_slice(frames.row(src));
        }
    }
    Matrix::from_vec(n, width, data)
}

/// Per-dimension mean and standard deviation of a training partition.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    /// Dimensions whose variance was zero and got [`NORM_EPSILON`] added.
    pub degenerate: Vec<usize>,
}

impl<T: Scalar> NormStats<T> {
    /// `(x − mean) / std` with these stored statistics.
    pub fn apply(&self, frames: &Matrix<T>) -> Result<Matrix<T>> {
        if frames.cols() != self.mean.len() {
            return Err(SitError::Dimension {
                op: "normalize",
                left: frames.shape(),
                right: (1, self.mean.len()),
            });
        }
        let mut out = frames.clone();
        for i in 0..out.rows() {
            for ((v, &m), &s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> NormStats<U> {
        NormStats {
            mean: self.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
            std: self.std.iter().map(|v| U::lit(v.as_f64())).collect(),
            degenerate: self.degenerate.clone(),
        }
    }
}

/// Global mean and variance normalization; returns the normalized frames and the
/// statistics to re-apply to other partitions.
pub fn normalize<T: Scalar>(frames: &Matrix<T>) -> Result<(Matrix<T>, NormStats<T>)> {
    if frames.rows() < 2 {
        return Err(SitError::arg(format!(
            "normalization needs at least 2 frames, got {}",
            frames.rows()
        )));
    }
    let n = T::from_count(frames.rows());
    let mean = frames.column_means();
    let mut var = vec![T::zero(); frames.cols()];
    for row in frames.row_iter() {
        for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let c = v - m;
            *acc += c * c;
        }
    }
    let mut degenerate = Vec::new();
    let std = var
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            let v = s / n;
            if v.as_f64() < DEGENERATE_VARIANCE {
                degenerate.push(j);
                (v + T::lit(NORM_EPSILON)).sqrt()
            } else {
                v.sqrt()
            }
        })
        .collect();
    if !degenerate.is_empty() {
        log::warn!("zero variance in dimensions {degenerate:?}; added epsilon {NORM_EPSILON}");
    }
    let stats = NormStats { mean, std, degenerate };
    let out = stats.apply(frames)?;
    Ok((out, stats))
}
