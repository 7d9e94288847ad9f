//! Central finite-difference gradients, used as an independent oracle for the
//! analytic backward passes.

use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `(f(x + h·e) − f(x − h·e)) / 2h` for every coordinate `e` of `at`.
pub fn finite_diff_grad<T, F>(mut f: F, at: &Matrix<T>, h: T) -> Result<Matrix<T>>
where
    T: Scalar,
    F: FnMut(&Matrix<T>) -> T,
{
    if !(h > T::zero()) {
        return Err(SitError::arg(format!("step must be positive, got {h}")));
    }
    let mut probe = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let two_h = h + h;
    for k in 0..at.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SitError::Numeric(format!("objective not finite around coordinate {k}")));
        }
        grad.as_mut_slice()[k] = (up - down) / two_h;
    }
    Ok(grad)
}

/// Finite-difference gradient of a function of a vector.
pub fn finite_diff_grad_vec<T, F>(mut f: F, at: &[T], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let m = Matrix::from_vec(1, at.len(), at.to_vec())?;
    Ok(finite_diff_grad(|x: &Matrix<T>| f(x.as_slice()), &m, h)?.into_vec())
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`; zero when both are zero.
pub fn relative_error<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> f64 {
    relative_error_slices(a.as_slice(), b.as_slice())
}

pub fn relative_error_slices<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on different lengths");
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() + nb.sqrt();
    if denom < 1e-300 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}
