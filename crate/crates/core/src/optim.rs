use crate::error::{Result, SitError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `param − μ·grad`. Stateless: the result depends only on the arguments.
pub fn sgd_step<T: Scalar>(param: &Matrix<T>, grad: &Matrix<T>, mu: T) -> Result<Matrix<T>> {
    if mu < T::zero() {
        return Err(SitError::arg(format!("learning rate must be >= 0, got {mu}")));
    }
    if param.shape() != grad.shape() {
        return Err(SitError::Dimension {
            op: "sgd_step",
            left: param.shape(),
            right: grad.shape(),
        });
    }
    param.zip_map(grad, |p, g| p - mu * g)
}

pub fn sgd_step_vec<T: Scalar>(param: &[T], grad: &[T], mu: T) -> Result<Vec<T>> {
    if param.len() != grad.len() {
        return Err(SitError::Dimension {
            op: "sgd_step",
            left: (1, param.len()),
            right: (1, grad.len()),
        });
    }
    Ok(param.iter().zip(grad).map(|(&p, &g)| p - mu * g).collect())
}
