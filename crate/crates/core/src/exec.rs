//! The primitive-operation interface the model architectures are written
//! against. [`Eval`] computes values directly; [`crate::tape::Tape`] records
//! them for a reverse pass.

use crate::error::{Error, Result};
use crate::linalg::{affine_batch, conv1d_batch, relu_scalar, Matrix};
use crate::model::params::{ModelParams, OpKind, ParamId};

pub trait Exec {
    type Value: Clone;

    /// Applies a parameterized operator (dense affine map or 1-D conv).
    fn apply(&mut self, op: ParamId, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// A zero value with the batch size of `like` and `len` columns.
    fn zeros(&mut self, like: &Self::Value, len: usize) -> Self::Value;
}

/// Direct evaluation over batches stored as `[batch × len]` matrices.
pub struct Eval<'p> {
    params: &'p ModelParams,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Eval { params }
    }
}

pub(crate) fn apply_operator(params: &ModelParams, op: ParamId, x: &Matrix) -> Result<Matrix> {
    let spec = params
        .specs()
        .get(op.0)
        .ok_or_else(|| Error::Tape(alloc::format!("unknown operator {}", op.0)))?;
    let vals = params.operator(op);
    match spec.kind {
        OpKind::Dense { out, inp } => {
            if x.cols() != inp {
                return Err(Error::Dimension {
                    op: "affine",
                    left: (out, inp),
                    right: x.shape(),
                });
            }
            let (w, b) = vals.split_at(out * inp);
            Ok(affine_batch(w, out, inp, b, x))
        }
        OpKind::Conv(shape) => {
            let (k, b) = vals.split_at(shape.kernel);
            conv1d_batch(k, b[0], shape, x)
        }
    }
}

pub(crate) fn zip_with(
    op: &'static str,
    a: &Matrix,
    b: &Matrix,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

pub(crate) fn relu_matrix(x: &Matrix) -> Matrix {
    let data = x.as_slice().iter().map(|&v| relu_scalar(v)).collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

impl Exec for Eval<'_> {
    type Value = Matrix;

    fn apply(&mut self, op: ParamId, x: &Matrix) -> Result<Matrix> {
        apply_operator(self.params, op, x)
    }

    fn relu(&mut self, x: &Matrix) -> Matrix {
        relu_matrix(x)
    }

    fn add(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        zip_with("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        zip_with("sub", a, b, |x, y| x - y)
    }

    fn zeros(&mut self, like: &Matrix, len: usize) -> Matrix {
        Matrix::zeros(like.rows(), len)
    }
}
