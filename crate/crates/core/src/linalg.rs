//! Dense row-major containers and the primitive kernels the models are
//! built from.
//!
//! A [`Matrix`] doubles as a batch of signals: each row is one sample, so
//! the batched kernels below take `x: [batch × len]` and return
//! `[batch × out_len]`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Matrix::from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "Matrix::from_rows",
                    left: (rows.len(), cols),
                    right: (r.len(), 1),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A single real-valued signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// A one-row batch holding this signal.
    pub fn to_row(&self) -> Matrix {
        Matrix {
            rows: 1,
            cols: self.0.len(),
            data: self.0.clone(),
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

/// `W x + b` for a single signal.
pub fn affine_apply(w: &Matrix, b: &Vector, x: &Vector) -> Result<Vector> {
    if w.cols != x.len() {
        return Err(Error::Dimension {
            op: "affine_apply",
            left: w.shape(),
            right: (x.len(), 1),
        });
    }
    if w.rows != b.len() {
        return Err(Error::Dimension {
            op: "affine_apply",
            left: w.shape(),
            right: (b.len(), 1),
        });
    }
    let y = affine_batch(w.as_slice(), w.rows, w.cols, b.as_slice(), &x.to_row());
    Ok(Vector(y.data))
}

pub fn relu(x: &Vector) -> Vector {
    Vector(x.0.iter().map(|&v| relu_scalar(v)).collect())
}

#[inline]
pub(crate) fn relu_scalar(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Geometry of a single-channel 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_len: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn out_len(&self) -> Result<usize> {
        let padded = self.in_len + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return Err(Error::Dimension {
                op: "conv1d",
                left: (self.kernel, self.stride),
                right: (self.in_len, self.padding),
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

/// Zero-padded cross-correlation of `x` with `kernel`, plus a scalar bias.
pub fn conv1d_apply(
    kernel: &Vector,
    bias: f64,
    x: &Vector,
    stride: usize,
    padding: usize,
) -> Result<Vector> {
    let shape = ConvShape {
        in_len: x.len(),
        kernel: kernel.len(),
        stride,
        padding,
    };
    let y = conv1d_batch(kernel.as_slice(), bias, shape, &x.to_row())?;
    Ok(Vector(y.data))
}

/// Batched `Y = X Wᵀ + b` with `W` stored row-major as `out × inp`.
pub(crate) fn affine_batch(w: &[f64], out: usize, inp: usize, bias: &[f64], x: &Matrix) -> Matrix {
    debug_assert_eq!(x.cols, inp);
    let batch = x.rows;
    let mut y = Matrix::zeros(batch, out);
    for r in 0..batch {
        y.row_mut(r).copy_from_slice(bias);
    }
    if batch > 0 && out > 0 && inp > 0 {
        // SAFETY: the slices cover exactly the described row-major layouts.
        unsafe {
            matrixmultiply::dgemm(
                batch,
                inp,
                out,
                1.0,
                x.data.as_ptr(),
                inp as isize,
                1,
                w.as_ptr(),
                1,
                inp as isize,
                1.0,
                y.data.as_mut_ptr(),
                out as isize,
                1,
            );
        }
    }
    y
}

/// Reverse of [`affine_batch`]: accumulates into `dw`/`dbias` and returns `dX`.
pub(crate) fn affine_batch_backward(
    w: &[f64],
    out: usize,
    inp: usize,
    x: &Matrix,
    dy: &Matrix,
    dw: &mut [f64],
    dbias: &mut [f64],
) -> Matrix {
    let batch = x.rows;
    let mut dx = Matrix::zeros(batch, inp);
    if batch == 0 || out == 0 || inp == 0 {
        return dx;
    }
    // SAFETY: as in `affine_batch`; dYᵀ is read through swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            batch,
            out,
            inp,
            1.0,
            dy.data.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            0.0,
            dx.data.as_mut_ptr(),
            inp as isize,
            1,
        );
        matrixmultiply::dgemm(
            out,
            batch,
            inp,
            1.0,
            dy.data.as_ptr(),
            1,
            out as isize,
            x.data.as_ptr(),
            inp as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
    for r in 0..batch {
        for (db, g) in dbias.iter_mut().zip(dy.row(r)) {
            *db += g;
        }
    }
    dx
}

pub(crate) fn conv1d_batch(
    kernel: &[f64],
    bias: f64,
    shape: ConvShape,
    x: &Matrix,
) -> Result<Matrix> {
    if x.cols != shape.in_len || kernel.len() != shape.kernel {
        return Err(Error::Dimension {
            op: "conv1d",
            left: (shape.kernel, shape.in_len),
            right: (kernel.len(), x.cols),
        });
    }
    let out_len = shape.out_len()?;
    let mut y = Matrix::zeros(x.rows, out_len);
    for r in 0..x.rows {
        let xr = x.row(r);
        let yr = &mut y.data[r * out_len..(r + 1) * out_len];
        for (o, yo) in yr.iter_mut().enumerate() {
            let mut acc = bias;
            for (k, &kv) in kernel.iter().enumerate() {
                let pos = (o * shape.stride + k) as isize - shape.padding as isize;
                if pos >= 0 && (pos as usize) < shape.in_len {
                    acc += kv * xr[pos as usize];
                }
            }
            *yo = acc;
        }
    }
    Ok(y)
}

pub(crate) fn conv1d_batch_backward(
    kernel: &[f64],
    shape: ConvShape,
    x: &Matrix,
    dy: &Matrix,
    dkernel: &mut [f64],
    dbias: &mut f64,
) -> Matrix {
    let mut dx = Matrix::zeros(x.rows, shape.in_len);
    let out_len = dy.cols;
    for r in 0..x.rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let dxr = &mut dx.data[r * shape.in_len..(r + 1) * shape.in_len];
        for (o, &g) in dyr.iter().enumerate().take(out_len) {
            *dbias += g;
            for (k, &kv) in kernel.iter().enumerate() {
                let pos = (o * shape.stride + k) as isize - shape.padding as isize;
                if pos >= 0 && (pos as usize) < shape.in_len {
                    let p = pos as usize;
                    dkernel[k] += g * xr[p];
                    dxr[p] += g * kv;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn affine_identity_and_zero_map() {
        let y = affine_apply(
            &Matrix::identity(2),
            &Vector::zeros(2),
            &vec![3.0, -1.0].into(),
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[3.0, -1.0]);
        let y = affine_apply(
            &Matrix::zeros(2, 2),
            &vec![5.0, 7.0].into(),
            &vec![1.0, 1.0].into(),
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[5.0, 7.0]);
    }

    #[test]
    fn affine_hand_matvec() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let y = affine_apply(&w, &vec![1.0, 1.0].into(), &vec![1.0, 1.0].into()).unwrap();
        assert_eq!(y.as_slice(), &[4.0, 8.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let err =
            affine_apply(&Matrix::zeros(2, 3), &Vector::zeros(2), &Vector::zeros(2)).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                op: "affine_apply",
                left: (2, 3),
                right: (2, 1)
            }
        );
        assert!(alloc::format!("{err}").contains("2x3"));
    }

    #[test]
    fn relu_cases() {
        assert_eq!(
            relu(&vec![-1.0, 0.0, 2.0].into()).as_slice(),
            &[0.0, 0.0, 2.0]
        );
        assert_eq!(relu(&vec![0.0, 0.0].into()).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn conv_examples() {
        let x: Vector = vec![4.0, 5.0, 6.0].into();
        assert_eq!(conv1d_apply(&vec![1.0].into(), 0.0, &x, 1, 0).unwrap(), x);
        let y = conv1d_apply(
            &vec![1.0, 1.0].into(),
            0.0,
            &vec![1.0, 2.0, 3.0].into(),
            1,
            0,
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[3.0, 5.0]);
        let y = conv1d_apply(
            &vec![1.0, 0.0].into(),
            0.0,
            &vec![1.0, 2.0, 3.0, 4.0].into(),
            2,
            0,
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn conv_padding_preserves_length() {
        let y = conv1d_apply(
            &vec![1.0, 1.0, 1.0].into(),
            0.5,
            &vec![1.0, 2.0, 3.0].into(),
            1,
            1,
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[3.5, 6.5, 5.5]);
    }

    #[test]
    fn conv_too_short_is_dimension_error() {
        let err =
            conv1d_apply(&vec![1.0; 4].into(), 0.0, &vec![1.0, 2.0].into(), 1, 0).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "conv1d", .. }));
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 0..32)) {
            let v: Vector = x.into();
            prop_assert_eq!(relu(&relu(&v)), relu(&v));
        }

        #[test]
        fn affine_is_linear_without_bias(
            w in proptest::collection::vec(-3.0f64..3.0, 12),
            x in proptest::collection::vec(-3.0f64..3.0, 4),
            z in proptest::collection::vec(-3.0f64..3.0, 4),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let w = Matrix::from_vec(3, 4, w).unwrap();
            let zero = Vector::zeros(3);
            let mix: Vector = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect::<Vec<_>>().into();
            let lhs = affine_apply(&w, &zero, &mix).unwrap();
            let fx = affine_apply(&w, &zero, &x.into()).unwrap();
            let fz = affine_apply(&w, &zero, &z.into()).unwrap();
            for i in 0..3 {
                let rhs = a * fx.as_slice()[i] + b * fz.as_slice()[i];
                prop_assert!((lhs.as_slice()[i] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn identity_kernel_is_identity(x in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let v: Vector = x.into();
            prop_assert_eq!(conv1d_apply(&vec![1.0].into(), 0.0, &v, 1, 0).unwrap(), v);
        }

        #[test]
        fn bounded_inputs_give_finite_outputs(
            w in proptest::collection::vec(-1e6f64..1e6, 16),
            x in proptest::collection::vec(-1e6f64..1e6, 4),
        ) {
            let w = Matrix::from_vec(4, 4, w).unwrap();
            let y = affine_apply(&w, &Vector::zeros(4), &x.into()).unwrap();
            prop_assert!(y.as_slice().iter().all(|v| v.is_finite()));
        }
    }
}
