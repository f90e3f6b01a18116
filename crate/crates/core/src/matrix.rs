//! Row-major dense matrix and the three GEMM shapes an MLP needs.

use crate::error::{CoreError, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::Shape {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(CoreError::Shape {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.rows != other.rows {
            return Err(CoreError::Shape {
                what: "hcat rows",
                expected: self.rows,
                got: other.rows,
            });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Vertical concatenation.
    pub fn vcat(&self, other: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != other.cols {
            return Err(CoreError::Shape {
                what: "vcat cols",
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Matrix<T> {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// `y = x·Wᵀ + b`, with `x: B×in`, `w: out×in` row-major, `b: out`.
pub(crate) fn affine_nt<T: Scalar>(x: &Matrix<T>, w: &[T], b: &[T], out: usize) -> Matrix<T> {
    let (rows, inp) = (x.rows, x.cols);
    debug_assert_eq!(w.len(), out * inp);
    let mut y = Matrix::zeros(rows, out);
    for r in 0..rows {
        y.row_mut(r).copy_from_slice(b);
    }
    if rows > 0 && out > 0 && inp > 0 {
        unsafe {
            T::gemm(
                rows,
                inp,
                out,
                T::one(),
                x.data.as_ptr(),
                inp as isize,
                1,
                w.as_ptr(),
                1,
                inp as isize,
                T::one(),
                y.data.as_mut_ptr(),
                out as isize,
                1,
            );
        }
    }
    y
}

/// `dw += dyᵀ·x`, with `dy: B×out`, `x: B×in`, `dw: out×in`.
pub(crate) fn acc_tn<T: Scalar>(dy: &Matrix<T>, x: &Matrix<T>, dw: &mut [T]) {
    let (rows, out, inp) = (dy.rows, dy.cols, x.cols);
    debug_assert_eq!(dw.len(), out * inp);
    if rows == 0 || out == 0 || inp == 0 {
        return;
    }
    unsafe {
        T::gemm(
            out,
            rows,
            inp,
            T::one(),
            dy.data.as_ptr(),
            1,
            out as isize,
            x.data.as_ptr(),
            inp as isize,
            1,
            T::one(),
            dw.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
}

/// `dx = dy·W`, with `dy: B×out`, `w: out×in`.
pub(crate) fn mul_nn<T: Scalar>(dy: &Matrix<T>, w: &[T], inp: usize) -> Matrix<T> {
    let (rows, out) = (dy.rows, dy.cols);
    let mut dx = Matrix::zeros(rows, inp);
    if rows == 0 || out == 0 || inp == 0 {
        return dx;
    }
    unsafe {
        T::gemm(
            rows,
            out,
            inp,
            T::one(),
            dy.data.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            inp as isize,
            1,
            T::zero(),
            dx.data.as_mut_ptr(),
            inp as isize,
            1,
        );
    }
    dx
}
