//! Column-major blocks of complex vectors (one column per right-hand side).

use num_complex::Complex;
use num_traits::Zero;

use crate::scalar::{cast, widen, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> Block<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Block {
            nrows,
            ncols,
            data: vec![Complex::zero(); nrows * ncols],
        }
    }

    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "block storage size");
        Block { nrows, ncols, data }
    }

    pub fn from_columns(cols: &[Vec<Complex<T>>]) -> Self {
        let nrows = cols.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * cols.len());
        for c in cols {
            assert_eq!(c.len(), nrows, "ragged columns");
            data.extend_from_slice(c);
        }
        Block {
            nrows,
            ncols: cols.len(),
            data,
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[Complex<T>] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [Complex<T>] {
        &mut self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex<T>]> {
        self.data.chunks(self.nrows.max(1)).take(self.ncols)
    }

    pub fn columns_mut(&mut self) -> impl Iterator<Item = &mut [Complex<T>]> {
        let n = self.ncols;
        self.data.chunks_mut(self.nrows.max(1)).take(n)
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex<T>) {
        self.data[j * self.nrows + i] = v;
    }

    /// New block holding the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut out = Block::zeros(self.nrows, cols.len());
        for (k, &j) in cols.iter().enumerate() {
            out.col_mut(k).copy_from_slice(self.col(j));
        }
        out
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|z| *z = Complex::zero());
    }

    pub fn convert<U: Real>(&self) -> Block<U> {
        Block {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self.data.iter().map(|&z| cast(widen(z))).collect(),
        }
    }

    /// Euclidean norm of each column, accumulated in double precision.
    pub fn column_norms(&self) -> Vec<f64> {
        self.columns().map(norm2).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| widen(*a - *b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest per-column ‖a − b‖/‖b‖.
    pub fn max_relative_diff(&self, reference: &Self) -> f64 {
        assert_eq!(self.ncols, reference.ncols);
        let mut worst: f64 = 0.0;
        for j in 0..self.ncols {
            let num: f64 = self
                .col(j)
                .iter()
                .zip(reference.col(j))
                .map(|(a, b)| widen(*a - *b).norm_sqr())
                .sum();
            let den: f64 = reference.col(j).iter().map(|b| widen(*b).norm_sqr()).sum();
            let r = if den > 0.0 {
                (num / den).sqrt()
            } else {
                num.sqrt()
            };
            worst = worst.max(r);
        }
        worst
    }
}

/// Euclidean norm accumulated in double precision.
pub fn norm2<T: Real>(v: &[Complex<T>]) -> f64 {
    v.iter().map(|z| widen(*z).norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian inner product ⟨a, b⟩ = Σ conj(a_i)·b_i.
#[inline]
pub fn dotc<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    // Blocked accumulation keeps single-precision rounding at O(√n·eps).
    let mut total = Complex::<T>::zero();
    for (ca, cb) in a.chunks(512).zip(b.chunks(512)) {
        let mut re = T::zero();
        let mut im = T::zero();
        for (x, y) in ca.iter().zip(cb) {
            re += x.re * y.re + x.im * y.im;
            im += x.re * y.im - x.im * y.re;
        }
        total += Complex::new(re, im);
    }
    total
}

/// y ← y + alpha·x
#[inline]
pub fn axpy<T: Real>(alpha: Complex<T>, x: &[Complex<T>], y: &mut [Complex<T>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
