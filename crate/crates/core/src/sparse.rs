//! Compressed sparse row storage for complex operators.

use num_complex::Complex;
use num_traits::Zero;

use crate::block::Block;
use crate::scalar::{cast, widen, Precision, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<Complex<T>>,
}

impl<T: Real> SparseOperator<T> {
    /// Validates and wraps CSR arrays. Column indices in each row must be
    /// strictly ascending.
    pub fn from_csr(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<Complex<T>>,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::InvalidArgument("malformed CSR row pointer".into()));
        }
        if col_idx.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: col_idx.len(),
                got: values.len(),
            });
        }
        for i in 0..n {
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row_ptr[i] > row_ptr[i + 1]
                || cols.windows(2).any(|w| w[0] >= w[1])
                || cols.iter().any(|&c| c as usize >= n)
            {
                return Err(Error::InvalidArgument(format!("malformed CSR row {i}")));
            }
        }
        Ok(SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from (row, col, value) triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, Complex<T>)]) -> Result<Self> {
        let mut rows: Vec<Vec<(u32, Complex<T>)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("triplet ({i}, {j}) outside {n}×{n}")));
            }
            rows[i].push((j as u32, v));
        }
        Ok(Self::from_rows(rows))
    }

    pub(crate) fn from_rows(rows: Vec<Vec<(u32, Complex<T>)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseOperator {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![Complex::new(T::one(), T::zero()); n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[Complex<T>]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => Complex::zero(),
        }
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.n)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    /// y = A·x for one vector.
    pub fn matvec(&self, x: &[Complex<T>], y: &mut [Complex<T>]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = Complex::zero();
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *yi = acc;
        }
    }

    pub fn matvec_block(&self, x: &Block<T>, y: &mut Block<T>) -> Result<()> {
        if x.nrows() != self.n || y.nrows() != self.n || x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.nrows(),
            });
        }
        for j in 0..x.ncols() {
            self.matvec(x.col(j), y.col_mut(j));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        let mut y = Block::zeros(self.n, x.ncols());
        self.matvec_block(x, &mut y)?;
        Ok(y)
    }

    pub fn convert<U: Real>(&self) -> SparseOperator<U> {
        SparseOperator {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|&v| cast(widen(v))).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![Complex::zero(); self.nnz()];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let dst = next[c as usize];
                col_idx[dst] = i as u32;
                values[dst] = v;
                next[c as usize] += 1;
            }
        }
        SparseOperator {
            n: self.n,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Structural symmetry of the pattern.
    pub fn is_structurally_symmetric(&self) -> bool {
        let t = self.transpose();
        t.row_ptr == self.row_ptr && t.col_idx == self.col_idx
    }

    /// Dense column-major copy (tests and small oracles only).
    pub fn to_dense(&self) -> Vec<Complex<T>> {
        let mut d = vec![Complex::zero(); self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[c as usize * self.n + i] = v;
            }
        }
        d
    }
}

/// Rectangular real sparse matrix in CSR form (interpolation operators).
#[derive(Clone, Debug, PartialEq)]
pub struct RealCsr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl RealCsr {
    pub fn transpose(&self) -> RealCsr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0u32; self.values.len()];
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k] as usize;
                col_idx[next[c]] = i as u32;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        RealCsr {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }
}

/// Zᵀ·A·Z for square A (n×n) and real Z (n×m), scaled by `scale`.
pub fn galerkin_product<T: Real>(a: &SparseOperator<T>, z: &RealCsr, scale: f64) -> Result<SparseOperator<T>> {
    if z.nrows != a.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: z.nrows,
        });
    }
    let zt = z.transpose();
    let m = z.ncols;
    // AZ row by row, then Zᵀ(AZ) by accumulating rows of AZ into coarse rows.
    let mut az: Vec<Vec<(u32, Complex<f64>)>> = Vec::with_capacity(a.n());
    let mut acc = vec![Complex::<f64>::zero(); m];
    let mut mark = vec![false; m];
    let mut touched: Vec<u32> = Vec::new();
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            let c = c as usize;
            for k in z.row_ptr[c]..z.row_ptr[c + 1] {
                let j = z.col_idx[k];
                if !mark[j as usize] {
                    mark[j as usize] = true;
                    touched.push(j);
                }
                acc[j as usize] += widen(v) * z.values[k];
            }
        }
        touched.sort_unstable();
        az.push(touched.iter().map(|&j| (j, acc[j as usize])).collect());
        for &j in &touched {
            acc[j as usize] = Complex::zero();
            mark[j as usize] = false;
        }
        touched.clear();
    }
    let mut rows: Vec<Vec<(u32, Complex<T>)>> = Vec::with_capacity(m);
    for r in 0..m {
        for k in zt.row_ptr[r]..zt.row_ptr[r + 1] {
            let i = zt.col_idx[k] as usize;
            let w = zt.values[k];
            for &(j, v) in &az[i] {
                if !mark[j as usize] {
                    mark[j as usize] = true;
                    touched.push(j);
                }
                acc[j as usize] += v * w;
            }
        }
        touched.sort_unstable();
        rows.push(
            touched
                .iter()
                .map(|&j| (j, cast::<T>(acc[j as usize] * scale)))
                .collect(),
        );
        for &j in &touched {
            acc[j as usize] = Complex::zero();
            mark[j as usize] = false;
        }
        touched.clear();
    }
    Ok(SparseOperator::from_rows(rows))
}
