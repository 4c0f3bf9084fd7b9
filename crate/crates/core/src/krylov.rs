//! Right-preconditioned GMRES/FGMRES over blocks of right-hand sides.
//!
//! Each RHS runs its own Arnoldi process; the operator and preconditioner
//! are applied once per iteration to the block of still-active vectors.

use std::time::Instant;

use num_complex::{Complex, Complex64};
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{dotc, norm2, Block};
use crate::scalar::{cast, widen, Precision, Real};
use crate::sparse::SparseOperator;
use crate::{Error, Result};

/// Linear (or, for flexible solves, merely deterministic) map on blocks.
pub trait BlockOperator<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Block<T>) -> Result<Block<T>>;
}

impl<T: Real> BlockOperator<T> for SparseOperator<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        if x.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.nrows(),
            });
        }
        let mut y = Block::zeros(self.n(), x.ncols());
        for c in 0..x.ncols() {
            let xc = x.col(c);
            y.col_mut(c)
                .par_chunks_mut(4096)
                .enumerate()
                .for_each(|(b, chunk)| {
                    for (k, yi) in chunk.iter_mut().enumerate() {
                        let (cols, vals) = self.row(b * 4096 + k);
                        let mut acc = Complex::zero();
                        for (&j, &v) in cols.iter().zip(vals) {
                            acc += v * xc[j as usize];
                        }
                        *yi = acc;
                    }
                });
        }
        Ok(y)
    }
}

/// The identity map of a given dimension.
#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl<T: Real> BlockOperator<T> for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        Ok(x.clone())
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    pub dim: usize,
    pub f: F,
}

impl<T: Real, F> BlockOperator<T> for FnOperator<F>
where
    F: Fn(&Block<T>) -> Result<Block<T>> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        (self.f)(x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ortho {
    #[default]
    Cgs,
    Mgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrylovConfig {
    /// Threshold on ‖Au−f‖²/‖f‖².
    pub tol: f64,
    pub max_iterations: usize,
    /// Restart length; `None` means a single cycle up to `max_iterations`.
    pub restart: Option<usize>,
    pub ortho: Ortho,
    pub precision: Precision,
    pub flexible: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tol: 1e-4,
            max_iterations: 500,
            restart: None,
            ortho: Ortho::Cgs,
            precision: Precision::Double,
            flexible: false,
        }
    }
}

impl KrylovConfig {
    pub fn with_tol(tol: f64) -> Self {
        KrylovConfig {
            tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidArgument(format!("tolerance {} outside (0, 1)", self.tol)));
        }
        if self.restart == Some(0) || self.max_iterations == 0 {
            return Err(Error::InvalidArgument("restart and max_iterations must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub precision: Precision,
    pub iterations: Vec<usize>,
    /// Recurrence backward-error estimates, starting with iteration 0.
    pub history: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    /// Explicitly recomputed ‖Au−f‖²/‖f‖² of the returned solution.
    pub backward_error: Vec<f64>,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

impl SolveReport {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

/// ‖Au−f‖₂²/‖f‖₂², the squared relative residual.
pub fn backward_error<T: Real>(a: &dyn BlockOperator<T>, u: &Block<T>, f: &Block<T>) -> Result<Vec<f64>> {
    let au = a.apply(u)?;
    (0..f.ncols())
        .map(|c| {
            let fn2: f64 = f.col(c).iter().map(|v| widen(*v).norm_sqr()).sum();
            if fn2 == 0.0 {
                return Err(Error::ZeroRhs);
            }
            let r2: f64 = au
                .col(c)
                .iter()
                .zip(f.col(c))
                .map(|(x, y)| (widen(*x) - widen(*y)).norm_sqr())
                .sum();
            Ok(r2 / fn2)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Orthogonalized {
    pub coefficients: Vec<Complex64>,
    pub norm: f64,
    /// The remainder vanished to working precision.
    pub breakdown: bool,
}

/// Orthogonalizes `w` against an orthonormal basis in place and normalizes
/// it unless it (numerically) lies in the span.
pub fn orthogonalize<T: Real>(basis: &[Vec<Complex<T>>], w: &mut [Complex<T>], scheme: Ortho) -> Orthogonalized {
    let w0 = norm2(w);
    let mut coefficients = Vec::with_capacity(basis.len());
    match scheme {
        Ortho::Cgs => {
            let h: Vec<Complex<T>> = basis.iter().map(|v| dotc(v, w)).collect();
            for (v, &hi) in basis.iter().zip(&h) {
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= *vi * hi;
                }
            }
            coefficients.extend(h.into_iter().map(widen));
        }
        Ortho::Mgs => {
            for v in basis {
                let hi = dotc(v, w);
                for (wi, vi) in w.iter_mut().zip(v) {
                    *wi -= *vi * hi;
                }
                coefficients.push(widen(hi));
            }
        }
    }
    let norm = norm2(w);
    let breakdown = !(norm > 100.0 * T::epsilon().as_f64() * w0);
    if !breakdown {
        let inv = T::one() / T::lit(norm);
        w.iter_mut().for_each(|x| *x = x.scale(inv));
    }
    Orthogonalized {
        coefficients,
        norm,
        breakdown,
    }
}

struct Process<T> {
    col: usize,
    fnorm2: f64,
    iterations: usize,
    history: Vec<f64>,
    v: Vec<Vec<Complex<T>>>,
    z: Vec<Vec<Complex<T>>>,
    /// Hessenberg columns after rotation (upper triangular part).
    r: Vec<Vec<Complex64>>,
    rot: Vec<(f64, Complex64)>,
    g: Vec<Complex64>,
    open: bool,
    breakdown: bool,
}

fn givens(a: Complex64, b: Complex64) -> (f64, Complex64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, Complex64::zero());
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb);
    }
    let r = na.hypot(nb);
    (na / r, (a / na) * b.conj() / r)
}

impl<T: Real> Process<T> {
    /// Appends Hessenberg column `h` (length k+2) and returns |g_{k+1}|.
    fn push_column(&mut self, mut h: Vec<Complex64>) -> f64 {
        let k = h.len() - 2;
        for (i, &(c, s)) in self.rot.iter().enumerate() {
            let (x, y) = (h[i], h[i + 1]);
            h[i] = x * c + s * y;
            h[i + 1] = -s.conj() * x + y * c;
        }
        let (c, s) = givens(h[k], h[k + 1]);
        let x = h[k];
        h[k] = x * c + s * h[k + 1];
        h[k + 1] = Complex64::zero();
        self.rot.push((c, s));
        let gk = self.g[k];
        self.g[k] = gk * c;
        self.g.push(-s.conj() * gk);
        h.truncate(k + 1);
        self.r.push(h);
        self.g[k + 1].norm()
    }

    /// Least-squares coefficients y of the current cycle.
    fn coefficients(&self) -> Vec<Complex64> {
        let k = self.r.len();
        let mut y = self.g[..k].to_vec();
        for j in (0..k).rev() {
            let d = self.r[j][j];
            y[j] = if d == Complex64::zero() { Complex64::zero() } else { y[j] / d };
            for i in 0..j {
                let t = self.r[j][i] * y[j];
                y[i] -= t;
            }
        }
        y
    }
}

fn combine<T: Real>(vectors: &[Vec<Complex<T>>], y: &[Complex64], out: &mut [Complex<T>]) {
    for (v, &yi) in vectors.iter().zip(y) {
        let c = cast::<T>(yi);
        for (o, x) in out.iter_mut().zip(v) {
            *o += *x * c;
        }
    }
}

fn solve_impl<T: Real>(
    a: &dyn BlockOperator<T>,
    m: &dyn BlockOperator<T>,
    f: &Block<T>,
    cfg: &KrylovConfig,
    flexible: bool,
) -> Result<(Block<T>, SolveReport)> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(Error::InvalidArgument(format!(
            "configuration asks for {} precision but the solver runs in {}",
            cfg.precision.name(),
            T::PRECISION.name()
        )));
    }
    let n = a.dim();
    if f.nrows() != n || m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if f.nrows() != n { f.nrows() } else { m.dim() },
        });
    }
    let t0 = Instant::now();
    let nrhs = f.ncols();
    let fnorm2: Vec<f64> = (0..nrhs)
        .map(|c| f.col(c).iter().map(|v| widen(*v).norm_sqr()).sum())
        .collect();
    let mut u = Block::zeros(n, nrhs);
    let mut report = SolveReport {
        precision: T::PRECISION,
        iterations: vec![0; nrhs],
        history: vec![Vec::new(); nrhs],
        converged: vec![false; nrhs],
        backward_error: vec![1.0; nrhs],
        ..Default::default()
    };
    for c in 0..nrhs {
        if fnorm2[c] == 0.0 {
            report.converged[c] = true;
            report.backward_error[c] = 0.0;
            report.history[c].push(0.0);
        }
    }
    let cycle_len = cfg.restart.unwrap_or(cfg.max_iterations);
    let mut stalled = vec![false; nrhs];
    let mut first = true;
    loop {
        let cols: Vec<usize> = (0..nrhs)
            .filter(|&c| !report.converged[c] && !stalled[c] && report.iterations[c] < cfg.max_iterations)
            .collect();
        if cols.is_empty() {
            break;
        }
        let r = if first {
            f.select_columns(&cols)
        } else {
            let au = a.apply(&u.select_columns(&cols))?;
            let mut r = f.select_columns(&cols);
            for k in 0..cols.len() {
                for (ri, ai) in r.col_mut(k).iter_mut().zip(au.col(k)) {
                    *ri -= *ai;
                }
            }
            r
        };
        let mut procs: Vec<Process<T>> = cols
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut v0 = r.col(k).to_vec();
                let beta = norm2(&v0);
                if beta > 0.0 {
                    let inv = T::one() / T::lit(beta);
                    v0.iter_mut().for_each(|x| *x = x.scale(inv));
                }
                let history = if first { vec![beta * beta / fnorm2[c]] } else { Vec::new() };
                Process {
                    col: c,
                    fnorm2: fnorm2[c],
                    iterations: report.iterations[c],
                    history,
                    v: vec![v0],
                    z: Vec::new(),
                    r: Vec::new(),
                    rot: Vec::new(),
                    g: vec![Complex64::new(beta, 0.0)],
                    open: beta > 0.0,
                    breakdown: false,
                }
            })
            .collect();
        first = false;
        for step in 0..cycle_len {
            let act: Vec<usize> = (0..procs.len()).filter(|&p| procs[p].open).collect();
            if act.is_empty() {
                break;
            }
            let vblk = Block::from_columns(&act.iter().map(|&p| procs[p].v[step].clone()).collect::<Vec<_>>());
            let zblk = m.apply(&vblk)?;
            let wblk = a.apply(&zblk)?;
            let mut work: Vec<Option<(Vec<Complex<T>>, Vec<Complex<T>>)>> = (0..procs.len()).map(|_| None).collect();
            for (k, &p) in act.iter().enumerate() {
                let z = if flexible { zblk.col(k).to_vec() } else { Vec::new() };
                work[p] = Some((z, wblk.col(k).to_vec()));
            }
            drop((vblk, zblk, wblk));
            procs.par_iter_mut().zip(work).for_each(|(proc, item)| {
                let Some((z, mut w)) = item else { return };
                let o = orthogonalize(&proc.v, &mut w, cfg.ortho);
                let mut h = o.coefficients;
                h.push(Complex64::new(o.norm, 0.0));
                let est = proc.push_column(h);
                if flexible {
                    proc.z.push(z);
                }
                let be = est * est / proc.fnorm2;
                proc.history.push(be);
                proc.iterations += 1;
                proc.breakdown = o.breakdown;
                if o.breakdown || be <= cfg.tol || proc.iterations >= cfg.max_iterations || step + 1 == cycle_len {
                    proc.open = false;
                } else {
                    proc.v.push(w);
                }
            });
        }
        // Assemble the cycle's update.
        let ys: Vec<Vec<Complex64>> = procs.iter().map(Process::coefficients).collect();
        if flexible {
            for (proc, y) in procs.iter().zip(&ys) {
                combine(&proc.z, y, u.col_mut(proc.col));
            }
        } else {
            let mut t = Block::zeros(n, procs.len());
            for (k, (proc, y)) in procs.iter().zip(&ys).enumerate() {
                combine(&proc.v, y, t.col_mut(k));
            }
            let mt = m.apply(&t)?;
            for (k, proc) in procs.iter().enumerate() {
                for (ui, x) in u.col_mut(proc.col).iter_mut().zip(mt.col(k)) {
                    *ui += *x;
                }
            }
        }
        // Explicit residual of the updated iterates.
        let cyc: Vec<usize> = procs.iter().map(|p| p.col).collect();
        let au = a.apply(&u.select_columns(&cyc))?;
        for (k, proc) in procs.into_iter().enumerate() {
            let c = proc.col;
            let r2: f64 = au
                .col(k)
                .iter()
                .zip(f.col(c))
                .map(|(x, y)| (widen(*x) - widen(*y)).norm_sqr())
                .sum();
            let be = r2 / fnorm2[c];
            let progressed = proc.iterations > report.iterations[c];
            report.iterations[c] = proc.iterations;
            report.history[c].extend(proc.history);
            report.backward_error[c] = be;
            report.converged[c] = be <= cfg.tol;
            if !report.converged[c] && (proc.breakdown || !progressed) {
                stalled[c] = true;
            }
        }
    }
    report.solve_seconds = t0.elapsed().as_secs_f64();
    Ok((u, report))
}

/// Right-preconditioned GMRES: solves A M⁻¹ y = f and returns u = M⁻¹ y.
pub fn gmres<T: Real>(
    a: &dyn BlockOperator<T>,
    m: &dyn BlockOperator<T>,
    f: &Block<T>,
    cfg: &KrylovConfig,
) -> Result<(Block<T>, SolveReport)> {
    solve_impl(a, m, f, cfg, cfg.flexible)
}

/// Flexible GMRES: keeps the preconditioned vectors, so `m` may vary
/// between iterations (e.g. an inner iterative solve).
pub fn fgmres<T: Real>(
    a: &dyn BlockOperator<T>,
    m: &dyn BlockOperator<T>,
    f: &Block<T>,
    cfg: &KrylovConfig,
) -> Result<(Block<T>, SolveReport)> {
    solve_impl(a, m, f, cfg, true)
}
