//! Multifrontal sparse LU with geometric nested-dissection ordering.
//!
//! Each front gathers the fully summed variables of one tree node plus its
//! boundary (variables of ancestor nodes it couples to). Children's Schur
//! complements are extend-added into the parent front. Pivoting is partial
//! and restricted to the fully summed rows of a front.

use std::time::Instant;

use num_complex::Complex;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::partition::IndexBox;
use crate::scalar::{widen, Precision, Real};
use crate::sparse::SparseOperator;
use crate::{Error, Result};

/// Fill-reducing ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ordering {
    /// One dense front over all unknowns.
    Natural,
    /// Nested dissection by plane separators of a box with x-fastest
    /// numbering.
    Geometric { dims: [usize; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuOptions {
    pub ordering: Ordering,
    /// Largest box left undissected.
    pub leaf_size: usize,
    /// Panel width of the blocked dense factorization.
    pub panel: usize,
}

impl LuOptions {
    pub fn geometric(dims: [usize; 3]) -> Self {
        LuOptions {
            ordering: Ordering::Geometric { dims },
            leaf_size: 16,
            panel: 32,
        }
    }

    pub fn natural() -> Self {
        LuOptions {
            ordering: Ordering::Natural,
            leaf_size: 16,
            panel: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub n: usize,
    pub fronts: usize,
    pub largest_front: usize,
    /// Stored complex entries in the factors.
    pub factor_entries: usize,
    pub factor_bytes: usize,
    pub seconds: f64,
}

struct SymbolicNode {
    vars: Vec<u32>,
    bnd: Vec<u32>,
    children: Vec<usize>,
}

struct FrontFactor<T> {
    vars: Vec<u32>,
    bnd: Vec<u32>,
    piv: Vec<u32>,
    /// (p+q)×p column-major: unit-lower L11 and U11 in the top p rows, L21 below.
    l: Vec<Complex<T>>,
    /// p×q column-major.
    u12: Vec<Complex<T>>,
}

pub struct LocalFactorization<T> {
    n: usize,
    fronts: Vec<FrontFactor<T>>,
    pub stats: FactorStats,
}

fn nested_dissection(dims: [usize; 3], leaf: usize) -> Vec<SymbolicNode> {
    fn rec(b: IndexBox, dims: [usize; 3], leaf: usize, nodes: &mut Vec<SymbolicNode>) -> usize {
        let d = b.dims();
        let axis = (0..3).max_by_key(|&a| (d[a], 3 - a)).unwrap();
        let idx = |p: [usize; 3]| (p[0] + dims[0] * (p[1] + dims[1] * p[2])) as u32;
        if b.len() <= leaf || d[axis] < 3 {
            nodes.push(SymbolicNode {
                vars: b.points().map(idx).collect(),
                bnd: Vec::new(),
                children: Vec::new(),
            });
            return nodes.len() - 1;
        }
        let m = b.lo[axis] + d[axis] / 2;
        let (mut left, mut sep, mut right) = (b, b, b);
        left.hi[axis] = m;
        sep.lo[axis] = m;
        sep.hi[axis] = m + 1;
        right.lo[axis] = m + 1;
        let l = rec(left, dims, leaf, nodes);
        let r = rec(right, dims, leaf, nodes);
        nodes.push(SymbolicNode {
            vars: sep.points().map(idx).collect(),
            bnd: Vec::new(),
            children: vec![l, r],
        });
        nodes.len() - 1
    }
    let mut nodes = Vec::new();
    rec(IndexBox::whole(dims), dims, leaf.max(1), &mut nodes);
    nodes
}

/// Boundary sets: neighbors of a node's variables and its children's
/// boundaries that are eliminated after the node.
fn symbolic<T: Real>(a: &SparseOperator<T>, nodes: &mut [SymbolicNode], pos: &[u32]) {
    let n = a.n();
    let mut mark = vec![usize::MAX; n];
    let mut end = 0usize;
    for id in 0..nodes.len() {
        end += nodes[id].vars.len();
        let mut bnd: Vec<u32> = Vec::new();
        let children = nodes[id].children.clone();
        for c in children {
            for &v in &nodes[c].bnd {
                if pos[v as usize] as usize >= end && mark[v as usize] != id {
                    mark[v as usize] = id;
                    bnd.push(v);
                }
            }
        }
        for &v in &nodes[id].vars {
            let (cols, _) = a.row(v as usize);
            for &c in cols {
                if pos[c as usize] as usize >= end && mark[c as usize] != id {
                    mark[c as usize] = id;
                    bnd.push(c);
                }
            }
        }
        bnd.sort_unstable_by_key(|&v| pos[v as usize]);
        nodes[id].bnd = bnd;
    }
}

/// Blocked right-looking LU of the leading `p` columns of the f×f
/// column-major front, pivoting among rows `< p`. The trailing (f−p)² block
/// ends as the Schur complement.
fn partial_lu<T: Real>(f: &mut [Complex<T>], fdim: usize, p: usize, panel: usize, vars: &[u32]) -> Result<Vec<u32>> {
    let mut piv = vec![0u32; p];
    let at = |i: usize, j: usize| j * fdim + i;
    let mut k0 = 0;
    while k0 < p {
        let kb = panel.min(p - k0);
        let k1 = k0 + kb;
        for j in k0..k1 {
            let mut r = j;
            let mut best = T::zero();
            for i in j..p {
                let v = f[at(i, j)].norm_sqr();
                if v > best {
                    best = v;
                    r = i;
                }
            }
            if !(best > T::zero()) || !best.is_finite() {
                return Err(Error::SingularPivot {
                    index: vars[j] as usize,
                    magnitude: best.as_f64().sqrt(),
                });
            }
            piv[j] = r as u32;
            if r != j {
                for c in 0..fdim {
                    f.swap(at(j, c), at(r, c));
                }
            }
            let inv = Complex::<T>::one() / f[at(j, j)];
            for i in j + 1..fdim {
                f[at(i, j)] *= inv;
            }
            for c in j + 1..k1 {
                let x = f[at(j, c)];
                if x != Complex::zero() {
                    let (lcol, ccol) = if c > j {
                        let (a, b) = f.split_at_mut(c * fdim);
                        (&a[j * fdim..j * fdim + fdim], &mut b[..fdim])
                    } else {
                        unreachable!()
                    };
                    for i in j + 1..fdim {
                        ccol[i] -= lcol[i] * x;
                    }
                }
            }
        }
        if k1 < fdim {
            // U12 rows of this panel: unit-lower triangular solve.
            for c in k1..fdim {
                let (a, b) = f.split_at_mut(c * fdim);
                let ccol = &mut b[..fdim];
                for j in k0..k1 {
                    let x = ccol[j];
                    if x != Complex::zero() {
                        let lcol = &a[j * fdim..j * fdim + fdim];
                        for i in j + 1..k1 {
                            ccol[i] -= lcol[i] * x;
                        }
                    }
                }
            }
            // Trailing update F22 -= L21·U12.
            let m = fdim - k1;
            let neg = -Complex::<T>::one();
            unsafe {
                let base = f.as_mut_ptr();
                T::gemm(
                    m,
                    kb,
                    m,
                    neg,
                    base.add(at(k1, k0)),
                    1,
                    fdim as isize,
                    base.add(at(k0, k1)),
                    1,
                    fdim as isize,
                    Complex::one(),
                    base.add(at(k1, k1)),
                    1,
                    fdim as isize,
                );
            }
        }
        k0 = k1;
    }
    Ok(piv)
}

impl<T: Real> LocalFactorization<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// Solves B·X = Y in place; columns are processed independently so a
    /// block solve equals column-by-column solves bitwise.
    pub fn solve_in_place(&self, x: &mut Block<T>) -> Result<()> {
        if x.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.nrows(),
            });
        }
        let mut y: Vec<Complex<T>> = Vec::new();
        let mut xb: Vec<Complex<T>> = Vec::new();
        for c in 0..x.ncols() {
            let col = x.col_mut(c);
            for fr in &self.fronts {
                let (p, q) = (fr.vars.len(), fr.bnd.len());
                let ld = p + q;
                y.clear();
                y.extend(fr.vars.iter().map(|&v| col[v as usize]));
                for j in 0..p {
                    y.swap(j, fr.piv[j] as usize);
                }
                for j in 0..p {
                    let yj = y[j];
                    if yj != Complex::zero() {
                        let lcol = &fr.l[j * ld..j * ld + p];
                        for i in j + 1..p {
                            y[i] -= lcol[i] * yj;
                        }
                    }
                }
                if q > 0 {
                    xb.clear();
                    xb.extend(fr.bnd.iter().map(|&v| col[v as usize]));
                    for j in 0..p {
                        let yj = y[j];
                        if yj != Complex::zero() {
                            let lcol = &fr.l[j * ld + p..(j + 1) * ld];
                            for (xi, li) in xb.iter_mut().zip(lcol) {
                                *xi -= *li * yj;
                            }
                        }
                    }
                    for (&v, &val) in fr.bnd.iter().zip(&xb) {
                        col[v as usize] = val;
                    }
                }
                for (&v, &val) in fr.vars.iter().zip(&y) {
                    col[v as usize] = val;
                }
            }
            for fr in self.fronts.iter().rev() {
                let (p, q) = (fr.vars.len(), fr.bnd.len());
                let ld = p + q;
                y.clear();
                y.extend(fr.vars.iter().map(|&v| col[v as usize]));
                for k in 0..q {
                    let xk = col[fr.bnd[k] as usize];
                    if xk != Complex::zero() {
                        let ucol = &fr.u12[k * p..(k + 1) * p];
                        for (yi, ui) in y.iter_mut().zip(ucol) {
                            *yi -= *ui * xk;
                        }
                    }
                }
                for j in (0..p).rev() {
                    let ucol = &fr.l[j * ld..j * ld + p];
                    let yj = y[j] / ucol[j];
                    y[j] = yj;
                    if yj != Complex::zero() {
                        for i in 0..j {
                            y[i] -= ucol[i] * yj;
                        }
                    }
                }
                for (&v, &val) in fr.vars.iter().zip(&y) {
                    col[v as usize] = val;
                }
            }
        }
        Ok(())
    }

    pub fn solve_block(&self, y: &Block<T>) -> Result<Block<T>> {
        let mut x = y.clone();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Exact sparse LU of a square operator.
pub fn factorize<T: Real>(a: &SparseOperator<T>, opts: &LuOptions) -> Result<LocalFactorization<T>> {
    let t0 = Instant::now();
    let n = a.n();
    let mut nodes = match opts.ordering {
        Ordering::Natural => vec![SymbolicNode {
            vars: (0..n as u32).collect(),
            bnd: Vec::new(),
            children: Vec::new(),
        }],
        Ordering::Geometric { dims } => {
            if dims.iter().product::<usize>() != n {
                return Err(Error::DimensionMismatch {
                    expected: dims.iter().product(),
                    got: n,
                });
            }
            nested_dissection(dims, opts.leaf_size)
        }
    };
    let mut pos = vec![0u32; n];
    let mut start = Vec::with_capacity(nodes.len());
    let mut k = 0u32;
    for node in &nodes {
        start.push(k as usize);
        for &v in &node.vars {
            pos[v as usize] = k;
            k += 1;
        }
    }
    symbolic(a, &mut nodes, &pos);
    let at = a.transpose();

    let mut loc = vec![u32::MAX; n];
    let mut stack: Vec<(Vec<u32>, Vec<Complex<T>>)> = Vec::new();
    let mut fronts = Vec::with_capacity(nodes.len());
    let mut stats = FactorStats {
        n,
        fronts: nodes.len(),
        ..Default::default()
    };
    for (id, node) in nodes.iter().enumerate() {
        let (p, q) = (node.vars.len(), node.bnd.len());
        let fd = p + q;
        stats.largest_front = stats.largest_front.max(fd);
        for (i, &v) in node.vars.iter().chain(&node.bnd).enumerate() {
            loc[v as usize] = i as u32;
        }
        let mut f = vec![Complex::<T>::zero(); fd * fd];
        let s = start[id] as u32;
        let e = s + p as u32;
        for (i, &v) in node.vars.iter().enumerate() {
            let (cols, vals) = a.row(v as usize);
            for (&c, &val) in cols.iter().zip(vals) {
                if pos[c as usize] >= s {
                    f[loc[c as usize] as usize * fd + i] += val;
                }
            }
            let (rows, vals) = at.row(v as usize);
            for (&r, &val) in rows.iter().zip(vals) {
                if pos[r as usize] >= e {
                    f[i * fd + loc[r as usize] as usize] += val;
                }
            }
        }
        for _ in 0..node.children.len() {
            let (cb_vars, cb) = stack.pop().expect("child contribution block");
            let m = cb_vars.len();
            let map: Vec<usize> = cb_vars.iter().map(|&v| loc[v as usize] as usize).collect();
            for (cj, &fj) in map.iter().enumerate() {
                let src = &cb[cj * m..(cj + 1) * m];
                let dst = &mut f[fj * fd..(fj + 1) * fd];
                for (ci, &fi) in map.iter().enumerate() {
                    dst[fi] += src[ci];
                }
            }
        }
        let piv = partial_lu(&mut f, fd, p, opts.panel.max(1), &node.vars)?;
        let mut l = Vec::with_capacity(fd * p);
        l.extend_from_slice(&f[..fd * p]);
        let mut u12 = Vec::with_capacity(p * q);
        let mut cb = Vec::with_capacity(q * q);
        for c in p..fd {
            u12.extend_from_slice(&f[c * fd..c * fd + p]);
            cb.extend_from_slice(&f[c * fd + p..(c + 1) * fd]);
        }
        drop(f);
        if q > 0 {
            stack.push((node.bnd.clone(), cb));
        }
        stats.factor_entries += l.len() + u12.len();
        fronts.push(FrontFactor {
            vars: node.vars.clone(),
            bnd: node.bnd.clone(),
            piv,
            l,
            u12,
        });
    }
    if !stack.is_empty() {
        return Err(Error::Protocol("unassembled contribution blocks remain".into()));
    }
    stats.factor_bytes = stats.factor_entries * std::mem::size_of::<Complex<T>>();
    stats.seconds = t0.elapsed().as_secs_f64();
    Ok(LocalFactorization { n, fronts, stats })
}

/// ‖B·x − y‖₂/‖y‖₂ per column, in double precision.
pub fn relative_residuals<T: Real>(b: &SparseOperator<T>, x: &Block<T>, y: &Block<T>) -> Result<Vec<f64>> {
    let bx = b.apply(x)?;
    Ok((0..y.ncols())
        .map(|c| {
            let num: f64 = bx
                .col(c)
                .iter()
                .zip(y.col(c))
                .map(|(a, b)| (widen(*a) - widen(*b)).norm_sqr())
                .sum();
            let den: f64 = y.col(c).iter().map(|b| widen(*b).norm_sqr()).sum();
            (num / den.max(f64::MIN_POSITIVE)).sqrt()
        })
        .collect())
}
