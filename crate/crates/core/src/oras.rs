//! Optimized restricted additive Schwarz preconditioners, one- and two-level.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::HelmholtzProblem;
use crate::block::Block;
use crate::grid::CartesianGrid;
use crate::krylov::{gmres, BlockOperator, KrylovConfig, Ortho};
use crate::local::{assemble_local, factorize_local, InterfaceCondition, LocalSolver, LocalTiming};
use crate::lu::{factorize, LocalFactorization, LuOptions};
use crate::partition::{
    build_partition_of_unity, gather_consistent, halo_exchange, scatter, BoxPartition, DistributedBlock, IndexBox,
    PartitionOfUnity,
};
use crate::scalar::Real;
use crate::sparse::{galerkin_product, RealCsr, SparseOperator};
use crate::stencil::WeightTable;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    One,
    Two,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseOperatorKind {
    /// Helmholtz operator rediscretized on the coarse grid.
    #[default]
    Rediscretized,
    /// Zᵀ A Z.
    Galerkin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseOptions {
    pub factor: usize,
    pub operator: CoarseOperatorKind,
    /// Solve the coarse problem with a direct factorization instead of the
    /// inner preconditioned GMRES.
    pub exact: bool,
    pub inner: KrylovConfig,
    pub ovl: usize,
    /// Smallest coarse points per wavelength accepted.
    pub min_ppw: f64,
}

impl Default for CoarseOptions {
    fn default() -> Self {
        CoarseOptions {
            factor: 2,
            operator: CoarseOperatorKind::Rediscretized,
            exact: false,
            // Relative residual 1e-1, i.e. 1e-2 on the squared backward error.
            inner: KrylovConfig {
                tol: 1e-2,
                max_iterations: 200,
                ortho: Ortho::Cgs,
                ..Default::default()
            },
            ovl: 1,
            min_ppw: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrasOptions {
    pub interface: InterfaceCondition,
    pub level: Level,
    pub coarse: CoarseOptions,
}

/// Σ_j R_jᵀ D_j B_j⁻¹ R_j, optionally with a coarse correction.
pub struct OrasPreconditioner<T> {
    pub partition: BoxPartition,
    pub pou: PartitionOfUnity,
    pub locals: Vec<LocalSolver<T>>,
    pub interface: InterfaceCondition,
    pub coarse: Option<CoarseSpace<T>>,
    pub setup_seconds: f64,
}

pub struct CoarseSpace<T> {
    pub factor: usize,
    pub grid: CartesianGrid,
    /// Trilinear interpolation, fine × coarse.
    pub z: RealCsr,
    zt: RealCsr,
    pub e: SparseOperator<T>,
    /// Coarse-level one-level ORAS on the derived coarse partition.
    pub smoother: Box<OrasPreconditioner<T>>,
    pub direct: Option<LocalFactorization<T>>,
    pub inner: KrylovConfig,
    /// Q = scale · Z E⁻¹ Zᵀ.
    pub scale: f64,
}

impl<T: Real> OrasPreconditioner<T> {
    pub fn n(&self) -> usize {
        self.partition.npoints()
    }

    pub fn timings(&self) -> Vec<LocalTiming> {
        self.locals.iter().map(LocalSolver::timing).collect()
    }

    /// u_j = D_j B_j⁻¹ v_j + Σ_{i∈O(j)} R_j R_iᵀ D_i B_i⁻¹ v_i.
    pub fn apply_one_level(&self, v: &DistributedBlock<T>) -> Result<DistributedBlock<T>> {
        if !v.consistent {
            return Err(Error::Protocol("one-level ORAS needs a consistent input".into()));
        }
        if v.locals.len() != self.locals.len() {
            return Err(Error::Protocol(format!(
                "{} local blocks for {} subdomains",
                v.locals.len(),
                self.locals.len()
            )));
        }
        let solved = self
            .locals
            .par_iter()
            .zip(&v.locals)
            .map(|(s, x)| s.solve_block(x))
            .collect::<Result<Vec<_>>>()?;
        halo_exchange(
            &self.partition,
            &self.pou,
            &DistributedBlock {
                locals: solved,
                consistent: false,
            },
        )
    }

    /// One-level application on a monolithic block.
    pub fn apply_monolithic(&self, v: &Block<T>) -> Result<Block<T>> {
        let d = scatter(&self.partition, v)?;
        let u = self.apply_one_level(&d)?;
        gather_consistent(&self.partition, &self.pou, &u)
    }

    /// M₂⁻¹v = M₁⁻¹(v − A Q v) + Q v.
    pub fn apply_two_level(&self, a: &dyn BlockOperator<T>, v: &Block<T>) -> Result<Block<T>> {
        let coarse = self
            .coarse
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("preconditioner has no coarse space".into()))?;
        let q = coarse.apply_q(v)?;
        let aq = a.apply(&q)?;
        let mut r = v.clone();
        for (ri, x) in r.as_mut_slice().iter_mut().zip(aq.as_slice()) {
            *ri -= *x;
        }
        let mut w = self.apply_monolithic(&r)?;
        for (wi, x) in w.as_mut_slice().iter_mut().zip(q.as_slice()) {
            *wi += *x;
        }
        Ok(w)
    }

    /// The preconditioner as an operator; two-level needs `a`.
    pub fn operator<'a>(&'a self, a: &'a dyn BlockOperator<T>) -> Preconditioner<'a, T> {
        Preconditioner { prec: self, a }
    }
}

impl<T: Real> BlockOperator<T> for OrasPreconditioner<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        self.apply_monolithic(x)
    }
}

/// Level-dispatching wrapper: one-level when no coarse space is present.
pub struct Preconditioner<'a, T> {
    prec: &'a OrasPreconditioner<T>,
    a: &'a dyn BlockOperator<T>,
}

impl<T: Real> BlockOperator<T> for Preconditioner<'_, T> {
    fn dim(&self) -> usize {
        self.prec.n()
    }

    fn apply(&self, x: &Block<T>) -> Result<Block<T>> {
        if self.prec.coarse.is_some() {
            self.prec.apply_two_level(self.a, x)
        } else {
            self.prec.apply_monolithic(x)
        }
    }
}

fn apply_csr<T: Real>(z: &RealCsr, x: &Block<T>) -> Result<Block<T>> {
    if x.nrows() != z.ncols {
        return Err(Error::DimensionMismatch {
            expected: z.ncols,
            got: x.nrows(),
        });
    }
    let mut y = Block::zeros(z.nrows, x.ncols());
    for c in 0..x.ncols() {
        let (xc, yc) = (x.col(c), y.col_mut(c));
        for (i, yi) in yc.iter_mut().enumerate() {
            for k in z.row_ptr[i]..z.row_ptr[i + 1] {
                *yi += xc[z.col_idx[k] as usize] * T::lit(z.values[k]);
            }
        }
    }
    Ok(y)
}

impl<T: Real> CoarseSpace<T> {
    pub fn n(&self) -> usize {
        self.e.n()
    }

    /// Ẽ⁻¹ y by the configured coarse solver.
    pub fn solve(&self, y: &Block<T>) -> Result<Block<T>> {
        if let Some(lu) = &self.direct {
            return lu.solve_block(y);
        }
        let (x, report) = gmres(&self.e, self.smoother.as_ref(), y, &self.inner)?;
        if !report.all_converged() {
            let worst = report.backward_error.iter().copied().fold(0.0, f64::max);
            return Err(Error::CoarseSolve(worst));
        }
        Ok(x)
    }

    /// Q v = scale · Z Ẽ⁻¹ Zᵀ v.
    pub fn apply_q(&self, v: &Block<T>) -> Result<Block<T>> {
        let y = apply_csr(&self.zt, v)?;
        let x = self.solve(&y)?;
        let mut q = apply_csr(&self.z, &x)?;
        let s = T::lit(self.scale);
        q.as_mut_slice().iter_mut().for_each(|v| *v = v.scale(s));
        Ok(q)
    }
}

/// Trilinear interpolation from the vertex-nested coarse grid (coarse node I
/// on fine node sI); fine points past the last coarse node copy it.
pub fn trilinear_interpolation(fine: [usize; 3], coarse: [usize; 3], s: usize) -> Result<RealCsr> {
    for a in 0..3 {
        if coarse[a] == 0 || s * (coarse[a] - 1) > fine[a] - 1 {
            return Err(Error::InvalidArgument(format!(
                "coarse dims {coarse:?} are not nested in fine dims {fine:?} with factor {s}"
            )));
        }
    }
    let weights_1d = |a: usize| -> Vec<Vec<(u32, f64)>> {
        (0..fine[a])
            .map(|i| {
                let i0 = i / s;
                if i0 >= coarse[a] - 1 {
                    return vec![(coarse[a] as u32 - 1, 1.0)];
                }
                let t = (i - s * i0) as f64 / s as f64;
                if t == 0.0 {
                    vec![(i0 as u32, 1.0)]
                } else {
                    vec![(i0 as u32, 1.0 - t), (i0 as u32 + 1, t)]
                }
            })
            .collect()
    };
    let w = [weights_1d(0), weights_1d(1), weights_1d(2)];
    let n = fine.iter().product();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for k in 0..fine[2] {
        for j in 0..fine[1] {
            for i in 0..fine[0] {
                let mut entries: Vec<(u32, f64)> = Vec::with_capacity(8);
                for &(cz, wz) in &w[2][k] {
                    for &(cy, wy) in &w[1][j] {
                        for &(cx, wx) in &w[0][i] {
                            let idx = cx as usize + coarse[0] * (cy as usize + coarse[1] * cz as usize);
                            entries.push((idx as u32, wx * wy * wz));
                        }
                    }
                }
                entries.sort_by_key(|e| e.0);
                for (c, v) in entries {
                    col_idx.push(c);
                    values.push(v);
                }
                row_ptr.push(col_idx.len());
            }
        }
    }
    Ok(RealCsr {
        nrows: n,
        ncols: coarse.iter().product(),
        row_ptr,
        col_idx,
        values,
    })
}

/// Coarse partition inherited from the fine owned boxes: coarse node I
/// belongs to the subdomain owning fine node sI.
pub fn coarse_partition(fine: &BoxPartition, coarse_dims: [usize; 3], s: usize, ovl: usize) -> Result<BoxPartition> {
    let owned = fine
        .subdomains
        .iter()
        .map(|sd| {
            let lo = [0, 1, 2].map(|a| sd.owned.lo[a].div_ceil(s));
            let hi = [0, 1, 2].map(|a| sd.owned.hi[a].div_ceil(s).min(coarse_dims[a]));
            IndexBox::new(lo, hi)
        })
        .collect();
    BoxPartition::from_owned(coarse_dims, fine.counts, ovl, owned)
}

/// Assembles and factorizes every subdomain's local operator.
pub fn setup_one_level<T: Real>(
    problem: &HelmholtzProblem,
    partition: BoxPartition,
    interface: InterfaceCondition,
) -> Result<OrasPreconditioner<T>> {
    let t0 = Instant::now();
    let locals = (0..partition.len())
        .into_par_iter()
        .map(|j| {
            let op = assemble_local::<T>(problem, &partition, j, interface)?;
            factorize_local(&op)
        })
        .collect::<Result<Vec<_>>>()?;
    let pou = build_partition_of_unity(&partition);
    Ok(OrasPreconditioner {
        partition,
        pou,
        locals,
        interface,
        coarse: None,
        setup_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Coarse grid, interpolation, coarse operator and coarse-level solver.
pub fn build_coarse_space<T: Real>(
    problem: &HelmholtzProblem,
    table: &WeightTable,
    partition: &BoxPartition,
    interface: InterfaceCondition,
    opts: &CoarseOptions,
) -> Result<CoarseSpace<T>> {
    let s = opts.factor;
    let cp = problem.coarsen(s, table)?;
    let g_min = cp
        .c
        .iter()
        .map(|c| c.re / (cp.freq.f * cp.grid.h))
        .fold(f64::INFINITY, f64::min);
    if g_min < opts.min_ppw {
        return Err(Error::InvalidArgument(format!(
            "coarse grid resolves only {g_min:.2} points per wavelength (need {})",
            opts.min_ppw
        )));
    }
    let z = trilinear_interpolation(problem.grid.dims(), cp.grid.dims(), s)?;
    let scale = 1.0 / (s * s * s) as f64;
    let e: SparseOperator<T> = match opts.operator {
        CoarseOperatorKind::Rediscretized => cp.assemble()?,
        CoarseOperatorKind::Galerkin => galerkin_product(&problem.assemble::<T>()?, &z, scale)?,
    };
    let cpart = coarse_partition(partition, cp.grid.dims(), s, opts.ovl)?;
    let smoother = setup_one_level::<T>(&cp, cpart, interface)?;
    let direct = if opts.exact {
        Some(factorize(&e, &LuOptions::geometric(cp.grid.dims()))?)
    } else {
        None
    };
    let mut inner = opts.inner;
    inner.precision = T::PRECISION;
    Ok(CoarseSpace {
        factor: s,
        grid: cp.grid.clone(),
        zt: z.transpose(),
        z,
        e,
        smoother: Box::new(smoother),
        direct,
        inner,
        scale,
    })
}

/// Full setup: local factorizations and, for two levels, the coarse space.
pub fn setup<T: Real>(
    problem: &HelmholtzProblem,
    table: &WeightTable,
    partition: BoxPartition,
    opts: &OrasOptions,
) -> Result<OrasPreconditioner<T>> {
    let t0 = Instant::now();
    let coarse = match opts.level {
        Level::One => None,
        Level::Two => Some(build_coarse_space::<T>(problem, table, &partition, opts.interface, &opts.coarse)?),
    };
    let mut p = setup_one_level(problem, partition, opts.interface)?;
    p.coarse = coarse;
    p.setup_seconds = t0.elapsed().as_secs_f64();
    Ok(p)
}
