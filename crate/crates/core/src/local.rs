//! Subdomain operators with absorbing interface closures and their exact
//! factorizations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{HelmholtzProblem, Region, SideClosure};
use crate::block::Block;
use crate::lu::{factorize, FactorStats, LocalFactorization, LuOptions};
use crate::partition::{BoxPartition, IndexBox};
use crate::scalar::Real;
use crate::sparse::SparseOperator;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceCondition {
    /// PML of width `ovl` inside the overlap.
    #[default]
    Pml,
    /// First-order absorbing ∂u/∂n = iku on the extended-box faces.
    Robin,
    /// Plain restriction with homogeneous Dirichlet closure (classical RAS).
    Dirichlet,
}

#[derive(Clone, Debug)]
pub struct LocalOperator<T> {
    pub id: usize,
    pub extended: IndexBox,
    pub interface: InterfaceCondition,
    pub matrix: SparseOperator<T>,
}

fn interface_region(
    problem: &HelmholtzProblem,
    partition: &BoxPartition,
    j: usize,
    interface: InterfaceCondition,
) -> Result<Region> {
    let s = partition
        .subdomains
        .get(j)
        .ok_or_else(|| Error::InvalidArgument(format!("no subdomain {j}")))?;
    if partition.dims != problem.grid.dims() {
        return Err(Error::InvalidPartition(format!(
            "partition dims {:?} differ from grid dims {:?}",
            partition.dims,
            problem.grid.dims()
        )));
    }
    let ovl = partition.ovl;
    let mut sides = [[SideClosure::DROP; 2]; 3];
    for a in 0..3 {
        for side in 0..2 {
            let physical = if side == 0 {
                s.extended.lo[a] == 0
            } else {
                s.extended.hi[a] == partition.dims[a]
            };
            sides[a][side] = if physical {
                problem.physical_side(a, side)
            } else {
                match interface {
                    InterfaceCondition::Dirichlet => SideClosure::DROP,
                    InterfaceCondition::Robin => SideClosure::ROBIN,
                    InterfaceCondition::Pml => {
                        if ovl == 0 {
                            return Err(Error::InvalidPartition(
                                "interface PML needs an overlap of at least one point".into(),
                            ));
                        }
                        let edge = if side == 0 {
                            s.owned.lo[a] as f64 - 0.5
                        } else {
                            s.owned.hi[a] as f64 - 0.5
                        };
                        SideClosure {
                            reflect: false,
                            pml: Some((edge, ovl)),
                        }
                    }
                }
            };
        }
    }
    Ok(Region {
        lo: s.extended.lo,
        hi: s.extended.hi,
        sides,
    })
}

/// Rediscretizes the operator on subdomain `j`'s extended box. Rows whose
/// stencil stays clear of the interface layer equal the global rows.
pub fn assemble_local<T: Real>(
    problem: &HelmholtzProblem,
    partition: &BoxPartition,
    j: usize,
    interface: InterfaceCondition,
) -> Result<LocalOperator<T>> {
    let region = interface_region(problem, partition, j, interface)?;
    let matrix = problem
        .assemble_region(&region)
        .map_err(|e| e.in_subdomain(j))?;
    Ok(LocalOperator {
        id: j,
        extended: partition.subdomains[j].extended,
        interface,
        matrix,
    })
}

/// Factorization of one subdomain plus its bookkeeping.
pub struct LocalSolver<T> {
    pub id: usize,
    pub factor: LocalFactorization<T>,
    pub stats: FactorStats,
}

impl<T: Real> LocalSolver<T> {
    pub fn solve_block(&self, y: &Block<T>) -> Result<Block<T>> {
        self.factor.solve_block(y).map_err(|e| e.in_subdomain(self.id))
    }
}

/// Exact LU of a local operator with nested dissection over its box.
pub fn factorize_local<T: Real>(op: &LocalOperator<T>) -> Result<LocalSolver<T>> {
    let t0 = Instant::now();
    let factor = factorize(&op.matrix, &LuOptions::geometric(op.extended.dims())).map_err(|e| e.in_subdomain(op.id))?;
    let mut stats = factor.stats;
    stats.seconds = t0.elapsed().as_secs_f64();
    Ok(LocalSolver {
        id: op.id,
        factor,
        stats,
    })
}

/// Per-subdomain timing record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalTiming {
    pub id: usize,
    pub unknowns: usize,
    pub factor_seconds: f64,
    pub factor_bytes: usize,
    pub largest_front: usize,
}

impl<T> LocalSolver<T> {
    pub fn timing(&self) -> LocalTiming {
        LocalTiming {
            id: self.id,
            unknowns: self.stats.n,
            factor_seconds: self.stats.seconds,
            factor_bytes: self.stats.factor_bytes,
            largest_front: self.stats.largest_front,
        }
    }
}
