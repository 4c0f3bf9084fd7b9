//! Overlapping cuboid decomposition, boolean partition of unity, halo
//! exchange and the distributed matrix-vector product.
//!
//! Each subdomain j owns a box of points and works on its extended box
//! (owned dilated by `ovl`, clipped to the grid). Messages travel from the
//! owner of a point to every subdomain whose extended box contains it, and
//! receivers apply them in ascending sender order.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::scalar::Real;
use crate::sparse::SparseOperator;
use crate::{Error, Result};

/// Half-open index box `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl IndexBox {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Self {
        IndexBox { lo, hi }
    }

    pub fn whole(dims: [usize; 3]) -> Self {
        IndexBox { lo: [0; 3], hi: dims }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a].saturating_sub(self.lo[a]))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    pub fn intersect(&self, other: &IndexBox) -> Option<IndexBox> {
        let lo = [0, 1, 2].map(|a| self.lo[a].max(other.lo[a]));
        let hi = [0, 1, 2].map(|a| self.hi[a].min(other.hi[a]));
        (0..3).all(|a| lo[a] < hi[a]).then_some(IndexBox { lo, hi })
    }

    pub fn dilate(&self, r: usize, dims: [usize; 3]) -> IndexBox {
        IndexBox {
            lo: self.lo.map(|v| v.saturating_sub(r)),
            hi: [0, 1, 2].map(|a| (self.hi[a] + r).min(dims[a])),
        }
    }

    #[inline]
    pub fn local_index(&self, p: [usize; 3]) -> usize {
        let d = self.dims();
        (p[0] - self.lo[0]) + d[0] * ((p[1] - self.lo[1]) + d[1] * (p[2] - self.lo[2]))
    }

    #[inline]
    pub fn point(&self, local: usize) -> [usize; 3] {
        let d = self.dims();
        let i = local % d[0];
        let r = local / d[0];
        [self.lo[0] + i, self.lo[1] + r % d[1], self.lo[2] + r / d[1]]
    }

    /// Points in x-fastest order.
    pub fn points(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.len()).map(move |l| self.point(l))
    }
}

#[inline]
fn grid_index(dims: [usize; 3], p: [usize; 3]) -> usize {
    p[0] + dims[0] * (p[1] + dims[1] * p[2])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subdomain {
    pub id: usize,
    pub coords: [usize; 3],
    pub owned: IndexBox,
    pub extended: IndexBox,
    /// Subdomains whose extended boxes intersect this one, ascending.
    pub neighbors: Vec<usize>,
}

/// Values at `src` (local to the sender's extended box) land at `dst`
/// (local to the receiver's extended box).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangePlan {
    pub from: usize,
    pub to: usize,
    pub src: Vec<u32>,
    pub dst: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxPartition {
    pub dims: [usize; 3],
    pub counts: [usize; 3],
    pub ovl: usize,
    pub subdomains: Vec<Subdomain>,
    /// `incoming[j]`: plans delivering to j, ascending sender.
    incoming: Vec<Vec<ExchangePlan>>,
    /// Local indices of owned points in each extended box.
    owned_local: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct PartitionDescriptor {
    dims: [usize; 3],
    counts: [usize; 3],
    ovl: usize,
    subdomains: Vec<Subdomain>,
}

/// Sizes of `parts` nearly equal chunks of `n` (first ones take the excess).
fn balanced(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let (base, rem) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut lo = 0;
    for p in 0..parts {
        let len = base + usize::from(p < rem);
        out.push((lo, lo + len));
        lo += len;
    }
    out
}

impl BoxPartition {
    /// Balanced owned boxes, extended by `ovl`.
    pub fn new(dims: [usize; 3], counts: [usize; 3], ovl: usize) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidPartition(format!("subdomain counts {counts:?} must be ≥ 1")));
        }
        let splits: Vec<Vec<(usize, usize)>> = (0..3)
            .map(|a| {
                if counts[a] > dims[a] {
                    return Err(Error::InvalidPartition(format!(
                        "{} subdomains along axis {a} exceed its {} points",
                        counts[a], dims[a]
                    )));
                }
                let s = balanced(dims[a], counts[a]);
                if counts[a] > 1 {
                    if let Some(&(lo, hi)) = s.iter().find(|(lo, hi)| hi - lo < 2 * ovl + 1) {
                        return Err(Error::InvalidPartition(format!(
                            "owned width {} along axis {a} is thinner than 2·ovl+1 = {}",
                            hi - lo,
                            2 * ovl + 1
                        )));
                    }
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        let mut owned = Vec::new();
        for cz in 0..counts[2] {
            for cy in 0..counts[1] {
                for cx in 0..counts[0] {
                    let c = [cx, cy, cz];
                    owned.push(IndexBox {
                        lo: [0, 1, 2].map(|a| splits[a][c[a]].0),
                        hi: [0, 1, 2].map(|a| splits[a][c[a]].1),
                    });
                }
            }
        }
        Self::from_owned(dims, counts, ovl, owned)
    }

    /// Partition from explicit owned boxes listed x-fastest over `counts`.
    pub fn from_owned(dims: [usize; 3], counts: [usize; 3], ovl: usize, owned: Vec<IndexBox>) -> Result<Self> {
        let total: usize = counts.iter().product();
        if owned.len() != total {
            return Err(Error::InvalidPartition(format!(
                "{} owned boxes for {total} subdomains",
                owned.len()
            )));
        }
        let covered: usize = owned.iter().map(IndexBox::len).sum();
        let npts: usize = dims.iter().product();
        let disjoint = (0..owned.len())
            .all(|i| (i + 1..owned.len()).all(|j| owned[i].intersect(&owned[j]).is_none()));
        if covered != npts || !disjoint || owned.iter().any(|b| b.is_empty() || (0..3).any(|a| b.hi[a] > dims[a])) {
            return Err(Error::InvalidPartition("owned boxes must tile the grid".into()));
        }
        let ext: Vec<IndexBox> = owned.iter().map(|b| b.dilate(ovl, dims)).collect();
        let mut subdomains = Vec::with_capacity(total);
        for (id, (o, e)) in owned.iter().zip(&ext).enumerate() {
            let coords = [id % counts[0], (id / counts[0]) % counts[1], id / (counts[0] * counts[1])];
            let neighbors = (0..total)
                .filter(|&j| j != id && e.intersect(&ext[j]).is_some())
                .collect();
            subdomains.push(Subdomain {
                id,
                coords,
                owned: *o,
                extended: *e,
                neighbors,
            });
        }
        let mut incoming: Vec<Vec<ExchangePlan>> = vec![Vec::new(); total];
        for (j, inc) in incoming.iter_mut().enumerate() {
            for &i in &subdomains[j].neighbors {
                if let Some(shared) = owned[i].intersect(&ext[j]) {
                    let (mut src, mut dst) = (Vec::new(), Vec::new());
                    for p in shared.points() {
                        src.push(ext[i].local_index(p) as u32);
                        dst.push(ext[j].local_index(p) as u32);
                    }
                    inc.push(ExchangePlan { from: i, to: j, src, dst });
                }
            }
        }
        let owned_local = owned
            .iter()
            .zip(&ext)
            .map(|(o, e)| o.points().map(|p| e.local_index(p) as u32).collect())
            .collect();
        Ok(BoxPartition {
            dims,
            counts,
            ovl,
            subdomains,
            incoming,
            owned_local,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn npoints(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn incoming(&self, j: usize) -> &[ExchangePlan] {
        &self.incoming[j]
    }

    pub fn owner(&self, p: [usize; 3]) -> usize {
        self.subdomains
            .iter()
            .position(|s| s.owned.contains(p))
            .expect("every grid point has an owner")
    }

    /// Grid (linear) indices of the extended box of `j`, in local order.
    pub fn extended_indices(&self, j: usize) -> Vec<usize> {
        self.subdomains[j]
            .extended
            .points()
            .map(|p| grid_index(self.dims, p))
            .collect()
    }

    /// A_j = R_j A R_jᵀ: rows and columns of `a` inside the extended box.
    pub fn extract_local<T: Real>(&self, a: &SparseOperator<T>, j: usize) -> Result<SparseOperator<T>> {
        if a.n() != self.npoints() {
            return Err(Error::DimensionMismatch {
                expected: self.npoints(),
                got: a.n(),
            });
        }
        let e = self.subdomains[j].extended;
        let n = e.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for p in e.points() {
            let (cols, vals) = a.row(grid_index(self.dims, p));
            let mut entries: Vec<(u32, Complex<T>)> = cols
                .iter()
                .zip(vals)
                .filter_map(|(&c, &v)| {
                    let q = [
                        c as usize % self.dims[0],
                        (c as usize / self.dims[0]) % self.dims[1],
                        c as usize / (self.dims[0] * self.dims[1]),
                    ];
                    e.contains(q).then(|| (e.local_index(q) as u32, v))
                })
                .collect();
            entries.sort_by_key(|x| x.0);
            for (c, v) in entries {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator::from_csr(n, row_ptr, col_idx, values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PartitionDescriptor {
            dims: self.dims,
            counts: self.counts,
            ovl: self.ovl,
            subdomains: self.subdomains.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: PartitionDescriptor = serde_json::from_str(text)?;
        let p = Self::from_owned(d.dims, d.counts, d.ovl, d.subdomains.iter().map(|s| s.owned).collect())?;
        if p.subdomains != d.subdomains {
            return Err(Error::InvalidPartition("descriptor is not self-consistent".into()));
        }
        Ok(p)
    }
}

pub fn partition_grid(dims: [usize; 3], counts: [usize; 3], ovl: usize) -> Result<BoxPartition> {
    BoxPartition::new(dims, counts, ovl)
}

/// Boolean owner-based D_j: 1 on owned points, 0 elsewhere in the
/// extended box.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionOfUnity {
    pub weights: Vec<Vec<u8>>,
}

pub fn build_partition_of_unity(partition: &BoxPartition) -> PartitionOfUnity {
    PartitionOfUnity {
        weights: partition
            .subdomains
            .iter()
            .map(|s| s.extended.points().map(|p| u8::from(s.owned.contains(p))).collect())
            .collect(),
    }
}

/// Per-subdomain local blocks over the extended boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributedBlock<T> {
    pub locals: Vec<Block<T>>,
    /// Whether shared entries agree across subdomains.
    pub consistent: bool,
}

impl<T: Real> DistributedBlock<T> {
    pub fn zeros(partition: &BoxPartition, ncols: usize) -> Self {
        DistributedBlock {
            locals: partition
                .subdomains
                .iter()
                .map(|s| Block::zeros(s.extended.len(), ncols))
                .collect(),
            consistent: true,
        }
    }

    pub fn ncols(&self) -> usize {
        self.locals.first().map_or(0, Block::ncols)
    }

    fn check(&self, partition: &BoxPartition) -> Result<()> {
        if self.locals.len() != partition.len() {
            return Err(Error::Protocol(format!(
                "{} local blocks for {} subdomains",
                self.locals.len(),
                partition.len()
            )));
        }
        let m = self.ncols();
        for (s, b) in partition.subdomains.iter().zip(&self.locals) {
            if b.nrows() != s.extended.len() || b.ncols() != m {
                return Err(Error::Protocol(format!(
                    "subdomain {} block is {}×{}, expected {}×{m}",
                    s.id,
                    b.nrows(),
                    b.ncols(),
                    s.extended.len()
                )));
            }
        }
        Ok(())
    }
}

/// v_j = R_j v.
pub fn scatter<T: Real>(partition: &BoxPartition, v: &Block<T>) -> Result<DistributedBlock<T>> {
    if v.nrows() != partition.npoints() {
        return Err(Error::DimensionMismatch {
            expected: partition.npoints(),
            got: v.nrows(),
        });
    }
    let m = v.ncols();
    let locals = (0..partition.len())
        .into_par_iter()
        .map(|j| {
            let idx = partition.extended_indices(j);
            let mut b = Block::zeros(idx.len(), m);
            for c in 0..m {
                let src = v.col(c);
                for (dst, &g) in b.col_mut(c).iter_mut().zip(&idx) {
                    *dst = src[g];
                }
            }
            b
        })
        .collect();
    Ok(DistributedBlock {
        locals,
        consistent: true,
    })
}

/// Σ_j R_jᵀ D_j v_j.
pub fn gather<T: Real>(
    partition: &BoxPartition,
    pou: &PartitionOfUnity,
    d: &DistributedBlock<T>,
) -> Result<Block<T>> {
    d.check(partition)?;
    let m = d.ncols();
    let mut out = Block::zeros(partition.npoints(), m);
    for (j, s) in partition.subdomains.iter().enumerate() {
        let idx = partition.extended_indices(j);
        for c in 0..m {
            let src = d.locals[j].col(c);
            let dst = out.col_mut(c);
            for (l, &g) in idx.iter().enumerate() {
                if pou.weights[j][l] != 0 {
                    dst[g] += src[l];
                }
            }
        }
        debug_assert_eq!(s.id, j);
    }
    Ok(out)
}

/// Like [`gather`] but refuses input not flagged consistent.
pub fn gather_consistent<T: Real>(
    partition: &BoxPartition,
    pou: &PartitionOfUnity,
    d: &DistributedBlock<T>,
) -> Result<Block<T>> {
    if !d.consistent {
        return Err(Error::Protocol("gather of an inconsistent distributed block".into()));
    }
    gather(partition, pou, d)
}

/// Whether every shared entry equals its owner's value bitwise.
pub fn is_consistent<T: Real>(partition: &BoxPartition, d: &DistributedBlock<T>) -> bool {
    (0..partition.len()).all(|j| {
        partition.incoming(j).iter().all(|plan| {
            (0..d.ncols()).all(|c| {
                let (src, dst) = (d.locals[plan.from].col(c), d.locals[j].col(c));
                plan.src.iter().zip(&plan.dst).all(|(&s, &t)| src[s as usize] == dst[t as usize])
            })
        })
    })
}

/// v_j ← D_j v_j + Σ_{i∈O(j)} R_j R_iᵀ D_i v_i.
pub fn halo_exchange<T: Real>(
    partition: &BoxPartition,
    pou: &PartitionOfUnity,
    d: &DistributedBlock<T>,
) -> Result<DistributedBlock<T>> {
    d.check(partition)?;
    if pou.weights.len() != partition.len() {
        return Err(Error::Protocol("partition of unity does not match the partition".into()));
    }
    let m = d.ncols();
    // Send: each sender packs its owned overlap slices.
    let messages: Vec<Vec<Vec<Complex<T>>>> = (0..partition.len())
        .into_par_iter()
        .map(|j| {
            partition
                .incoming(j)
                .iter()
                .map(|plan| {
                    let src = &d.locals[plan.from];
                    let mut buf = Vec::with_capacity(plan.src.len() * m);
                    for c in 0..m {
                        let col = src.col(c);
                        buf.extend(plan.src.iter().map(|&s| col[s as usize]));
                    }
                    buf
                })
                .collect()
        })
        .collect();
    // Receive and reduce in ascending sender order.
    let locals = (0..partition.len())
        .into_par_iter()
        .zip(messages)
        .map(|(j, msgs)| {
            let own = &d.locals[j];
            let mut out = Block::zeros(own.nrows(), m);
            for c in 0..m {
                let (src, dst) = (own.col(c), out.col_mut(c));
                for (l, w) in pou.weights[j].iter().enumerate() {
                    if *w != 0 {
                        dst[l] = src[l];
                    }
                }
            }
            for (plan, buf) in partition.incoming(j).iter().zip(msgs) {
                let len = plan.dst.len();
                for c in 0..m {
                    let dst = out.col_mut(c);
                    for (k, &t) in plan.dst.iter().enumerate() {
                        dst[t as usize] += buf[c * len + k];
                    }
                }
            }
            out
        })
        .collect();
    Ok(DistributedBlock {
        locals,
        consistent: true,
    })
}

/// u_j = D_j A_j v_j + Σ_{i∈O(j)} R_j R_iᵀ D_i A_i v_i.
pub fn distributed_matvec<T: Real>(
    local_ops: &[SparseOperator<T>],
    partition: &BoxPartition,
    pou: &PartitionOfUnity,
    v: &DistributedBlock<T>,
) -> Result<DistributedBlock<T>> {
    v.check(partition)?;
    if local_ops.len() != partition.len() {
        return Err(Error::DimensionMismatch {
            expected: partition.len(),
            got: local_ops.len(),
        });
    }
    let products = local_ops
        .par_iter()
        .zip(&v.locals)
        .map(|(a, x)| a.apply(x))
        .collect::<Result<Vec<_>>>()?;
    halo_exchange(
        partition,
        pou,
        &DistributedBlock {
            locals: products,
            consistent: false,
        },
    )
}

/// Owned-point local indices of subdomain `j`.
pub fn owned_local(partition: &BoxPartition, j: usize) -> &[u32] {
    &partition.owned_local[j]
}
