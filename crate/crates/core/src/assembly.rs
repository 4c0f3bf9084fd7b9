//! Assembly of the 27-point Helmholtz operator (Δ + k²)u = f on the
//! PML-padded grid, globally or on a box with interface closures.

use num_complex::{Complex, Complex64};
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::grid::{CartesianGrid, FrequencySpec, PointSource, VelocityModel};
use crate::scalar::{cast, Real};
use crate::sparse::SparseOperator;
use crate::stencil::{mean_mass_symbol, quasi_uniform_directions, StencilWeights, WeightTable};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceCondition {
    Pml,
    Robin,
    Dirichlet,
}

/// One condition per face, indexed `[axis][low = 0 | high = 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub faces: [[FaceCondition; 2]; 3],
}

impl BoundarySpec {
    pub fn all(c: FaceCondition) -> Self {
        BoundarySpec { faces: [[c; 2]; 3] }
    }

    /// PML everywhere except a Dirichlet (free-surface) low face on `axis`.
    pub fn free_surface(axis: usize) -> Self {
        let mut b = Self::all(FaceCondition::Pml);
        b.faces[axis][0] = FaceCondition::Dirichlet;
        b
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::all(FaceCondition::Pml)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmlProfile {
    pub npml: usize,
    pub power: f64,
    /// Target normal-incidence round-trip reflection coefficient.
    pub reflection: f64,
}

impl Default for PmlProfile {
    fn default() -> Self {
        PmlProfile {
            npml: 8,
            power: 2.0,
            reflection: 1e-4,
        }
    }
}

impl PmlProfile {
    pub fn with_npml(npml: usize) -> Self {
        PmlProfile {
            npml,
            ..Default::default()
        }
    }

    /// Peak damping for a layer of `width` intervals: the analytic round-trip
    /// reflection exp(−2/c ∫σ) then equals `reflection`.
    pub fn sigma_max(&self, c: f64, width: f64, h: f64) -> f64 {
        (self.power + 1.0) * c * (1.0 / self.reflection).ln() / (2.0 * width * h)
    }

    fn validate(&self) -> Result<()> {
        if !(self.power >= 0.0 && self.reflection > 0.0 && self.reflection < 1.0) {
            return Err(Error::InvalidArgument(format!("invalid PML profile {self:?}")));
        }
        Ok(())
    }
}

/// Scaling of the discrete point source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceNormalization {
    /// amplitude/h³.
    CellVolume,
    /// amplitude·M̄/h³ with M̄ the direction-averaged mass symbol of the local
    /// weights; cancels the far-field amplitude bias of a distributed mass.
    #[default]
    MassSymbol,
}

/// Ghost-point policy on one side of an assembly box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct SideClosure {
    /// First-order absorbing closure ∂u/∂n = iku eliminating the ghost.
    pub reflect: bool,
    /// Interface PML: inner edge (index units, half-integer) and width.
    pub pml: Option<(f64, usize)>,
}

impl SideClosure {
    pub const DROP: SideClosure = SideClosure {
        reflect: false,
        pml: None,
    };
    pub const ROBIN: SideClosure = SideClosure {
        reflect: true,
        pml: None,
    };
}

/// Half-open box `[lo, hi)` of the padded grid with per-side closures.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Region {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub sides: [[SideClosure; 2]; 3],
}

impl Region {
    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a])
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
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
}

/// Discretized Helmholtz problem on the padded computational grid.
#[derive(Clone, Debug)]
pub struct HelmholtzProblem {
    /// Padded computational grid.
    pub grid: CartesianGrid,
    /// The model's own grid (the non-PML interior).
    pub interior: CartesianGrid,
    /// Padding points per face, `[axis][side]`.
    pub pad: [[usize; 2]; 3],
    pub bc: BoundarySpec,
    pub pml: PmlProfile,
    pub freq: FrequencySpec,
    /// Wavespeed on the padded grid (nearest-value extension into the PML).
    pub c: Vec<Complex64>,
    /// Stencil weights picked from the table at each point's G.
    pub weights: Vec<StencilWeights>,
    pub normalization: SourceNormalization,
}

impl HelmholtzProblem {
    pub fn new(
        model: &VelocityModel,
        freq: FrequencySpec,
        table: &WeightTable,
        bc: BoundarySpec,
        pml: PmlProfile,
    ) -> Result<Self> {
        pml.validate()?;
        let pad = [0, 1, 2].map(|a| {
            [0, 1].map(|s| if bc.faces[a][s] == FaceCondition::Pml { pml.npml } else { 0 })
        });
        let idims = model.grid.dims();
        let dims = [0, 1, 2].map(|a| idims[a] + pad[a][0] + pad[a][1]);
        let h = model.grid.h;
        let origin = [0, 1, 2].map(|a| model.grid.origin[a] - pad[a][0] as f64 * h);
        let grid = CartesianGrid::new(dims, h, origin)?;
        let mut c = Vec::with_capacity(grid.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let q = [i, j, k];
                    let src = [0, 1, 2].map(|a| {
                        (q[a] as isize - pad[a][0] as isize).clamp(0, idims[a] as isize - 1) as usize
                    });
                    c.push(model.c[model.grid.index(src)]);
                }
            }
        }
        let weights = c
            .iter()
            .map(|v| table.lookup(v.re / (freq.f * h)))
            .collect();
        Ok(HelmholtzProblem {
            grid,
            interior: model.grid.clone(),
            pad,
            bc,
            pml,
            freq,
            c,
            weights,
            normalization: SourceNormalization::default(),
        })
    }

    /// The same physics rediscretized on every `s`-th node of the padded
    /// grid (coarse node I sits on fine node sI). PML widths shrink by `s`.
    pub fn coarsen(&self, s: usize, table: &WeightTable) -> Result<HelmholtzProblem> {
        if s == 0 || self.pad.iter().flatten().any(|&p| p % s != 0) {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {s} must divide the PML width {}",
                self.pml.npml
            )));
        }
        let model = VelocityModel::new(self.interior.clone(), self.restrict_interior(&self.c), "coarse")?;
        let coarse = model.subsample(s)?;
        let pml = PmlProfile {
            npml: self.pml.npml / s,
            ..self.pml
        };
        let mut p = HelmholtzProblem::new(&coarse, self.freq, table, self.bc, pml)?;
        p.normalization = self.normalization;
        Ok(p)
    }

    pub fn with_normalization(mut self, n: SourceNormalization) -> Self {
        self.normalization = n;
        self
    }

    /// Replaces every point's weights (e.g. forced classical stencil).
    pub fn with_weights(mut self, w: StencilWeights) -> Self {
        self.weights.iter_mut().for_each(|x| *x = w);
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn k2(&self, idx: usize) -> Complex64 {
        let k = self.freq.wavenumber(self.c[idx]);
        k * k
    }

    /// Whether a padded-grid point is a non-PML interior point.
    pub fn is_interior(&self, p: [usize; 3]) -> bool {
        let d = self.grid.dims();
        (0..3).all(|a| p[a] >= self.pad[a][0] && p[a] < d[a] - self.pad[a][1])
    }

    /// Padded index of an interior-grid point.
    pub fn padded_index(&self, p: [usize; 3]) -> usize {
        self.grid.index([0, 1, 2].map(|a| p[a] + self.pad[a][0]))
    }

    /// Restricts a padded field to the interior grid.
    pub fn restrict_interior(&self, padded: &[Complex64]) -> Vec<Complex64> {
        let d = self.interior.dims();
        let mut out = Vec::with_capacity(self.interior.len());
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    out.push(padded[self.padded_index([i, j, k])]);
                }
            }
        }
        out
    }

    pub fn is_dirichlet(&self, p: [usize; 3]) -> bool {
        let d = self.grid.dims();
        (0..3).any(|a| {
            (p[a] == 0 && self.bc.faces[a][0] == FaceCondition::Dirichlet)
                || (p[a] == d[a] - 1 && self.bc.faces[a][1] == FaceCondition::Dirichlet)
        })
    }

    /// Box covering the whole padded grid with the physical closures.
    pub(crate) fn global_region(&self) -> Region {
        Region {
            lo: [0; 3],
            hi: self.grid.dims(),
            sides: [0, 1, 2].map(|a| [0, 1].map(|s| self.physical_side(a, s))),
        }
    }

    pub(crate) fn physical_side(&self, axis: usize, side: usize) -> SideClosure {
        match self.bc.faces[axis][side] {
            FaceCondition::Robin => SideClosure::ROBIN,
            FaceCondition::Pml | FaceCondition::Dirichlet => SideClosure::DROP,
        }
    }

    /// Damping of the global PML along `axis` at fractional index `q`.
    fn sigma_global(&self, axis: usize, q: f64, c: f64) -> f64 {
        let n = self.grid.dims()[axis];
        let [lo, hi] = self.pad[axis];
        let mut s = 0.0;
        if lo > 0 {
            let edge = lo as f64 - 0.5;
            if q < edge {
                let depth = (edge - q) / lo as f64;
                s += self.pml.sigma_max(c, lo as f64, self.grid.h) * depth.powf(self.pml.power);
            }
        }
        if hi > 0 {
            let edge = (n - 1 - hi) as f64 + 0.5;
            if q > edge {
                let depth = (q - edge) / hi as f64;
                s += self.pml.sigma_max(c, hi as f64, self.grid.h) * depth.powf(self.pml.power);
            }
        }
        s
    }

    fn stretch(&self, region: &Region, axis: usize, q: f64, c: f64) -> Complex64 {
        let mut sigma = self.sigma_global(axis, q, c);
        for side in 0..2 {
            if let Some((edge, width)) = region.sides[axis][side].pml {
                let depth = if side == 0 { edge - q } else { q - edge };
                if depth > 0.0 {
                    let d = depth / width as f64;
                    sigma += self.pml.sigma_max(c, width as f64, self.grid.h) * d.powf(self.pml.power);
                }
            }
        }
        Complex64::new(1.0, sigma / self.freq.omega())
    }

    /// Row of the operator at padded point `p`, restricted to `region`.
    /// Entries are (padded-grid point, coefficient), merged and sorted by
    /// region-local index.
    pub(crate) fn row(&self, p: [usize; 3], region: &Region) -> Result<Vec<([usize; 3], Complex64)>> {
        let idx = self.grid.index(p);
        if self.is_dirichlet(p) {
            return Ok(vec![(p, Complex64::new(1.0, 0.0))]);
        }
        let w = &self.weights[idx];
        let [p0, p1, p2] = w.transverse();
        let k2 = self.k2(idx);
        let h2 = self.grid.h * self.grid.h;
        let cre = self.c[idx].re;

        // 1D stretched second-difference coefficients per axis, offsets −1, 0, +1.
        let mut d2 = [[Complex64::zero(); 3]; 3];
        for a in 0..3 {
            let q = p[a] as f64;
            let s0 = self.stretch(region, a, q, cre);
            let sm = self.stretch(region, a, q - 0.5, cre);
            let sp = self.stretch(region, a, q + 0.5, cre);
            let am = Complex64::new(1.0, 0.0) / (s0 * sm * h2);
            let ap = Complex64::new(1.0, 0.0) / (s0 * sp * h2);
            d2[a] = [am, -(am + ap), ap];
        }
        // Transverse factor p0 + p1(A_j + A_k) + p2 A_j A_k, A = ½(shift₊ + shift₋).
        let trans = |dj: i32, dk: i32| -> f64 {
            let aj = if dj == 0 { 0.0 } else { 0.5 };
            let ak = if dk == 0 { 0.0 } else { 0.5 };
            let ej = if dj == 0 { 1.0 } else { 0.0 };
            let ek = if dk == 0 { 1.0 } else { 0.0 };
            p0 * ej * ek + p1 * (aj * ek + ak * ej) + p2 * aj * ak
        };

        let mut entries: Vec<([usize; 3], Complex64)> = Vec::with_capacity(27);
        for dz in -1i32..=1 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let d = [dx, dy, dz];
                    let mut coef = k2 * w.mass_coefficient(d);
                    for a in 0..3 {
                        let (j, k) = ((a + 1) % 3, (a + 2) % 3);
                        let t = trans(d[j], d[k]);
                        if t != 0.0 {
                            coef += d2[a][(d[a] + 1) as usize] * t;
                        }
                    }
                    if coef == Complex64::zero() {
                        continue;
                    }
                    let t = [0, 1, 2].map(|a| p[a] as i64 + d[a] as i64);
                    self.resolve(t, coef, region, 0, &mut entries);
                }
            }
        }
        entries.sort_by_key(|e| region.local_index(e.0));
        let mut merged: Vec<([usize; 3], Complex64)> = Vec::with_capacity(entries.len());
        for (q, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == q => last.1 += v,
                _ => merged.push((q, v)),
            }
        }
        if merged.iter().any(|e| !(e.1.re.is_finite() && e.1.im.is_finite())) {
            return Err(Error::NonFinite(idx));
        }
        Ok(merged)
    }

    /// Maps a stencil target to in-region points, eliminating ghosts through
    /// the side closures; ghosts on dropping sides vanish.
    fn resolve(
        &self,
        t: [i64; 3],
        coef: Complex64,
        region: &Region,
        axis: usize,
        out: &mut Vec<([usize; 3], Complex64)>,
    ) {
        if axis == 3 {
            let q = t.map(|v| v as usize);
            if !self.is_dirichlet(q) {
                out.push((q, coef));
            }
            return;
        }
        let (lo, hi) = (region.lo[axis] as i64, region.hi[axis] as i64);
        let side = if t[axis] < lo {
            0
        } else if t[axis] >= hi {
            1
        } else {
            return self.resolve(t, coef, region, axis + 1, out);
        };
        if !region.sides[axis][side].reflect {
            return;
        }
        // Ghost u_{b∓1} = u_{b±1} + 2ikh·u_b at boundary index b.
        let (b, inner) = if side == 0 { (lo, lo + 1) } else { (hi - 1, hi - 2) };
        let mut tb = t;
        tb[axis] = b;
        let mut ti = t;
        ti[axis] = inner;
        let clamp = [0, 1, 2].map(|a| tb[a].clamp(region.lo[a] as i64, region.hi[a] as i64 - 1) as usize);
        let k = self.freq.wavenumber(self.c[self.grid.index(clamp)]);
        let robin = Complex64::new(0.0, 2.0 * self.grid.h) * k;
        self.resolve(ti, coef, region, axis + 1, out);
        self.resolve(tb, coef * robin, region, axis + 1, out);
    }

    /// Sparse operator over `region` (local indices).
    pub(crate) fn assemble_region<T: Real>(&self, region: &Region) -> Result<SparseOperator<T>> {
        let n = region.len();
        let rows: Vec<Result<Vec<(u32, Complex<T>)>>> = (0..n)
            .into_par_iter()
            .map(|l| {
                let p = region.point(l);
                let r = self.row(p, region)?;
                Ok(r.into_iter()
                    .map(|(q, v)| (region.local_index(q) as u32, cast::<T>(v)))
                    .collect())
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n * 27);
        let mut values = Vec::with_capacity(n * 27);
        row_ptr.push(0);
        for r in rows {
            for (c, v) in r? {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOperator::from_csr(n, row_ptr, col_idx, values)
    }

    /// Global operator A on the padded grid.
    pub fn assemble<T: Real>(&self) -> Result<SparseOperator<T>> {
        self.assemble_region(&self.global_region())
    }

    /// One column per source on the padded grid.
    pub fn build_rhs<T: Real>(&self, sources: &[PointSource]) -> Result<Block<T>> {
        let mut b = Block::zeros(self.n(), sources.len());
        let dirs = quasi_uniform_directions(96);
        for (j, s) in sources.iter().enumerate() {
            let p = self.source_point(s)?;
            let idx = self.grid.index(p);
            let h3 = self.grid.h.powi(3);
            let scale = match self.normalization {
                SourceNormalization::CellVolume => 1.0,
                SourceNormalization::MassSymbol => {
                    let g = self.c[idx].re / (self.freq.f * self.grid.h);
                    mean_mass_symbol(&self.weights[idx], g, &dirs)
                }
            };
            let v = b.get(idx, j) + cast::<T>(s.amplitude * (scale / h3));
            b.set(idx, j, v);
        }
        Ok(b)
    }

    /// Padded-grid point a source snaps to; rejects PML and Dirichlet points.
    pub fn source_point(&self, s: &PointSource) -> Result<[usize; 3]> {
        let p = self.grid.nearest(s.position).ok_or_else(|| {
            Error::InvalidArgument(format!("source {:?} lies outside the grid", s.position))
        })?;
        if !self.is_interior(p) {
            return Err(Error::SourceInPml(s.position));
        }
        if self.is_dirichlet(p) {
            return Err(Error::InvalidArgument(format!(
                "source {:?} lies on a Dirichlet face",
                s.position
            )));
        }
        Ok(p)
    }
}

/// Convenience: problem setup followed by global assembly.
pub fn assemble<T: Real>(
    model: &VelocityModel,
    freq: FrequencySpec,
    table: &WeightTable,
    bc: BoundarySpec,
    pml: PmlProfile,
) -> Result<SparseOperator<T>> {
    HelmholtzProblem::new(model, freq, table, bc, pml)?.assemble()
}
