//! Cartesian grids, velocity models and benchmark media.
//!
//! Time convention is e^{−iωt}: outgoing waves behave like e^{+ikr} and an
//! attenuating medium has Im k > 0, which means Im c < 0.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Axis {
        match i {
            0 => Axis::X,
            1 => Axis::Y,
            _ => Axis::Z,
        }
    }
}

/// Regular grid. Linear index is `i + nx·(j + ny·k)`, x fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub origin: [f64; 3],
}

impl CartesianGrid {
    pub fn new(dims: [usize; 3], h: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points per axis, got {dims:?}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid interval {h} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|p| p.checked_mul(dims[2]))
            .filter(|&p| p <= u32::MAX as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("grid {dims:?} is too large")))?;
        Ok(CartesianGrid {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
            h,
            origin,
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.nx * (p[1] + self.ny * p[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nx;
        let r = idx / self.nx;
        [i, r % self.ny, r / self.ny]
    }

    #[inline]
    pub fn position(&self, p: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + p[0] as f64 * self.h,
            self.origin[1] + p[1] as f64 * self.h,
            self.origin[2] + p[2] as f64 * self.h,
        ]
    }

    pub fn extent(&self) -> [f64; 3] {
        let d = self.dims();
        [0, 1, 2].map(|a| (d[a] - 1) as f64 * self.h)
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        let e = self.extent();
        let tol = 1e-9 * self.h;
        (0..3).all(|a| x[a] >= self.origin[a] - tol && x[a] <= self.origin[a] + e[a] + tol)
    }

    /// Grid point nearest to a physical position, if inside the extent.
    pub fn nearest(&self, x: [f64; 3]) -> Option<[usize; 3]> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dims();
        Some([0, 1, 2].map(|a| {
            let t = ((x[a] - self.origin[a]) / self.h).round().max(0.0) as usize;
            t.min(d[a] - 1)
        }))
    }
}

/// Grid with interval ≤ `h_max` dividing every extent exactly.
pub fn grid_for_extent(extent: [f64; 3], h_max: f64) -> Result<CartesianGrid> {
    if extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(format!("extent {extent:?} must be positive")));
    }
    if !(h_max > 0.0 && h_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid interval {h_max} must be positive")));
    }
    let long = extent.iter().cloned().fold(0.0, f64::max);
    let n0 = ((long / h_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    for n in n0..=n0.saturating_mul(64).max(n0 + 64) {
        let h = long / n as f64;
        let counts = extent.map(|e| e / h);
        if counts.iter().all(|c| (c - c.round()).abs() <= 1e-9 * c.max(1.0)) {
            let dims = counts.map(|c| c.round() as usize + 1);
            return CartesianGrid::new(dims, h, [0.0; 3]);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no grid interval ≤ {h_max} divides extent {extent:?} exactly"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub f: f64,
}

impl FrequencySpec {
    pub fn new(f: f64) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidArgument(format!("frequency {f} must be positive")));
        }
        Ok(FrequencySpec { f })
    }

    #[inline]
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.f
    }

    /// k = ω/c.
    #[inline]
    pub fn wavenumber(&self, c: Complex64) -> Complex64 {
        Complex64::new(self.omega(), 0.0) / c
    }

    #[inline]
    pub fn wavelength(&self, c: f64) -> f64 {
        c / self.f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub position: [f64; 3],
    pub amplitude: Complex64,
}

impl PointSource {
    pub fn new(position: [f64; 3]) -> Self {
        PointSource {
            position,
            amplitude: Complex64::new(1.0, 0.0),
        }
    }

    pub fn with_amplitude(position: [f64; 3], amplitude: Complex64) -> Self {
        PointSource { position, amplitude }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    pub grid: CartesianGrid,
    pub c: Vec<Complex64>,
    pub label: String,
}

impl VelocityModel {
    pub fn new(grid: CartesianGrid, c: Vec<Complex64>, label: impl Into<String>) -> Result<Self> {
        if c.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: c.len(),
            });
        }
        for (i, v) in c.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite wavespeed at point {i}")));
            }
            if v.re <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "wavespeed {} at point {i} is not positive",
                    v.re
                )));
            }
            if v.im > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "wavespeed at point {i} has Im c > 0 (gain under e^(-iwt))"
                )));
            }
        }
        Ok(VelocityModel {
            grid,
            c,
            label: label.into(),
        })
    }

    pub fn homogeneous(grid: CartesianGrid, c0: f64) -> Result<Self> {
        let n = grid.len();
        VelocityModel::new(grid, vec![Complex64::new(c0, 0.0); n], "homogeneous")
    }

    /// Model from a function of the physical position.
    pub fn from_fn(
        grid: CartesianGrid,
        label: impl Into<String>,
        f: impl Fn([f64; 3]) -> f64,
    ) -> Result<Self> {
        let c = (0..grid.len())
            .map(|i| Complex64::new(f(grid.position(grid.coords(i))), 0.0))
            .collect();
        VelocityModel::new(grid, c, label)
    }

    pub fn c_min(&self) -> f64 {
        self.c.iter().map(|v| v.re).fold(f64::INFINITY, f64::min)
    }

    pub fn c_max(&self) -> f64 {
        self.c.iter().map(|v| v.re).fold(0.0, f64::max)
    }

    /// Points per wavelength λ/h at each grid point.
    pub fn points_per_wavelength(&self, freq: &FrequencySpec) -> Vec<f64> {
        self.c.iter().map(|v| v.re / (freq.f * self.grid.h)).collect()
    }

    /// Every `s`-th point along each axis, starting at the origin.
    pub fn subsample(&self, s: usize) -> Result<VelocityModel> {
        if s == 0 {
            return Err(Error::InvalidArgument("stride must be ≥ 1".into()));
        }
        let d = self.grid.dims();
        let cd = d.map(|n| (n - 1) / s + 1);
        let grid = CartesianGrid::new(cd, self.grid.h * s as f64, self.grid.origin)?;
        let mut c = Vec::with_capacity(grid.len());
        for k in 0..cd[2] {
            for j in 0..cd[1] {
                for i in 0..cd[0] {
                    c.push(self.c[self.grid.index([i * s, j * s, k * s])]);
                }
            }
        }
        VelocityModel::new(grid, c, self.label.clone())
    }
}

fn check_build_args(c0: f64, f: f64, ppw: f64) -> Result<()> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::InvalidArgument(format!("wavespeed {c0} must be positive")));
    }
    FrequencySpec::new(f)?;
    if !(ppw >= 2.0 && ppw.is_finite()) {
        return Err(Error::InvalidArgument(format!("points per wavelength {ppw} must be ≥ 2")));
    }
    Ok(())
}

/// Constant wavespeed `c0` with h = (c0/f)/ppw rounded down to divide the extent.
pub fn build_homogeneous(extent: [f64; 3], c0: f64, f: f64, ppw: f64) -> Result<VelocityModel> {
    check_build_args(c0, f, ppw)?;
    let grid = grid_for_extent(extent, c0 / f / ppw)?;
    VelocityModel::homogeneous(grid, c0)
}

/// c = c0 + alpha·(coordinate along `axis`), sampled for the slowest speed.
pub fn build_gradient(
    extent: [f64; 3],
    c0: f64,
    alpha: f64,
    axis: Axis,
    f: f64,
    ppw_min: f64,
) -> Result<VelocityModel> {
    check_build_args(c0, f, ppw_min)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument("gradient must be finite".into()));
    }
    let a = axis.index();
    let far = c0 + alpha * extent[a];
    if far <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gradient {alpha} gives non-positive wavespeed {far} at the far face"
        )));
    }
    let c_min = c0.min(far);
    let grid = grid_for_extent(extent, c_min / f / ppw_min)?;
    let label = if alpha == 0.0 { "homogeneous" } else { "gradient" };
    let c = (0..grid.len())
        .map(|i| {
            let x = grid.position(grid.coords(i));
            Complex64::new(c0 + alpha * (x[a] - grid.origin[a]), 0.0)
        })
        .collect();
    VelocityModel::new(grid, c, label)
}

/// Parameters of the seeded layered medium used as a stand-in for
/// realistic heterogeneous models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredRandomSpec {
    pub c_min: f64,
    pub c_max: f64,
    pub depth_axis: Axis,
    /// Relative amplitude of the smooth lateral perturbation.
    pub lateral: f64,
    pub seed: u64,
}

impl Default for LayeredRandomSpec {
    fn default() -> Self {
        LayeredRandomSpec {
            c_min: 1500.0,
            c_max: 3000.0,
            depth_axis: Axis::Z,
            lateral: 0.2,
            seed: 1,
        }
    }
}

/// 5–10 layers along the depth axis with a smooth ±`lateral` relative
/// perturbation, clamped to `[c_min, c_max]`.
pub fn build_layered_random(grid: CartesianGrid, spec: &LayeredRandomSpec) -> Result<VelocityModel> {
    if !(spec.c_min > 0.0 && spec.c_max >= spec.c_min) {
        return Err(Error::InvalidArgument(format!(
            "layered model needs 0 < c_min ≤ c_max, got [{}, {}]",
            spec.c_min, spec.c_max
        )));
    }
    if !(0.0..1.0).contains(&spec.lateral) {
        return Err(Error::InvalidArgument("lateral perturbation must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nlayers: usize = rng.gen_range(5..=10);
    let mut tops: Vec<f64> = (1..nlayers).map(|_| rng.gen::<f64>()).collect();
    tops.sort_by(|a, b| a.total_cmp(b));
    let mut speeds: Vec<f64> = (0..nlayers)
        .map(|_| spec.c_min + (spec.c_max - spec.c_min) * rng.gen::<f64>())
        .collect();
    speeds.sort_by(|a, b| a.total_cmp(b));

    let d = spec.depth_axis.index();
    let (la, lb) = ((d + 1) % 3, (d + 2) % 3);
    let e = grid.extent();
    // Three random plane cosines across the lateral plane.
    let modes: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.5..2.5) * 2.0 * PI / e[la].max(grid.h),
                rng.gen_range(0.5..2.5) * 2.0 * PI / e[lb].max(grid.h),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5..1.0),
            ]
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m[3]).sum();

    let c = (0..grid.len())
        .map(|idx| {
            let x = grid.position(grid.coords(idx));
            let depth = (x[d] - grid.origin[d]) / e[d];
            let layer = tops.iter().filter(|&&t| depth >= t).count();
            let (u, v) = (x[la] - grid.origin[la], x[lb] - grid.origin[lb]);
            let p: f64 = modes
                .iter()
                .map(|m| m[3] * (m[0] * u + m[1] * v + m[2]).cos())
                .sum::<f64>()
                / norm;
            let val = speeds[layer] * (1.0 + spec.lateral * p);
            Complex64::new(val.clamp(spec.c_min, spec.c_max), 0.0)
        })
        .collect();
    VelocityModel::new(grid, c, "layered-random")
}

/// Quality factor, uniform or per grid point.
#[derive(Clone, Debug, PartialEq)]
pub enum QualityFactor {
    Uniform(f64),
    Field(Vec<f64>),
}

/// Complex wavespeed c·(1 − i/(2Q)), which makes Im k > 0 under e^{−iωt}.
pub fn attenuate(model: &VelocityModel, q: &QualityFactor) -> Result<VelocityModel> {
    let at = |i: usize| match q {
        QualityFactor::Uniform(v) => *v,
        QualityFactor::Field(v) => v[i],
    };
    if let QualityFactor::Field(v) = q {
        if v.len() != model.c.len() {
            return Err(Error::DimensionMismatch {
                expected: model.c.len(),
                got: v.len(),
            });
        }
    }
    let mut c = model.c.clone();
    for (i, ci) in c.iter_mut().enumerate() {
        let qi = at(i);
        if !(qi > 0.0) {
            return Err(Error::InvalidArgument(format!("quality factor {qi} must be positive")));
        }
        *ci *= Complex64::new(1.0, -0.5 / qi);
    }
    VelocityModel::new(model.grid.clone(), c, model.label.clone())
}
