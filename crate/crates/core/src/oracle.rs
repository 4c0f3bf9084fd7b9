//! Reference wavefields and the weighted error metric.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_traits::Zero;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::grid::{CartesianGrid, FrequencySpec, PointSource, VelocityModel};
use crate::{Error, Result};

/// Free-space Green's function −e^{ikr}/(4πr) of Δ + k².
pub fn green(k: Complex64, r: f64) -> Complex64 {
    -(Complex64::i() * k * r).exp() / (4.0 * PI * r)
}

/// Mean of the Green's function over a ball of radius `a` centred on the
/// source; stands in for the singular value at a source grid node.
pub fn green_ball_average(k: Complex64, a: f64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let ika = Complex64::i() * k * a;
    -3.0 / (4.0 * PI * a.powi(3)) * (ika.exp() * (one - ika) - one) / (k * k)
}

/// Green's function of (Δ+k²)u = δ at `points`.
pub fn analytic_homogeneous(k: Complex64, source: [f64; 3], points: &[[f64; 3]]) -> Result<Vec<Complex64>> {
    if k.im < 0.0 {
        return Err(Error::InvalidArgument(format!("wavenumber {k} grows outward")));
    }
    points
        .iter()
        .map(|p| {
            let r = dist(*p, source);
            if r == 0.0 {
                return Err(Error::InvalidArgument("evaluation at the source point".into()));
            }
            Ok(green(k, r))
        })
        .collect()
}

/// Analytic field on every node of `grid`; a node coinciding with the
/// source takes the ball average over one cell volume.
pub fn analytic_on_grid(grid: &CartesianGrid, k: Complex64, source: &PointSource) -> Result<Vec<Complex64>> {
    if k.im < 0.0 {
        return Err(Error::InvalidArgument(format!("wavenumber {k} grows outward")));
    }
    let a = grid.h * (3.0 / (4.0 * PI)).cbrt();
    Ok((0..grid.len())
        .map(|i| {
            let r = dist(grid.position(grid.coords(i)), source.position);
            let g = if r < 1e-9 * grid.h { green_ball_average(k, a) } else { green(k, r) };
            g * source.amplitude
        })
        .collect())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbsConfig {
    /// Threshold on ‖(Δ+k²)u − f‖²/‖f‖² of the scattered-field problem.
    pub tol: f64,
    pub max_iterations: usize,
    /// Absorbing padding per face, in longest wavelengths.
    pub pad_wavelengths: f64,
    /// Target amplitude left after a wave crosses both absorbing layers.
    pub edge_attenuation: f64,
    /// Damping as a multiple of max |k² − k₀²| (must exceed 1).
    pub damping_factor: f64,
}

impl Default for CbsConfig {
    fn default() -> Self {
        CbsConfig {
            tol: 1e-12,
            max_iterations: 20_000,
            pad_wavelengths: 2.0,
            edge_attenuation: 1e-5,
            damping_factor: 1.05,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CbsReport {
    pub iterations: Vec<usize>,
    pub history: Vec<Vec<f64>>,
    pub k0_squared: f64,
    pub epsilon: f64,
    pub dims: [usize; 3],
}

fn fft_size(n: usize) -> usize {
    (n..)
        .find(|&m| {
            let mut m = m;
            for p in [2, 3, 5] {
                while m % p == 0 {
                    m /= p;
                }
            }
            m == 1
        })
        .unwrap()
}

struct Fft3 {
    dims: [usize; 3],
    fwd: [std::sync::Arc<dyn Fft<f64>>; 3],
    inv: [std::sync::Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            dims,
            fwd: dims.map(|n| planner.plan_fft_forward(n)),
            inv: dims.map(|n| planner.plan_fft_inverse(n)),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let [nx, ny, nz] = self.dims;
        let plans = if inverse { &self.inv } else { &self.fwd };
        plans[0].process(data);
        let mut line = vec![Complex64::zero(); ny.max(nz)];
        for k in 0..nz {
            for i in 0..nx {
                for j in 0..ny {
                    line[j] = data[i + nx * (j + ny * k)];
                }
                plans[1].process(&mut line[..ny]);
                for j in 0..ny {
                    data[i + nx * (j + ny * k)] = line[j];
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                for k in 0..nz {
                    line[k] = data[i + nx * (j + ny * k)];
                }
                plans[2].process(&mut line[..nz]);
                for k in 0..nz {
                    data[i + nx * (j + ny * k)] = line[k];
                }
            }
        }
        if inverse {
            let s = 1.0 / data.len() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Convergent Born series reference on the model grid.
///
/// The incident field is the analytic Green's function of the wavenumber at
/// the source; the scattered field solves (Δ+k²)u_s = −(k² − k_b²)u_inc on a
/// periodic grid padded with an absorbing taper, and the total field is
/// returned on the model's own nodes.
pub fn cbs_solve(
    model: &VelocityModel,
    freq: FrequencySpec,
    sources: &[PointSource],
    cfg: &CbsConfig,
) -> Result<(Block<f64>, CbsReport)> {
    if !(cfg.damping_factor > 1.0) || !(cfg.tol > 0.0) || !(cfg.pad_wavelengths >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid CBS configuration {cfg:?}")));
    }
    let grid = &model.grid;
    let h = grid.h;
    let md = grid.dims();
    let lambda_max = freq.wavelength(model.c_max());
    let pad = (cfg.pad_wavelengths * lambda_max / h).ceil() as usize;
    let dims = md.map(|n| fft_size(n + 2 * pad));
    let off = [0, 1, 2].map(|a| (dims[a] - md[a]) / 2);
    let n: usize = dims.iter().product();
    let at = |p: [usize; 3]| p[0] + dims[0] * (p[1] + dims[1] * p[2]);

    // Medium k² on the padded grid, nearest extension plus absorbing taper.
    let k_max = freq.omega() / model.c_min();
    let mut k2 = vec![Complex64::zero(); n];
    let mut taper = vec![0.0; n];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let q = [x, y, z];
                let mut depth: f64 = 0.0;
                let src = [0, 1, 2].map(|a| {
                    let rel = q[a] as isize - off[a] as isize;
                    let clamped = rel.clamp(0, md[a] as isize - 1);
                    let width = if rel < 0 { off[a] } else { dims[a] - md[a] - off[a] };
                    if width > 0 && rel != clamped {
                        depth = depth.max((rel - clamped).unsigned_abs() as f64 / width as f64);
                    }
                    clamped as usize
                });
                let c = model.c[grid.index(src)];
                let k = freq.wavenumber(c);
                k2[at(q)] = k * k;
                taper[at(q)] = depth * depth;
            }
        }
    }
    let width = (pad.max(1) as f64) * h;
    let alpha_max = 3.0 * k_max * (1.0 / cfg.edge_attenuation).ln() / width;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &k2 {
        lo = lo.min(v.re);
        hi = hi.max(v.re);
    }
    let k0sq = 0.5 * (lo + hi);
    let medium: Vec<Complex64> = k2
        .iter()
        .zip(&taper)
        .map(|(v, t)| v + Complex64::new(0.0, alpha_max * t))
        .collect();
    let eps = cfg.damping_factor
        * medium
            .iter()
            .map(|v| (v - k0sq).norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
    let pot: Vec<Complex64> = medium.iter().map(|v| v - Complex64::new(k0sq, eps)).collect();

    // Background symbol k₀² + iε − |p|².
    let freqs = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                2.0 * PI * m / (n as f64 * h)
            })
            .collect()
    };
    let (px, py, pz) = (freqs(dims[0]), freqs(dims[1]), freqs(dims[2]));
    let mut l0 = vec![Complex64::zero(); n];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p2 = px[x] * px[x] + py[y] * py[y] + pz[z] * pz[z];
                l0[at([x, y, z])] = Complex64::new(k0sq - p2, eps);
            }
        }
    }
    let fft = Fft3::new(dims);
    let gamma_scale = Complex64::new(0.0, 1.0 / eps);

    let mut out = Block::zeros(grid.len(), sources.len());
    let mut report = CbsReport {
        k0_squared: k0sq,
        epsilon: eps,
        dims,
        ..Default::default()
    };
    for (col, s) in sources.iter().enumerate() {
        let sp = grid
            .nearest(s.position)
            .ok_or_else(|| Error::InvalidArgument(format!("source {:?} outside the model", s.position)))?;
        let kb = freq.wavenumber(model.c[grid.index(sp)]);
        let src_pos = grid.position(sp);
        let a = h * (3.0 / (4.0 * PI)).cbrt();
        let origin = [0, 1, 2].map(|ax| grid.origin[ax] - off[ax] as f64 * h);
        let mut uinc = vec![Complex64::zero(); n];
        let mut rhs = vec![Complex64::zero(); n];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let idx = at([x, y, z]);
                    let pos = [origin[0] + x as f64 * h, origin[1] + y as f64 * h, origin[2] + z as f64 * h];
                    let r = dist(pos, src_pos);
                    let g = if r < 1e-9 * h { green_ball_average(kb, a) } else { green(kb, r) };
                    uinc[idx] = g * s.amplitude;
                    rhs[idx] = -(k2[idx] - kb * kb) * uinc[idx];
                }
            }
        }
        let rhs_norm2: f64 = rhs.iter().map(|v| v.norm_sqr()).sum();
        let mut u = vec![Complex64::zero(); n];
        let mut history = Vec::new();
        let mut iters = 0;
        if rhs_norm2 > 0.0 {
            let mut t = vec![Complex64::zero(); n];
            loop {
                // T(u) = g₀(f − V u), residual (Δ+k²)u − f = L₀(u − T(u)).
                for i in 0..n {
                    t[i] = rhs[i] - pot[i] * u[i];
                }
                fft.run(&mut t, false);
                for i in 0..n {
                    t[i] /= l0[i];
                }
                fft.run(&mut t, true);
                let mut diff: Vec<Complex64> = u.iter().zip(&t).map(|(a, b)| a - b).collect();
                let mut r = diff.clone();
                fft.run(&mut r, false);
                let r2: f64 = r.iter().zip(&l0).map(|(a, b)| (a * b).norm_sqr()).sum::<f64>() / n as f64;
                let be = r2 / rhs_norm2;
                history.push(be);
                if be <= cfg.tol {
                    break;
                }
                if iters >= cfg.max_iterations || !be.is_finite() {
                    return Err(Error::CbsNonConvergence {
                        iterations: iters,
                        backward_error: be,
                    });
                }
                for i in 0..n {
                    diff[i] *= gamma_scale * pot[i];
                    u[i] -= diff[i];
                }
                iters += 1;
            }
        } else {
            history.push(0.0);
        }
        let dst = out.col_mut(col);
        for z in 0..md[2] {
            for y in 0..md[1] {
                for x in 0..md[0] {
                    let idx = at([x + off[0], y + off[1], z + off[2]]);
                    dst[grid.index([x, y, z])] = u[idx] + uinc[idx];
                }
            }
        }
        report.iterations.push(iters);
        report.history.push(history);
    }
    Ok((out, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetricConfig {
    pub source: [f64; 3],
    /// Mute radius in local wavelengths.
    pub mute_wavelengths: f64,
    /// Local wavelength at the source, in metres.
    pub wavelength: f64,
}

impl ErrorMetricConfig {
    pub fn new(source: [f64; 3], wavelength: f64) -> Self {
        ErrorMetricConfig {
            source,
            mute_wavelengths: 1.0,
            wavelength,
        }
    }
}

/// Sum of the ℓ1 misfits of the gained real and imaginary parts, each
/// relative to the gained reference. Gain is the distance to the source;
/// points within the mute radius are dropped.
pub fn error_metric(u_ref: &[Complex64], u_test: &[Complex64], grid: &CartesianGrid, cfg: &ErrorMetricConfig) -> Result<f64> {
    if u_ref.len() != grid.len() || u_test.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: if u_ref.len() != grid.len() { u_ref.len() } else { u_test.len() },
        });
    }
    if !(cfg.mute_wavelengths >= 0.0) {
        return Err(Error::InvalidArgument("mute radius must be ≥ 0".into()));
    }
    let mute = cfg.mute_wavelengths * cfg.wavelength;
    let (mut dre, mut dim, mut rre, mut rim) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..grid.len() {
        let r = dist(grid.position(grid.coords(i)), cfg.source);
        if r < mute {
            continue;
        }
        let d = u_ref[i] - u_test[i];
        dre += (r * d.re).abs();
        dim += (r * d.im).abs();
        rre += (r * u_ref[i].re).abs();
        rim += (r * u_ref[i].im).abs();
    }
    if rre == 0.0 || rim == 0.0 {
        return Err(Error::UndefinedMetric("reference vanishes after muting".into()));
    }
    Ok(dre / rre + dim / rim)
}
