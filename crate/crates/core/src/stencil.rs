//! Wavelength-adaptive 27-point stencil: weights, plane-wave symbol, fit
//! by dispersion minimization, and the G-indexed weight table.
//!
//! The stiffness part mixes three Laplacians (axis-aligned, face-diagonal
//! rotated averaged over the three rotated frames, body-diagonal). Written
//! per axis, every mix has the factored form
//!
//! ```text
//! Σ_i ∂²_i ∘ (p0 + p1·(A_j + A_k) + p2·A_j·A_k)
//! ```
//!
//! where `A_j` averages the two neighbors along axis j. The mass part spreads
//! k²u over center, face, edge and corner neighbors.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilWeights {
    /// Axis-aligned, face-rotated, corner-rotated Laplacian mix.
    pub w: [f64; 3],
    /// Center, face, edge, corner mass distribution.
    pub wm: [f64; 4],
}

impl StencilWeights {
    /// Second-order 7-point Laplacian with a lumped mass.
    pub const CLASSICAL: StencilWeights = StencilWeights {
        w: [1.0, 0.0, 0.0],
        wm: [1.0, 0.0, 0.0, 0.0],
    };

    pub fn new(w: [f64; 3], wm: [f64; 4]) -> Result<Self> {
        let s = StencilWeights { w, wm };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let sw: f64 = self.w.iter().sum();
        let sm: f64 = self.wm.iter().sum();
        if self.w.iter().chain(&self.wm).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("stencil weights must be finite".into()));
        }
        if (sw - 1.0).abs() > 1e-10 || (sm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "stencil weights must each sum to 1 (got {sw}, {sm})"
            )));
        }
        Ok(())
    }

    /// Coefficients (p0, p1, p2) of the transverse factor.
    #[inline]
    pub fn transverse(&self) -> [f64; 3] {
        let [w1, w2, w3] = self.w;
        [w1 + 2.0 * w2 / 3.0 + w3 / 3.0, (w2 + w3) / 6.0, w3 / 3.0]
    }

    /// Mass coefficient of a neighbor offset in {−1,0,1}³.
    #[inline]
    pub fn mass_coefficient(&self, d: [i32; 3]) -> f64 {
        match d.iter().filter(|&&x| x != 0).count() {
            0 => self.wm[0],
            1 => self.wm[1] / 6.0,
            2 => self.wm[2] / 12.0,
            _ => self.wm[3] / 8.0,
        }
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        let mut out = *self;
        for i in 0..3 {
            out.w[i] = (1.0 - t) * self.w[i] + t * other.w[i];
        }
        for i in 0..4 {
            out.wm[i] = (1.0 - t) * self.wm[i] + t * other.wm[i];
        }
        out
    }
}

/// Plane-wave symbol at phase θ = κh per axis: (h²·stiffness, mass).
pub fn symbol(weights: &StencilWeights, theta: [f64; 3]) -> (f64, f64) {
    let c = theta.map(f64::cos);
    let [p0, p1, p2] = weights.transverse();
    let mut l = 0.0;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        l += 2.0 * (c[i] - 1.0) * (p0 + p1 * (c[j] + c[k]) + p2 * c[j] * c[k]);
    }
    (l, mass_symbol(weights, c))
}

fn mass_symbol(weights: &StencilWeights, c: [f64; 3]) -> f64 {
    let [m0, m1, m2, m3] = weights.wm;
    m0 + m1 * (c[0] + c[1] + c[2]) / 3.0
        + m2 * (c[0] * c[1] + c[1] * c[2] + c[0] * c[2]) / 3.0
        + m3 * c[0] * c[1] * c[2]
}

fn theta(g: f64, dir: [f64; 3]) -> [f64; 3] {
    dir.map(|d| 2.0 * PI / g * d)
}

/// Ratio of numerical phase velocity to the true wavespeed for a plane wave
/// sampled with `g` points per wavelength along `direction`.
pub fn numerical_phase_velocity(weights: &StencilWeights, g: f64, direction: [f64; 3]) -> Result<f64> {
    if !(g > 2.0) {
        return Err(Error::BelowNyquist(g));
    }
    let n = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("direction must be unit length (|d| = {n})")));
    }
    let (l, m) = symbol(weights, theta(g, direction));
    let q = -l / m;
    Ok(if q > 0.0 { g / (2.0 * PI) * q.sqrt() } else { 0.0 })
}

/// Quasi-uniform unit vectors on the sphere (Fibonacci lattice).
pub fn quasi_uniform_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Σ_d (ratio_d − 1)² over the given directions.
pub fn dispersion_objective(weights: &StencilWeights, g: f64, dirs: &[[f64; 3]]) -> Result<f64> {
    let mut s = 0.0;
    for d in dirs {
        let r = numerical_phase_velocity(weights, g, *d)? - 1.0;
        s += r * r;
    }
    Ok(s)
}

/// max_d |ratio_d − 1|.
pub fn max_dispersion_error(weights: &StencilWeights, g: f64, dirs: &[[f64; 3]]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for d in dirs {
        worst = worst.max((numerical_phase_velocity(weights, g, *d)? - 1.0).abs());
    }
    Ok(worst)
}

/// Direction average of the mass symbol at sampling `g`.
pub fn mean_mass_symbol(weights: &StencilWeights, g: f64, dirs: &[[f64; 3]]) -> f64 {
    let s: f64 = dirs
        .iter()
        .map(|d| mass_symbol(weights, theta(g, *d).map(f64::cos)))
        .sum();
    s / dirs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub directions: usize,
    pub starts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Weight of the pull toward the initial weights when one is given.
    pub anchor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            directions: 96,
            starts: 8,
            max_iterations: 500,
            seed: 7,
            anchor: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub weights: StencilWeights,
    pub objective: f64,
    pub max_error: f64,
    pub iterations: usize,
}

// Weights are squares normalized onto the simplex, so they stay nonnegative
// and sum to one exactly up to rounding.
fn params_to_weights(p: &[f64; 7]) -> StencilWeights {
    let sa: f64 = p[..3].iter().map(|a| a * a).sum();
    let sb: f64 = p[3..].iter().map(|b| b * b).sum();
    StencilWeights {
        w: [0, 1, 2].map(|i| p[i] * p[i] / sa),
        wm: [0, 1, 2, 3].map(|i| p[3 + i] * p[3 + i] / sb),
    }
}

fn weights_to_params(w: &StencilWeights) -> [f64; 7] {
    // Keep every parameter away from zero, which is a stationary point.
    let mut p = [0.0; 7];
    for i in 0..3 {
        p[i] = w.w[i].max(1e-6).sqrt();
    }
    for i in 0..4 {
        p[3 + i] = w.wm[i].max(1e-6).sqrt();
    }
    p
}

/// Pull toward a neighboring table entry; breaks ties between the nearly
/// equivalent minimizers found at fine sampling.
struct Anchor {
    weights: StencilWeights,
    sqrt_mu: f64,
}

/// Residuals ratio_d − 1 (then anchor rows) and their Jacobian in the
/// simplex parameters.
fn residuals(
    p: &[f64; 7],
    g: f64,
    dirs: &[[f64; 3]],
    anchor: Option<&Anchor>,
    r: &mut Vec<f64>,
    jac: &mut Vec<[f64; 7]>,
) {
    r.clear();
    jac.clear();
    let wt = params_to_weights(p);
    let sa: f64 = p[..3].iter().map(|a| a * a).sum();
    let sb: f64 = p[3..].iter().map(|b| b * b).sum();
    let units_w = [0, 1, 2].map(|f| {
        let mut e = StencilWeights::CLASSICAL;
        e.w = [0.0; 3];
        e.w[f] = 1.0;
        e
    });
    // d(ratio)/dw → d(ratio)/da through w_i = a_i²/Σa².
    let chain = |dw: [f64; 3], dm: [f64; 4]| {
        let mut row = [0.0; 7];
        let mean_w: f64 = (0..3).map(|i| wt.w[i] * dw[i]).sum();
        let mean_m: f64 = (0..4).map(|i| wt.wm[i] * dm[i]).sum();
        for j in 0..3 {
            row[j] = 2.0 * p[j] / sa * (dw[j] - mean_w);
        }
        for j in 0..4 {
            row[3 + j] = 2.0 * p[3 + j] / sb * (dm[j] - mean_m);
        }
        row
    };
    for d in dirs {
        let th = theta(g, *d);
        let c = th.map(f64::cos);
        let lf = units_w.map(|u| symbol(&u, th).0);
        let mf = [
            1.0,
            (c[0] + c[1] + c[2]) / 3.0,
            (c[0] * c[1] + c[1] * c[2] + c[0] * c[2]) / 3.0,
            c[0] * c[1] * c[2],
        ];
        let l: f64 = (0..3).map(|i| wt.w[i] * lf[i]).sum();
        let m: f64 = (0..4).map(|i| wt.wm[i] * mf[i]).sum();
        let q = -l / m;
        if q <= 0.0 || m == 0.0 {
            r.push(-1.0);
            jac.push([0.0; 7]);
            continue;
        }
        r.push(g / (2.0 * PI) * q.sqrt() - 1.0);
        let ds = g / (2.0 * PI) / (2.0 * q.sqrt());
        let dw = [0, 1, 2].map(|i| ds * (-lf[i] / m));
        let dm = [0, 1, 2, 3].map(|i| ds * (l * mf[i] / (m * m)));
        jac.push(chain(dw, dm));
    }
    if let Some(a) = anchor {
        for i in 0..3 {
            r.push(a.sqrt_mu * (wt.w[i] - a.weights.w[i]));
            let mut dw = [0.0; 3];
            dw[i] = a.sqrt_mu;
            jac.push(chain(dw, [0.0; 4]));
        }
        for i in 0..4 {
            r.push(a.sqrt_mu * (wt.wm[i] - a.weights.wm[i]));
            let mut dm = [0.0; 4];
            dm[i] = a.sqrt_mu;
            jac.push(chain([0.0; 3], dm));
        }
    }
}

fn solve_small(mut a: [[f64; 7]; 7], mut b: [f64; 7]) -> Option<[f64; 7]> {
    for col in 0..7 {
        let piv = (col..7).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..7 {
            let f = a[row][col] / a[col][col];
            for k in col..7 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 7];
    for row in (0..7).rev() {
        let s: f64 = (row + 1..7).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

struct LmResult {
    params: [f64; 7],
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Levenberg–Marquardt from one start.
fn levenberg_marquardt(
    start: [f64; 7],
    g: f64,
    dirs: &[[f64; 3]],
    anchor: Option<&Anchor>,
    max_iterations: usize,
) -> LmResult {
    const WINDOW: usize = 50;
    let (mut r, mut jac) = (Vec::new(), Vec::new());
    let (mut rn, mut jn) = (Vec::new(), Vec::new());
    let mut p = start;
    residuals(&p, g, dirs, anchor, &mut r, &mut jac);
    let mut obj: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut history = Vec::with_capacity(max_iterations);
    let done = |p, objective, iterations| LmResult {
        params: p,
        objective,
        iterations,
        converged: true,
    };
    for it in 0..max_iterations {
        history.push(obj);
        let mut h = [[0.0; 7]; 7];
        let mut grad = [0.0; 7];
        for (ri, row) in r.iter().zip(&jac) {
            for a in 0..7 {
                grad[a] += row[a] * ri;
                for b in 0..7 {
                    h[a][b] += row[a] * row[b];
                }
            }
        }
        if obj == 0.0 || grad.iter().all(|v| v.abs() <= 1e-18) {
            return done(p, obj, it);
        }
        loop {
            let mut hl = h;
            for a in 0..7 {
                hl[a][a] += lambda * (h[a][a] + 1e-12);
            }
            if let Some(step) = solve_small(hl, grad.map(|v| -v)) {
                let mut pn = p;
                for a in 0..7 {
                    pn[a] += step[a];
                }
                let norm = pn.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm.is_finite() && norm > 0.0 {
                    residuals(&pn, g, dirs, anchor, &mut rn, &mut jn);
                    let on: f64 = rn.iter().map(|v| v * v).sum();
                    if on.is_finite() && on < obj {
                        let decrease = obj - on;
                        p = pn.map(|v| v / norm);
                        obj = on;
                        std::mem::swap(&mut r, &mut rn);
                        std::mem::swap(&mut jac, &mut jn);
                        lambda = (lambda / 3.0).max(1e-15);
                        if decrease <= 1e-12 * obj {
                            return done(p, obj, it + 1);
                        }
                        break;
                    }
                }
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // No descent direction left at working precision.
                return done(p, obj, it + 1);
            }
        }
    }
    // Slow creep toward a face of the simplex still counts as converged once
    // the objective has stagnated.
    let stagnated = history.len() > WINDOW && history[history.len() - WINDOW] - obj <= 1e-3 * obj;
    LmResult {
        params: p,
        objective: obj,
        iterations: max_iterations,
        converged: stagnated,
    }
}

fn fit_impl(g: f64, cfg: &FitConfig, init: Option<&StencilWeights>) -> Result<FitOutcome> {
    if !(g > 2.0) {
        return Err(Error::BelowNyquist(g));
    }
    if cfg.directions == 0 || cfg.max_iterations == 0 {
        return Err(Error::InvalidArgument("fit needs directions and iterations".into()));
    }
    let dirs = quasi_uniform_directions(cfg.directions);
    let anchor = init.filter(|_| cfg.anchor > 0.0).map(|w| Anchor {
        weights: *w,
        sqrt_mu: cfg.anchor.sqrt(),
    });
    let mut starts: Vec<[f64; 7]> = Vec::new();
    match init {
        Some(w) => starts.push(weights_to_params(w)),
        None => {
            starts.push(weights_to_params(&StencilWeights {
                w: [0.6, 0.3, 0.1],
                wm: [0.6, 0.3, 0.05, 0.05],
            }));
            starts.push([1.0; 7]);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ g.to_bits());
            while starts.len() < cfg.starts.max(2) {
                let mut p = [0.0; 7];
                for v in p.iter_mut() {
                    *v = rng.gen_range(0.1..1.0);
                }
                starts.push(p);
            }
        }
    }
    let mut best: Option<LmResult> = None;
    let mut total_iterations = 0;
    for s in starts {
        let out = levenberg_marquardt(s, g, &dirs, anchor.as_ref(), cfg.max_iterations);
        total_iterations += out.iterations;
        let better = best.as_ref().map_or(true, |b| {
            (out.converged, -out.objective) > (b.converged, -b.objective)
        });
        if out.objective.is_finite() && better {
            best = Some(out);
        }
    }
    let best = match best {
        Some(b) if b.converged => b,
        other => {
            return Err(Error::FitNonConvergence {
                g,
                objective: other.map_or(f64::NAN, |b| b.objective),
            })
        }
    };
    let weights = params_to_weights(&best.params);
    Ok(FitOutcome {
        weights,
        objective: dispersion_objective(&weights, g, &dirs)?,
        max_error: max_dispersion_error(&weights, g, &dirs)?,
        iterations: total_iterations,
    })
}

/// Dispersion-minimizing weights at `g` points per wavelength.
pub fn fit_weights(g: f64) -> Result<StencilWeights> {
    fit_weights_with(g, &FitConfig::default(), None).map(|o| o.weights)
}

/// Fit with explicit configuration. With `init`, the search starts there and
/// is weakly anchored to it (`FitConfig::anchor`).
pub fn fit_weights_with(g: f64, cfg: &FitConfig, init: Option<&StencilWeights>) -> Result<FitOutcome> {
    if g < 4.0 {
        return Err(Error::InvalidArgument(format!(
            "fit requires G ≥ 4 (got {g}); coarser sampling is not meaningful"
        )));
    }
    fit_impl(g, cfg, init)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub g_values: Vec<f64>,
    pub weights: Vec<StencilWeights>,
}

#[derive(Serialize, Deserialize)]
struct WeightTableFile {
    format: String,
    version: u32,
    directions: usize,
    entries: Vec<WeightTableEntry>,
}

#[derive(Serialize, Deserialize)]
struct WeightTableEntry {
    g: f64,
    w: [f64; 3],
    wm: [f64; 4],
}

const TABLE_FORMAT: &str = "helmdd-weight-table";
const TABLE_VERSION: u32 = 1;

impl WeightTable {
    pub fn new(g_values: Vec<f64>, weights: Vec<StencilWeights>) -> Result<Self> {
        if g_values.is_empty() || g_values.len() != weights.len() {
            return Err(Error::InvalidArgument("weight table needs one weight set per G".into()));
        }
        if g_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("G samples must be strictly ascending".into()));
        }
        for w in &weights {
            w.validate()?;
        }
        Ok(WeightTable { g_values, weights })
    }

    /// Same weights at every G (e.g. the classical 7-point scheme).
    pub fn constant(weights: StencilWeights) -> Self {
        WeightTable {
            g_values: vec![4.0, 40.0],
            weights: vec![weights, weights],
        }
    }

    /// The default fitted table over G ∈ [4, 40], built once per process.
    pub fn standard() -> &'static WeightTable {
        static TABLE: OnceLock<WeightTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            build_weight_table(4.0, 40.0, 37).expect("default weight table fit")
        })
    }

    /// Piecewise-linear in 1/G, clamped to the tabulated range.
    pub fn lookup(&self, g: f64) -> StencilWeights {
        let n = self.g_values.len();
        if n == 1 || g <= self.g_values[0] {
            return self.weights[0];
        }
        if g >= self.g_values[n - 1] {
            return self.weights[n - 1];
        }
        let hi = self.g_values.partition_point(|&v| v < g);
        if self.g_values[hi] == g {
            return self.weights[hi];
        }
        let lo = hi - 1;
        let (a, b, x) = (1.0 / self.g_values[lo], 1.0 / self.g_values[hi], 1.0 / g);
        self.weights[lo].lerp(&self.weights[hi], (a - x) / (a - b))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = WeightTableFile {
            format: TABLE_FORMAT.into(),
            version: TABLE_VERSION,
            directions: FitConfig::default().directions,
            entries: self
                .g_values
                .iter()
                .zip(&self.weights)
                .map(|(&g, w)| WeightTableEntry { g, w: w.w, wm: w.wm })
                .collect(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Load(format!("{}: {e}", path.as_ref().display())))?;
        let file: WeightTableFile =
            serde_json::from_str(&text).map_err(|e| Error::Load(e.to_string()))?;
        if file.format != TABLE_FORMAT || file.version != TABLE_VERSION {
            return Err(Error::Load(format!(
                "unsupported weight table {} v{}",
                file.format, file.version
            )));
        }
        let (g, w): (Vec<f64>, Vec<StencilWeights>) = file
            .entries
            .into_iter()
            .map(|e| (e.g, StencilWeights { w: e.w, wm: e.wm }))
            .unzip();
        WeightTable::new(g, w).map_err(|e| Error::Load(e.to_string()))
    }
}

/// Fits `samples` G values spaced uniformly in 1/G over [g_min, g_max].
pub fn build_weight_table(g_min: f64, g_max: f64, samples: usize) -> Result<WeightTable> {
    build_weight_table_with(g_min, g_max, samples, &FitConfig::default())
}

pub fn build_weight_table_with(
    g_min: f64,
    g_max: f64,
    samples: usize,
    cfg: &FitConfig,
) -> Result<WeightTable> {
    if g_min < 4.0 || !(g_max >= g_min) || samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "table needs 4 ≤ G_min ≤ G_max and samples ≥ 1 (got [{g_min}, {g_max}], {samples})"
        )));
    }
    let g_values: Vec<f64> = if samples == 1 || g_max == g_min {
        vec![g_min]
    } else {
        let (a, b) = (1.0 / g_max, 1.0 / g_min);
        (0..samples)
            .map(|i| match i {
                0 => g_max,
                _ if i == samples - 1 => g_min,
                _ => 1.0 / (a + (b - a) * i as f64 / (samples - 1) as f64),
            })
            .collect()
    };
    // Continuation from the coarsest sampling, the best determined fit.
    let mut weights = Vec::with_capacity(g_values.len());
    let mut prev: Option<StencilWeights> = None;
    for &g in g_values.iter().rev() {
        let out = fit_weights_with(g, cfg, prev.as_ref())?;
        prev = Some(out.weights);
        weights.push(out.weights);
    }
    weights.reverse();
    let mut pairs: Vec<(f64, StencilWeights)> = g_values.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (g, w) = pairs.into_iter().unzip();
    WeightTable::new(g, w)
}
