//! TOML run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use helmdd_core::assembly::{BoundarySpec, FaceCondition, PmlProfile, SourceNormalization};
use helmdd_core::grid::{
    attenuate, build_layered_random, Axis, CartesianGrid, LayeredRandomSpec,
    PointSource, QualityFactor, VelocityModel,
};
use helmdd_core::krylov::KrylovConfig;
use helmdd_core::local::InterfaceCondition;
use helmdd_core::oras::{CoarseOperatorKind, Level};
use helmdd_core::raw::load_raw_model;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Homogeneous,
    Gradient,
    LayeredRandom,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Interior grid points per axis; ignored when `ppw` is set.
    pub dims: [usize; 3],
    pub h: f64,
    /// Physical extent; with `ppw`, h follows the frequency.
    pub extent: Option<[f64; 3]>,
    /// Points per minimum wavelength used to derive h from the frequency.
    pub ppw: Option<f64>,
    pub origin: [f64; 3],
    pub c0: f64,
    /// Gradient slope (1/s) along `axis`.
    pub alpha: f64,
    pub axis: Axis,
    pub c_min: f64,
    pub c_max: f64,
    pub lateral: f64,
    /// Uniform quality factor; none means lossless.
    pub q: Option<f64>,
    pub header: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Homogeneous,
            dims: [32; 3],
            h: 25.0,
            extent: None,
            ppw: None,
            origin: [0.0; 3],
            c0: 1500.0,
            alpha: 0.0,
            axis: Axis::Z,
            c_min: 1500.0,
            c_max: 3000.0,
            lateral: 0.2,
            q: None,
            header: None,
            data: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    Pml,
    Robin,
    Dirichlet,
    /// Dirichlet on the low face of the depth axis, PML elsewhere.
    FreeSurface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub kind: BoundaryKind,
    pub npml: usize,
    pub power: f64,
    pub reflection: f64,
    pub normalization: SourceNormalization,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        let p = PmlProfile::default();
        BoundaryConfig {
            kind: BoundaryKind::Pml,
            npml: p.npml,
            power: p.power,
            reflection: p.reflection,
            normalization: SourceNormalization::default(),
        }
    }
}

impl BoundaryConfig {
    pub fn spec(&self, depth_axis: Axis) -> BoundarySpec {
        match self.kind {
            BoundaryKind::Pml => BoundarySpec::all(FaceCondition::Pml),
            BoundaryKind::Robin => BoundarySpec::all(FaceCondition::Robin),
            BoundaryKind::Dirichlet => BoundarySpec::all(FaceCondition::Dirichlet),
            BoundaryKind::FreeSurface => BoundarySpec::free_surface(depth_axis.index()),
        }
    }

    pub fn pml(&self) -> PmlProfile {
        PmlProfile {
            npml: self.npml,
            power: self.power,
            reflection: self.reflection,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub counts: [usize; 3],
    pub ovl: usize,
    /// Target owned points per axis; overrides `counts` when set.
    pub subdomain_points: Option<usize>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            counts: [1; 3],
            ovl: 3,
            subdomain_points: None,
        }
    }
}

impl PartitionConfig {
    pub fn counts_for(&self, dims: [usize; 3]) -> [usize; 3] {
        match self.subdomain_points {
            Some(p) => dims.map(|n| ((n as f64 / p.max(1) as f64).round() as usize).max(1)),
            None => self.counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreconditionerConfig {
    pub level: Level,
    pub interface: InterfaceCondition,
    pub coarse_factor: usize,
    pub coarse_operator: CoarseOperatorKind,
    pub coarse_exact: bool,
    /// Squared backward-error target of the inner coarse solve.
    pub coarse_tol: f64,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        let c = helmdd_core::oras::CoarseOptions::default();
        PreconditionerConfig {
            level: Level::One,
            interface: InterfaceCondition::Pml,
            coarse_factor: c.factor,
            coarse_operator: c.operator,
            coarse_exact: c.exact,
            coarse_tol: c.inner.tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceLayout {
    /// One source at the centre of the interior.
    Center,
    /// A regular `grid[0] × grid[1]` lateral array at fractional `depth`.
    GridOfNodes,
    /// Explicit `positions`.
    List,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub layout: SourceLayout,
    pub grid: [usize; 2],
    /// Fractional position along the depth axis.
    pub depth: f64,
    /// Fractional lateral margin kept free of sources.
    pub margin: f64,
    pub positions: Vec<[f64; 3]>,
    pub amplitude: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            layout: SourceLayout::Center,
            grid: [1, 1],
            depth: 0.5,
            margin: 0.1,
            positions: Vec::new(),
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    None,
    Analytic,
    Cbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub mute_wavelengths: f64,
    pub cbs: helmdd_core::oracle::CbsConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: OracleKind::None,
            mute_wavelengths: 1.0,
            cbs: Default::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write solution wavefields (raw + JSON header).
    pub fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("helmdd-out"),
            fields: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Stencil weight table (JSON); the built-in fitted table when absent.
    pub weights: Option<PathBuf>,
    pub frequencies: Vec<f64>,
    pub model: ModelConfig,
    pub boundary: BoundaryConfig,
    pub partition: PartitionConfig,
    pub solver: KrylovConfig,
    pub preconditioner: PreconditionerConfig,
    pub sources: SourceConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            weights: None,
            frequencies: vec![15.0],
            model: ModelConfig::default(),
            boundary: BoundaryConfig::default(),
            partition: PartitionConfig::default(),
            solver: KrylovConfig::default(),
            preconditioner: PreconditionerConfig::default(),
            sources: SourceConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("parsing run configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequencies.is_empty() || self.frequencies.iter().any(|f| !(*f > 0.0)) {
            bail!("frequencies must be a nonempty list of positive values");
        }
        if self.model.kind == ModelKind::Raw {
            for p in [&self.model.header, &self.model.data] {
                match p {
                    Some(p) if p.exists() => {}
                    Some(p) => bail!("model file {} does not exist", p.display()),
                    None => bail!("a raw model needs both `header` and `data`"),
                }
            }
        }
        if let Some(p) = &self.weights {
            if !p.exists() {
                bail!("weight table {} does not exist", p.display());
            }
        }
        if self.sources.layout == SourceLayout::List && self.sources.positions.is_empty() {
            bail!("source layout `list` needs at least one position");
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Interior velocity model for frequency `f`.
    pub fn build_model(&self, f: f64) -> Result<VelocityModel> {
        let m = &self.model;
        if m.kind == ModelKind::Raw {
            let model = load_raw_model(m.header.as_ref().unwrap(), m.data.as_ref().unwrap())?;
            return self.attenuated(model);
        }
        let c_slowest = match m.kind {
            ModelKind::LayeredRandom => m.c_min,
            ModelKind::Gradient if m.alpha < 0.0 => {
                let len = m.extent.map_or((m.dims[m.axis.index()] - 1) as f64 * m.h, |e| e[m.axis.index()]);
                m.c0 + m.alpha * len
            }
            _ => m.c0,
        };
        if !(c_slowest > 0.0) {
            bail!("model wavespeed must stay positive (slowest {c_slowest})");
        }
        let grid = match (m.ppw, m.extent) {
            (Some(ppw), Some(extent)) => helmdd_core::grid::grid_for_extent(extent, c_slowest / f / ppw)?,
            (Some(ppw), None) => CartesianGrid::new(m.dims, c_slowest / f / ppw, m.origin)?,
            (None, Some(extent)) => helmdd_core::grid::grid_for_extent(extent, m.h)?,
            (None, None) => CartesianGrid::new(m.dims, m.h, m.origin)?,
        };
        let model = match m.kind {
            ModelKind::Homogeneous => VelocityModel::homogeneous(grid, m.c0)?,
            ModelKind::Gradient => {
                let a = m.axis.index();
                let origin = grid.origin[a];
                VelocityModel::from_fn(grid, "gradient", |x| m.c0 + m.alpha * (x[a] - origin))?
            }
            ModelKind::LayeredRandom => build_layered_random(
                grid,
                &LayeredRandomSpec {
                    c_min: m.c_min,
                    c_max: m.c_max,
                    depth_axis: m.axis,
                    lateral: m.lateral,
                    seed: self.seed,
                },
            )?,
            ModelKind::Raw => unreachable!(),
        };
        self.attenuated(model)
    }

    fn attenuated(&self, model: VelocityModel) -> Result<VelocityModel> {
        Ok(match self.model.q {
            Some(q) => attenuate(&model, &QualityFactor::Uniform(q))?,
            None => model,
        })
    }

    /// Source positions over the interior grid.
    pub fn build_sources(&self, grid: &CartesianGrid) -> Vec<PointSource> {
        let s = &self.sources;
        let amp = num_complex::Complex64::new(s.amplitude, 0.0);
        let d = self.model.axis.index();
        let (la, lb) = ((d + 1) % 3, (d + 2) % 3);
        let dims = grid.dims();
        // Snap a fractional coordinate to a node index.
        let node = |a: usize, frac: f64| ((frac * (dims[a] - 1) as f64).round() as usize).min(dims[a] - 1);
        match s.layout {
            SourceLayout::Center => vec![PointSource::with_amplitude(grid.position(dims.map(|n| n / 2)), amp)],
            SourceLayout::List => s.positions.iter().map(|&p| PointSource::with_amplitude(p, amp)).collect(),
            SourceLayout::GridOfNodes => {
                let frac = |i: usize, n: usize| {
                    if n == 1 {
                        0.5
                    } else {
                        s.margin + (1.0 - 2.0 * s.margin) * i as f64 / (n - 1) as f64
                    }
                };
                let mut out = Vec::with_capacity(s.grid[0] * s.grid[1]);
                for j in 0..s.grid[1] {
                    for i in 0..s.grid[0] {
                        let mut p = [0usize; 3];
                        p[d] = node(d, s.depth);
                        p[la] = node(la, frac(i, s.grid[0]));
                        p[lb] = node(lb, frac(j, s.grid[1]));
                        out.push(PointSource::with_amplitude(grid.position(p), amp));
                    }
                }
                out
            }
        }
    }
}

/// Parses `text` and applies `key.path=value` overrides. Values are read as
/// TOML (numbers, booleans, arrays) and fall back to plain strings.
pub fn with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut root: toml::Table = toml::from_str(text).context("parsing run configuration")?;
    for o in overrides {
        let Some((key, raw)) = o.split_once('=') else {
            bail!("override `{o}` is not of the form key=value");
        };
        let value = parse_value(raw.trim());
        let parts: Vec<&str> = key.trim().split('.').collect();
        let mut table = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("override `{key}`: `{p}` is not a table"),
            };
        }
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    let cfg: RunConfig = toml::Value::Table(root).try_into().context("applying overrides")?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
