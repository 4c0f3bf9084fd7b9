//! One benchmark run: model, operator, preconditioner, Krylov solve, oracle.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use helmdd_core::assembly::HelmholtzProblem;
use helmdd_core::grid::{FrequencySpec, PointSource, VelocityModel};
use helmdd_core::krylov::{gmres, KrylovConfig, SolveReport};
use helmdd_core::local::LocalTiming;
use helmdd_core::oracle::{analytic_on_grid, cbs_solve, error_metric, ErrorMetricConfig};
use helmdd_core::oras::{setup, CoarseOptions, Level, OrasOptions};
use helmdd_core::partition::{partition_grid, BoxPartition};
use helmdd_core::raw::{save_field, RawDtype};
use helmdd_core::stencil::WeightTable;
use helmdd_core::{Block, Precision, Real};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{OracleKind, RunConfig};
use crate::output;
use crate::scaling::ScalingRecord;

/// Everything one frequency produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub frequency: f64,
    pub precision: Precision,
    /// Unknowns on the padded computational grid.
    pub dofs: usize,
    pub grid_dims: [usize; 3],
    pub interior_dims: [usize; 3],
    pub h: f64,
    pub subdomains: usize,
    pub subdomain_counts: [usize; 3],
    pub threads: usize,
    pub sources: Vec<[f64; 3]>,
    pub solve: SolveReport,
    pub local: Vec<LocalTiming>,
    /// Err per right-hand side when an oracle is configured.
    pub err: Option<Vec<f64>>,
    pub oracle_iterations: Option<Vec<usize>>,
    pub t_f: f64,
    pub t_s: f64,
    pub t_tot: f64,
}

impl FrequencyReport {
    pub fn scaling_record(&self) -> ScalingRecord {
        ScalingRecord::new(
            self.frequency,
            self.dofs,
            self.subdomains,
            self.solve.max_iterations(),
            self.t_f,
            self.t_s,
        )
    }
}

pub struct FrequencyResult {
    pub report: FrequencyReport,
    pub model: VelocityModel,
    pub partition: BoxPartition,
    /// Solution restricted to the interior grid, one column per source.
    pub field: Block<f64>,
    pub reference: Option<Block<f64>>,
}

pub fn weight_table(cfg: &RunConfig) -> Result<WeightTable> {
    match &cfg.weights {
        Some(p) => WeightTable::load(p).with_context(|| format!("loading weight table {}", p.display())),
        None => Ok(WeightTable::standard().clone()),
    }
}

fn oras_options(cfg: &RunConfig) -> OrasOptions {
    let p = &cfg.preconditioner;
    let defaults = CoarseOptions::default();
    OrasOptions {
        interface: p.interface,
        level: p.level,
        coarse: CoarseOptions {
            factor: p.coarse_factor,
            operator: p.coarse_operator,
            exact: p.coarse_exact,
            inner: KrylovConfig {
                tol: p.coarse_tol,
                ..defaults.inner
            },
            ..defaults
        },
    }
}

/// Reference solution on the interior grid, one column per source.
pub fn reference_field(cfg: &RunConfig, model: &VelocityModel, freq: FrequencySpec, sources: &[PointSource]) -> Result<Option<(Block<f64>, Option<Vec<usize>>)>> {
    match cfg.oracle.kind {
        OracleKind::None => Ok(None),
        OracleKind::Analytic => {
            let c0 = model.c[0];
            if model.c.iter().any(|&c| c != c0) {
                bail!("the analytic oracle needs a homogeneous model");
            }
            let k = freq.wavenumber(c0);
            let cols = sources
                .iter()
                .map(|s| analytic_on_grid(&model.grid, k, s))
                .collect::<helmdd_core::Result<Vec<_>>>()?;
            Ok(Some((Block::from_columns(&cols), None)))
        }
        OracleKind::Cbs => {
            let (u, rep) = cbs_solve(model, freq, sources, &cfg.oracle.cbs).context("CBS reference")?;
            Ok(Some((u, Some(rep.iterations))))
        }
    }
}

/// Err of every column of `field` against `reference`.
pub fn field_errors(
    model: &VelocityModel,
    freq: FrequencySpec,
    sources: &[PointSource],
    reference: &Block<f64>,
    field: &Block<f64>,
    mute_wavelengths: f64,
) -> Result<Vec<f64>> {
    sources
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let node = model
                .grid
                .nearest(s.position)
                .with_context(|| format!("source {c} lies outside the model"))?;
            let wavelength = freq.wavelength(model.c[model.grid.index(node)].re);
            let cfg = ErrorMetricConfig {
                source: s.position,
                mute_wavelengths,
                wavelength,
            };
            Ok(error_metric(reference.col(c), field.col(c), &model.grid, &cfg)?)
        })
        .collect()
}

/// Solves one frequency without writing anything.
pub fn solve_frequency(cfg: &RunConfig, table: &WeightTable, f: f64) -> Result<FrequencyResult> {
    match cfg.solver.precision {
        Precision::Single => solve_typed::<f32>(cfg, table, f),
        Precision::Double => solve_typed::<f64>(cfg, table, f),
    }
}

fn solve_typed<T: Real>(cfg: &RunConfig, table: &WeightTable, f: f64) -> Result<FrequencyResult> {
    let freq = FrequencySpec::new(f)?;
    let model = cfg.build_model(f).with_context(|| format!("building the model at {f} Hz"))?;
    let problem = HelmholtzProblem::new(
        &model,
        freq,
        table,
        cfg.boundary.spec(cfg.model.axis),
        cfg.boundary.pml(),
    )?
    .with_normalization(cfg.boundary.normalization);
    let sources = cfg.build_sources(&model.grid);
    let a = problem.assemble::<T>()?;
    let rhs = problem.build_rhs::<T>(&sources)?;

    let dims = problem.grid.dims();
    let counts = cfg.partition.counts_for(dims);
    let partition = partition_grid(dims, counts, cfg.partition.ovl)?;
    let opts = oras_options(cfg);
    let prec = setup::<T>(&problem, table, partition.clone(), &opts).context("preconditioner setup")?;

    let mut kcfg = cfg.solver;
    // An inner iterative coarse solve makes the preconditioner vary.
    if opts.level == Level::Two && !opts.coarse.exact {
        kcfg.flexible = true;
    }
    let m = prec.operator(&a);
    let (u, mut solve) = gmres(&a, &m, &rhs, &kcfg).context("Krylov solve")?;
    solve.setup_seconds = prec.setup_seconds;

    let cols: Vec<Vec<Complex64>> = (0..u.ncols())
        .map(|c| {
            let wide: Vec<Complex64> = u.col(c).iter().map(|z| helmdd_core::scalar::widen(*z)).collect();
            problem.restrict_interior(&wide)
        })
        .collect();
    let field = Block::from_columns(&cols);

    let (reference, oracle_iterations) = match reference_field(cfg, &model, freq, &sources)? {
        Some((r, its)) => (Some(r), its),
        None => (None, None),
    };
    let err = match &reference {
        Some(r) => Some(field_errors(&model, freq, &sources, r, &field, cfg.oracle.mute_wavelengths)?),
        None => None,
    };

    let t_f = solve.setup_seconds;
    let t_s = solve.solve_seconds;
    let report = FrequencyReport {
        frequency: f,
        precision: T::PRECISION,
        dofs: problem.n(),
        grid_dims: dims,
        interior_dims: model.grid.dims(),
        h: model.grid.h,
        subdomains: partition.len(),
        subdomain_counts: counts,
        threads: rayon::current_num_threads(),
        sources: sources.iter().map(|s| s.position).collect(),
        local: prec.timings(),
        solve,
        err,
        oracle_iterations,
        t_f,
        t_s,
        t_tot: t_f + t_s,
    };
    Ok(FrequencyResult {
        report,
        model,
        partition,
        field,
        reference,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub reports: Vec<FrequencyReport>,
    pub records: Vec<ScalingRecord>,
    pub all_converged: bool,
}

pub fn frequency_dir(out: &Path, f: f64) -> PathBuf {
    out.join(format!("f{f:.4}"))
}

/// Solves every configured frequency and writes the artifacts. Artifacts of
/// completed frequencies stay on disk when a later one fails.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let out = &cfg.output.dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let table = weight_table(cfg)?;
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &f in &cfg.frequencies {
        let res = solve_frequency(cfg, &table, f).with_context(|| format!("frequency {f} Hz"))?;
        write_frequency(cfg, &res)?;
        records.push(res.report.scaling_record());
        reports.push(res.report);
    }
    crate::scaling::annotate_weak(&mut records)?;
    output::write_jsonl(&out.join("scaling.jsonl"), &records)?;
    let all_converged = reports.iter().all(|r| r.solve.all_converged());
    let summary = RunSummary {
        reports,
        records,
        all_converged,
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn write_frequency(cfg: &RunConfig, res: &FrequencyResult) -> Result<()> {
    let dir = frequency_dir(&cfg.output.dir, res.report.frequency);
    std::fs::create_dir_all(&dir)?;
    output::write_convergence_csv(&dir.join("convergence.csv"), &res.report.solve)?;
    output::write_json(&dir.join("report.json"), &res.report)?;
    std::fs::write(dir.join("partition.json"), res.partition.to_json()?)?;
    if cfg.output.fields {
        let dtype = match res.report.precision {
            Precision::Single => RawDtype::Complex64,
            Precision::Double => RawDtype::Complex128,
        };
        save_field(
            &res.model.grid,
            res.field.as_slice(),
            dtype,
            dir.join("field.json"),
            dir.join("field.bin"),
        )?;
        if let Some(r) = &res.reference {
            save_field(
                &res.model.grid,
                r.as_slice(),
                RawDtype::Complex128,
                dir.join("reference.json"),
                dir.join("reference.bin"),
            )?;
        }
    }
    Ok(())
}
