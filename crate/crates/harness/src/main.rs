use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use helmdd::config::{with_overrides, OracleKind, RunConfig};
use helmdd::output::{read_jsonl, write_json, write_jsonl};
use helmdd::run::{frequency_dir, reference_field};
use helmdd::scaling::{annotate_strong, annotate_weak, iteration_frequency_sweep, ScalingRecord};
use helmdd_core::grid::{FrequencySpec, PointSource};
use helmdd_core::oracle::{error_metric, ErrorMetricConfig};
use helmdd_core::raw::{load_field, save_field, RawDtype};
use helmdd_core::stencil::build_weight_table;

#[derive(Parser)]
#[command(name = "helmdd", version, about = "Helmholtz FDFD benchmarks with ORAS domain decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set partition.ovl=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut cfg = with_overrides(&text, &self.overrides)?;
        if let Some(o) = &self.output {
            cfg.output.dir = o.clone();
        }
        if let Some(t) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Weak,
    Strong,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every configured frequency and write all artifacts.
    Run(ConfigArgs),
    /// Iteration counts over a frequency list at fixed points per wavelength.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated frequencies (Hz); the config list when omitted.
        #[arg(long, value_delimiter = ',')]
        frequencies: Vec<f64>,
    },
    /// Annotate ScalingRecord JSON lines with weak or strong efficiencies.
    Scaling {
        records: PathBuf,
        #[arg(long, value_enum, default_value = "weak")]
        mode: Mode,
        /// Output JSON lines (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit the dispersion-optimized stencil weight table.
    FitWeights {
        #[arg(long, default_value_t = 4.0)]
        g_min: f64,
        #[arg(long, default_value_t = 40.0)]
        g_max: f64,
        #[arg(long, default_value_t = 37)]
        samples: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate reference wavefields (analytic or CBS) for a configuration.
    Oracle {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        kind: Option<OracleArg>,
    },
    /// Err between a reference and a test field file (JSON headers).
    Compare {
        reference: PathBuf,
        test: PathBuf,
        /// Source position x,y,z in metres.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        source: Vec<f64>,
        /// Wavelength at the source in metres.
        #[arg(long)]
        wavelength: f64,
        #[arg(long, default_value_t = 1.0)]
        mute: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Analytic,
    Cbs,
}

fn data_path(header: &std::path::Path) -> PathBuf {
    header.with_extension("bin")
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("not every right-hand side reached the tolerance");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let s = helmdd::run(&cfg)?;
            for r in &s.reports {
                println!(
                    "f={:.4} Hz dofs={} subdomains={} iterations={:?} T_f={:.2}s T_s={:.2}s err={:?}",
                    r.frequency, r.dofs, r.subdomains, r.solve.iterations, r.t_f, r.t_s, r.err
                );
            }
            Ok(s.all_converged)
        }
        Command::Sweep { cfg, frequencies } => {
            let cfg = cfg.load()?;
            let freqs = if frequencies.is_empty() { cfg.frequencies.clone() } else { frequencies };
            let t = iteration_frequency_sweep(&cfg, &freqs)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_json(&cfg.output.dir.join("sweep.json"), &t)?;
            for r in &t.rows {
                println!("f={:.4} Hz dofs={} iterations={} converged={}", r.frequency, r.dofs, r.iterations, r.converged);
            }
            println!("growth exponent {:.3}", t.exponent);
            Ok(t.all_converged)
        }
        Command::Scaling { records, mode, output } => {
            let mut recs: Vec<ScalingRecord> = read_jsonl(&records)?;
            match mode {
                Mode::Weak => annotate_weak(&mut recs)?,
                Mode::Strong => annotate_strong(&mut recs)?,
            }
            match output {
                Some(p) => write_jsonl(&p, &recs)?,
                None => {
                    for r in &recs {
                        println!("{}", serde_json::to_string(r)?);
                    }
                }
            }
            Ok(true)
        }
        Command::FitWeights { g_min, g_max, samples, output } => {
            let table = build_weight_table(g_min, g_max, samples)?;
            table.save(&output)?;
            println!("wrote {} entries to {}", table.g_values.len(), output.display());
            Ok(true)
        }
        Command::Oracle { cfg, kind } => {
            let mut cfg = cfg.load()?;
            match kind {
                Some(OracleArg::Analytic) => cfg.oracle.kind = OracleKind::Analytic,
                Some(OracleArg::Cbs) => cfg.oracle.kind = OracleKind::Cbs,
                None if cfg.oracle.kind == OracleKind::None => bail!("choose an oracle with --kind"),
                None => {}
            }
            for &f in &cfg.frequencies {
                let model = cfg.build_model(f)?;
                let sources: Vec<PointSource> = cfg.build_sources(&model.grid);
                let (u, its) = reference_field(&cfg, &model, FrequencySpec::new(f)?, &sources)?.unwrap();
                let dir = frequency_dir(&cfg.output.dir, f);
                std::fs::create_dir_all(&dir)?;
                save_field(&model.grid, u.as_slice(), RawDtype::Complex128, dir.join("reference.json"), dir.join("reference.bin"))?;
                println!("f={f:.4} Hz wrote {} columns to {} (iterations {:?})", u.ncols(), dir.display(), its);
            }
            Ok(true)
        }
        Command::Compare { reference, test, source, wavelength, mute } => {
            if source.len() != 3 {
                bail!("--source takes x,y,z");
            }
            let (g_ref, n_ref, u_ref) = load_field(&reference, data_path(&reference))?;
            let (g_test, n_test, u_test) = load_field(&test, data_path(&test))?;
            if g_ref != g_test || n_ref != n_test {
                bail!("fields live on different grids or column counts");
            }
            let cfg = ErrorMetricConfig {
                source: [source[0], source[1], source[2]],
                mute_wavelengths: mute,
                wavelength,
            };
            let n = g_ref.len();
            for c in 0..n_ref {
                let e = error_metric(&u_ref[c * n..(c + 1) * n], &u_test[c * n..(c + 1) * n], &g_ref, &cfg)?;
                println!("column {c}: Err = {e:.6}");
            }
            Ok(true)
        }
    }
}
