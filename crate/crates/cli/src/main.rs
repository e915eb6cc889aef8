use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use srploc_cli::config::{JobConfig, Method};
use srploc_cli::report;
use srploc_cli::runner::{self, RunError};

/// Multi-source acoustic localization from multichannel recordings.
#[derive(Parser)]
#[command(name = "srploc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the configured scenario to a WAV file plus a truth sidecar.
    Simulate {
        /// Job configuration (TOML).
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (overrides config and SRPLOC_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured localizer and write report.json plus a map CSV.
    Localize {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dictionary cache directory (pure optimization; results identical).
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Also write the solver iteration trace CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Sweep methods × recording durations over seeded trials and aggregate
    /// the localization error.
    Compare {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of srp_phat, msbl_direct, srp_s, srp_sbl.
        #[arg(long, value_delimiter = ',', default_value = "srp_phat,msbl_direct,srp_s,srp_sbl")]
        methods: Vec<String>,
        /// Comma-separated durations in seconds.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2")]
        durations: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Parallel trial jobs (default: SRPLOC_JOBS or all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print candidate-grid cardinalities as JSON.
    GridInfo {
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Elevation step for a one-off grid query, degrees.
        #[arg(long, requires = "azimuth_step")]
        elevation_step: Option<f64>,
        /// Azimuth step for a one-off grid query, degrees.
        #[arg(long, requires = "elevation_step")]
        azimuth_step: Option<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::Config(_) => ExitCode::from(2),
                RunError::Compute(srploc::Error::Numerical { .. }) => ExitCode::from(3),
                RunError::Compute(_) => ExitCode::FAILURE,
            }
        }
    }
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> Result<JobConfig, RunError> {
    let mut cfg = JobConfig::load(path)?.resolve_env();
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config, out)?;
            let scenario = cfg.scenario(cfg.seed)?;
            let signal = srploc::synthesize(&scenario)?;
            let path = report::write_simulate_outputs(&cfg.output_dir, &cfg, &scenario, &signal)?;
            println!("wrote {} and scene.wav", path.display());
            Ok(())
        }
        Command::Localize {
            config,
            out,
            cache_dir,
            trace,
        } => {
            let mut cfg = load_config(&config, out)?;
            if trace {
                cfg.report.trace = true;
            }
            let started = Instant::now();
            let signal = runner::load_input(&cfg)?;
            let method = cfg.method.name;
            let ctx = runner::PipelineContext::prepare(
                &cfg,
                signal.sample_rate(),
                &[method],
                cache_dir.as_deref(),
            )?;
            let output = runner::run_method(method, &signal, &ctx, &cfg)?;
            let runtime_ms = started.elapsed().as_millis() as u64;
            let map_grid = if output.map_on_fine_grid {
                &ctx.fine
            } else {
                &ctx.coarse
            };
            let path = report::write_localize_report(
                &cfg.output_dir,
                &cfg,
                &output,
                map_grid,
                Some(runtime_ms),
            )?;
            for e in &output.selection.estimates {
                println!(
                    "#{} elevation {:7.2}°, azimuth {:7.2}°  (score {:.6})",
                    e.rank, e.elevation_deg, e.azimuth_deg, e.score
                );
            }
            if output.selection.shortfall {
                println!("note: fewer peaks than requested were available");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Compare {
            config,
            out,
            methods,
            durations,
            trials,
            jobs,
        } => {
            let cfg = load_config(&config, out)?;
            let methods = methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>, _>>()?;
            let jobs = jobs
                .or_else(|| {
                    std::env::var("SRPLOC_JOBS")
                        .ok()
                        .and_then(|v| v.parse().ok())
                })
                .unwrap_or_else(num_cpus);
            let rows = runner::run_compare(&cfg, &methods, &durations, trials, jobs)?;
            let path = report::write_compare_outputs(
                &cfg.output_dir,
                &cfg,
                &methods,
                &durations,
                trials,
                &rows,
            )?;
            for r in &rows {
                println!(
                    "{:12} {:6.2}s  median LE {:8.3}°  IQR {:8.3}°  ({} trials, {} failures)",
                    r.method, r.duration_s, r.median_le_deg, r.iqr_le_deg, r.trials, r.failures
                );
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::GridInfo {
            config,
            elevation_step,
            azimuth_step,
        } => {
            if let (Some(el), Some(az)) = (elevation_step, azimuth_step) {
                let grid = srploc::build_doa_grid(el, az)
                    .map_err(|e| srploc_cli::config::ConfigError(e.to_string()))?;
                println!("{}", grid_json(&grid));
                return Ok(());
            }
            let cfg = match config {
                Some(path) => JobConfig::load(&path)?,
                None => JobConfig::from_toml(
                    "[scenario]\nduration_s = 1.0\n[[scenario.sources]]\nelevation_deg = 0.0\nazimuth_deg = 0.0\n",
                )?,
            };
            let coarse = cfg.coarse_grid()?;
            let fine = cfg.fine_grid()?;
            println!("{{\"coarse\":{},\"fine\":{}}}", grid_json(&coarse), grid_json(&fine));
            Ok(())
        }
    }
}

fn grid_json(grid: &srploc::DoaGrid) -> String {
    format!(
        "{{\"elevation_step_deg\":{},\"azimuth_step_deg\":{},\"n_elevation\":{},\"n_azimuth\":{},\"points\":{}}}",
        grid.elevation_step_deg(),
        grid.azimuth_step_deg(),
        grid.n_elevation(),
        grid.n_azimuth(),
        grid.len()
    )
}

fn num_cpus() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
