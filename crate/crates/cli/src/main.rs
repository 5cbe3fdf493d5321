use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsmc_cli::config::{DataSource, ExperimentConfig};
use nsmc_cli::curves::{variance_curve, write_curve, CurveConfig, CURVE_FILE};
use nsmc_cli::experiment::{load_data, run_experiment, RunOptions};
use nsmc_cli::selftest::{report, run_selftest};
use nsmc_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "nsmc",
    version,
    about = "Nested sequential Monte Carlo experiments"
)]
struct Cli {
    /// Worker threads for replicated runs.
    #[arg(long, global = true, value_name = "K")]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured dataset and write it as CSV plus a JSON sidecar.
    Simulate {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Run every configured method over all replicates.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
    },
    /// Write the asymptotic variance curve `M,sigma_M,sigma_FA`.
    Asymptotics {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
    /// Check proper weighting of every inner procedure.
    Selftest {
        #[arg(long, default_value_t = 20_000)]
        reps: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn thread_pool(workers: Option<usize>) -> CliResult<()> {
    if let Some(k) = workers {
        if k == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        // Only fails if a global pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    Ok(())
}

fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.model
                .validate()
                .map_err(|e| CliError::Config(format!("model: {e}")))?;
            if let DataSource::Path(p) = &cfg.data {
                return Err(CliError::Config(format!(
                    "data already comes from {}; simulate needs a seed",
                    p.display()
                )));
            }
            let data = load_data(&cfg)?;
            let dir = cli.out.unwrap_or(cfg.output_dir);
            let path = data.save(&dir, &cfg.name, &cfg.model)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                workers: cli.workers,
                out: cli.out,
                verbose: cli.verbose,
            };
            let report = run_experiment(&cfg, &opts)?;
            if !report.failures.is_empty() {
                eprintln!("{} of {} runs failed", report.failures.len(), report.runs);
            }
            if cli.verbose {
                eprintln!("wrote {}", report.output_dir.display());
            }
            Ok(report.exit_code())
        }
        Command::Asymptotics { config } => {
            let cfg = match config {
                Some(p) => CurveConfig::load(&p)?,
                None => CurveConfig::default(),
            };
            let rows = variance_curve(&cfg)?;
            match cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    write_curve(std::fs::File::create(dir.join(CURVE_FILE))?, &rows)?;
                }
                None => write_curve(std::io::stdout().lock(), &rows)?,
            }
            Ok(0)
        }
        Command::Selftest { reps, seed } => {
            thread_pool(cli.workers)?;
            if reps < 30 {
                return Err(CliError::Config("--reps must be at least 30".into()));
            }
            let results = run_selftest(reps, seed)?;
            let ok = report(std::io::stdout().lock(), &results)?;
            Ok(i32::from(!ok))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
