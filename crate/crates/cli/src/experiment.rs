//! Replicated runs of configured filters on a shared dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nsmc::diagnostics::{aggregate, squared_error, write_summary_csv, ReplicateSummary};
use nsmc::exact::{fapf_run, kalman_filter, kalman_output};
use nsmc::model::{simulate, Dataset, LinearGaussianSsm};
use nsmc::nested::{general_nsmc_run, nsmc_run};
use nsmc::rng::{derive_seed, Streams};
use nsmc::smc::{bootstrap_pf, BootstrapOptions, FilterOutput};
use rayon::prelude::*;

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::error::{CliError, CliResult};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ECHO_FILE: &str = "config.echo.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

/// One failed `(replicate, method)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub replicate: usize,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub runs: usize,
    pub failures: Vec<Failure>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }
}

/// The observations every replicate and method share.
pub fn load_data(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    match &cfg.data {
        DataSource::Seed(seed) => Ok(simulate(&cfg.model, cfg.t_len, *seed)?),
        DataSource::Path(path) => {
            let (data, _) = Dataset::load(path)
                .map_err(|e| CliError::Config(format!("data {}: {e}", path.display())))?;
            if data.n_x() != cfg.model.n_x() {
                return Err(CliError::Config(format!(
                    "data {} has n_x = {}, model has n_x = {}",
                    path.display(),
                    data.n_x(),
                    cfg.model.n_x()
                )));
            }
            if data.len() < cfg.t_len {
                return Err(CliError::Config(format!(
                    "data {} has {} steps, T = {}",
                    path.display(),
                    data.len(),
                    cfg.t_len
                )));
            }
            Ok(data.truncated(cfg.t_len))
        }
    }
}

/// Runs one filter. A pure function of its arguments.
pub fn run_method(
    model: &LinearGaussianSsm,
    data: &Dataset,
    method: &Method,
    streams: Streams,
) -> nsmc::Result<FilterOutput> {
    match method {
        Method::Kalman => kalman_output(model, data),
        Method::Fapf { n } => fapf_run(model, data, *n, streams),
        Method::Bpf { n, resampling } => bootstrap_pf(
            model,
            data,
            *n,
            streams,
            BootstrapOptions {
                resampling: *resampling,
            },
        ),
        Method::Nsmc { n, proc } => nsmc_run(model, data, *n, proc, streams),
        Method::NsmcGeneral { n, proc, design } => {
            general_nsmc_run(model, data, *n, proc, *design, streams)
        }
    }
}

/// Seed of method `j` in replicate `r`.
pub fn run_seed(master: u64, replicate: usize, method: usize) -> u64 {
    derive_seed(master, &[replicate as u64, method as u64])
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn write_results<W: Write>(
    w: W,
    names: &[&str],
    outputs: &[Vec<nsmc::Result<FilterOutput>>],
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "replicate",
        "method",
        "status",
        "t",
        "stat",
        "component",
        "value",
    ])?;
    for (r, row) in outputs.iter().enumerate() {
        let rep = r.to_string();
        for (name, out) in names.iter().zip(row) {
            let Ok(out) = out else {
                w.write_record([rep.as_str(), name, "failed", "", "error", "", ""])?;
                continue;
            };
            let mut components = vec![1];
            if out.n_x > 1 {
                components.push(out.n_x);
            }
            for step in &out.steps {
                let t = step.t.to_string();
                for &d in &components {
                    let d_str = d.to_string();
                    let v = fmt(step.mean[d - 1]);
                    w.write_record([rep.as_str(), name, "ok", &t, "mean", &d_str, &v])?;
                }
                if !step.ess.is_nan() {
                    w.write_record([rep.as_str(), name, "ok", &t, "ess", "", &fmt(step.ess)])?;
                }
                let inc = fmt(step.log_z_increment);
                w.write_record([rep.as_str(), name, "ok", &t, "logZ_increment", "", &inc])?;
            }
            let t = out.last().t.to_string();
            w.write_record([rep.as_str(), name, "ok", &t, "logZ", "", &fmt(out.log_z())])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn summaries(
    model: &LinearGaussianSsm,
    data: &Dataset,
    names: &[&str],
    outputs: &[Vec<nsmc::Result<FilterOutput>>],
) -> CliResult<Vec<ReplicateSummary>> {
    let kf = kalman_filter(model, data)?;
    let truth = kf.last().expect("T ≥ 1");
    let n_x = data.n_x();
    let mut components = vec![1];
    if n_x > 1 {
        components.push(n_x);
    }
    let mut out = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let ok: Vec<&FilterOutput> = outputs
            .iter()
            .filter_map(|row| row[j].as_ref().ok())
            .collect();
        if ok.is_empty() {
            continue;
        }
        let log_z: Vec<f64> = ok.iter().map(|o| o.log_z()).collect();
        out.push(aggregate(&format!("{name}:logZ"), &log_z)?);
        let se: Vec<f64> = log_z
            .iter()
            .map(|&v| squared_error(v, truth.loglik))
            .collect();
        out.push(aggregate(&format!("{name}:se_logZ"), &se)?);
        for &d in &components {
            let se: Vec<f64> = ok
                .iter()
                .map(|o| squared_error(o.last().mean[d - 1], truth.mean[d - 1]))
                .collect();
            out.push(aggregate(&format!("{name}:se_mean_{d}"), &se)?);
        }
    }
    Ok(out)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Validates the config, runs every method on every replicate and writes
/// `results.csv`, `summary.csv` and `config.echo.json`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunReport> {
    let methods = cfg.validate()?;
    let model = cfg
        .model
        .build()
        .map_err(|e| CliError::Config(format!("model: {e}")))?;
    let data = load_data(cfg)?;
    let output_dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&output_dir)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = opts.workers {
        if k == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<Vec<nsmc::Result<FilterOutput>>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                methods
                    .iter()
                    .enumerate()
                    .map(|(j, m)| {
                        run_method(&model, &data, m, Streams::new(run_seed(cfg.seed, r, j)))
                    })
                    .collect()
            })
            .collect()
    });

    let names: Vec<&str> = cfg.methods.iter().map(|m| m.name.as_str()).collect();
    let mut failures = Vec::new();
    for (r, row) in outputs.iter().enumerate() {
        for (name, out) in names.iter().zip(row) {
            if let Err(e) = out {
                failures.push(Failure {
                    replicate: r,
                    method: name.to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    if opts.verbose {
        for f in &failures {
            eprintln!(
                "replicate {} method {}: {}",
                f.replicate, f.method, f.message
            );
        }
    }

    write_results(create(&output_dir.join(RESULTS_FILE))?, &names, &outputs)?;
    let summary = summaries(&model, &data, &names, &outputs)?;
    let mut w = create(&output_dir.join(SUMMARY_FILE))?;
    write_summary_csv(&mut w, &cfg.name, &summary)?;
    w.flush()?;
    std::fs::write(output_dir.join(ECHO_FILE), cfg.to_json())?;

    Ok(RunReport {
        output_dir,
        runs: cfg.replicates * methods.len(),
        failures,
    })
}
