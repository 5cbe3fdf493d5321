//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p nsmc-cli --test acceptance`. The verdicts are the
//! printed lines; the exit status is nonzero on any failure only when
//! `NSMC_ACCEPTANCE_STRICT=1`, so `cargo test --workspace` keeps running the
//! other suites.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{check_against_mc, mc_constants, random_independent, random_stssm, random_vec};
use nsmc::asymptotics::{compute_constants, sigma_fa, sigma_nsmc, QuadratureMethod};
use nsmc::diagnostics::{median, sample_variance, squared_error, unbiasedness_test};
use nsmc::exact::{fapf_run, fapf_step, ffbs_forward, kalman_filter, kalman_output, ExactFfbs};
use nsmc::model::{
    simulate, Dataset, IndependentSsmSpec, LinearGaussianSsm, ModelSpec, ScalarLgss, StssmSpec,
};
use nsmc::nested::{
    general_nsmc_run, general_nsmc_step, nsmc_run, nsmc_step, AuxiliaryDesign, InnerKind,
    ProperWeightingProcedure, StageProposal,
};
use nsmc::oracle::{dense_log_nu, dense_loglik, proper_weighting_tests};
use nsmc::rng::{derive_seed, seeded, Streams};
use nsmc::smc::{bootstrap_pf, BootstrapOptions, FilterOutput, ParticleSystem};
use nsmc_cli::experiment::{run_experiment, RunOptions, RESULTS_FILE, SUMMARY_FILE};
use nsmc_cli::ExperimentConfig;
use rayon::prelude::*;

type Outcome = Result<(bool, String), String>;

const BAND: f64 = 3.0;

fn fail_on<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn oracle_agreement() -> Outcome {
    let mut rng = seeded(9101);
    let mut worst_nu = 0.0f64;
    for k in 0..100 {
        let model = if k % 2 == 0 {
            random_stssm(&mut rng, 4)
        } else {
            random_independent(&mut rng, 4)
        };
        let n = nsmc::model::TargetSequence::n_x(&model);
        let prev = random_vec(&mut rng, n, 2.0);
        let y = random_vec(&mut rng, n, 2.0);
        for p in [None, Some(prev.as_slice())] {
            let fast = ffbs_forward(&model, p, &y).log_nu;
            let dense = dense_log_nu(&model, p, &y).map_err(fail_on)?;
            worst_nu = worst_nu.max(((fast - dense).exp() - 1.0).abs());
        }
    }
    let mut worst_kf = 0.0f64;
    for k in 0..100u64 {
        let model = if k % 2 == 0 {
            random_stssm(&mut rng, 4)
        } else {
            random_independent(&mut rng, 4)
        };
        let t_len = 1 + (k % 3) as usize;
        let data = simulate(model.spec(), t_len, 9200 + k).map_err(fail_on)?;
        let fast = kalman_filter(&model, &data)
            .map_err(fail_on)?
            .last()
            .unwrap()
            .loglik;
        let dense = dense_loglik(&model, &data).map_err(fail_on)?;
        worst_kf = worst_kf.max((fast - dense).abs() / dense.abs().max(1.0));
    }
    Ok((
        worst_nu <= 1e-8 && worst_kf <= 1e-8,
        format!("max rel err nu {worst_nu:.1e}, Kalman loglik {worst_kf:.1e} (tol 1e-8)"),
    ))
}

fn proper_weighting() -> Outcome {
    let model = ModelSpec::from(StssmSpec {
        obs_var: 0.5,
        ..StssmSpec::reference(2)
    })
    .build()
    .map_err(fail_on)?;
    let prev = [0.8, -0.3];
    let y = [0.4, 1.1];
    let mut worst = 0.0f64;
    let mut worst_label = String::new();
    let mut checks = 0;
    for (k, kind) in InnerKind::ALL.into_iter().enumerate() {
        for m in [1usize, 5, 20] {
            if kind == InnerKind::SelfNested && m < 2 {
                continue;
            }
            let proc = ProperWeightingProcedure::new(kind, m);
            let seed = derive_seed(9300, &[k as u64, m as u64]);
            let tests = proper_weighting_tests(&model, Some(&prev), &y, &proc, 100_000, seed)
                .map_err(fail_on)?;
            for (phi, z) in ["1", "x1", "x1^2", "x1*x2"].iter().zip(tests) {
                checks += 1;
                if z.z.abs() > worst {
                    worst = z.z.abs();
                    worst_label = format!("{} M={m} phi={phi}", kind.name());
                }
            }
        }
    }
    Ok((
        worst <= BAND,
        format!("{checks} moment checks at 1e5 reps, max |z| = {worst:.2} ({worst_label})"),
    ))
}

fn ratio_test<F>(reps: usize, truth: f64, run: F) -> Result<(f64, f64), String>
where
    F: Fn(u64) -> nsmc::Result<FilterOutput> + Sync,
{
    let ratios: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| run(r as u64).map(|o| (o.log_z() - truth).exp()))
        .collect::<nsmc::Result<_>>()
        .map_err(fail_on)?;
    let z = unbiasedness_test(&ratios, 1.0).map_err(fail_on)?;
    Ok((z.z, z.mean))
}

fn normalizer_unbiasedness() -> Outcome {
    let reps = 1000;
    let mut lines = Vec::new();
    let mut ok = true;
    for n_x in [2usize, 10] {
        let model = ModelSpec::from(StssmSpec {
            obs_var: 1.0,
            ..StssmSpec::reference(n_x)
        })
        .build()
        .map_err(fail_on)?;
        let data = simulate(model.spec(), 5, 9400 + n_x as u64).map_err(fail_on)?;
        let truth = kalman_filter(&model, &data)
            .map_err(fail_on)?
            .last()
            .unwrap()
            .loglik;
        let streams = |tag: u64, r: u64| Streams::new(derive_seed(9401, &[n_x as u64, tag, r]));
        let mut check = |label: String, res: (f64, f64)| {
            ok &= res.0.abs() <= BAND;
            lines.push(format!("{label} z={:.2}", res.0));
        };
        check(
            format!("n_x={n_x} fapf"),
            ratio_test(reps, truth, |r| fapf_run(&model, &data, 100, streams(0, r)))?,
        );
        check(
            format!("n_x={n_x} bpf"),
            ratio_test(reps, truth, |r| {
                bootstrap_pf(
                    &model,
                    &data,
                    1000,
                    streams(1, r),
                    BootstrapOptions::default(),
                )
            })?,
        );
        for m in [5usize, 20] {
            let proc = ProperWeightingProcedure::new(InnerKind::SmcBackward, m);
            check(
                format!("n_x={n_x} nsmc M={m}"),
                ratio_test(reps, truth, |r| {
                    nsmc_run(&model, &data, 100, &proc, streams(2 + m as u64, r))
                })?,
            );
        }
    }
    Ok((ok, format!("{reps} reps, obs_var 1: {}", lines.join(", "))))
}

struct SquaredErrors {
    log_z: Vec<f64>,
    x_first: Vec<f64>,
}

fn squared_errors<F>(
    seeds: usize,
    kf: &nsmc::exact::KalmanBelief,
    run: F,
) -> Result<SquaredErrors, String>
where
    F: Fn(u64) -> nsmc::Result<FilterOutput> + Sync,
{
    let outs: Vec<FilterOutput> = (0..seeds)
        .into_par_iter()
        .map(|s| run(s as u64))
        .collect::<nsmc::Result<_>>()
        .map_err(fail_on)?;
    Ok(SquaredErrors {
        log_z: outs
            .iter()
            .map(|o| squared_error(o.log_z(), kf.loglik))
            .collect(),
        x_first: outs
            .iter()
            .map(|o| squared_error(o.last().mean[0], kf.mean[0]))
            .collect(),
    })
}

/// Orderings (a), (b), (c) for one stage proposal; returns the failed checks.
fn orderings(stage: StageProposal, tag: u64) -> Result<(Vec<String>, Vec<String>), String> {
    let n_x = 10;
    let seeds = 10;
    let model = ModelSpec::from(StssmSpec::reference(n_x))
        .build()
        .map_err(fail_on)?;
    let data = simulate(model.spec(), 10, 9500).map_err(fail_on)?;
    let kf = kalman_filter(&model, &data).map_err(fail_on)?;
    let kf = kf.last().unwrap();
    let streams = |k: u64, s: u64| Streams::new(derive_seed(9501 + tag, &[k, s]));
    let fapf = squared_errors(seeds, kf, |s| fapf_run(&model, &data, 100, streams(0, s)))?;
    let fapf_med = median(&fapf.log_z);
    let mut failed = Vec::new();
    let mut lines = vec![format!("fapf logZ {fapf_med:.2e}")];
    for m in [5usize, 10, 20, 50] {
        let bs =
            ProperWeightingProcedure::new(InnerKind::SmcBackward, m).with_stage_proposal(stage);
        let emp =
            ProperWeightingProcedure::new(InnerKind::SmcEmpirical, m).with_stage_proposal(stage);
        let k = 10 * m as u64;
        let nsmc_bs = squared_errors(seeds, kf, |s| {
            nsmc_run(&model, &data, 100, &bs, streams(k + 1, s))
        })?;
        let nsmc_emp = squared_errors(seeds, kf, |s| {
            nsmc_run(&model, &data, 100, &emp, streams(k + 2, s))
        })?;
        let bpf = squared_errors(seeds, kf, |s| {
            bootstrap_pf(
                &model,
                &data,
                100 * m,
                streams(k + 3, s),
                BootstrapOptions::default(),
            )
        })?;
        let (bs_z, bpf_z) = (median(&nsmc_bs.log_z), median(&bpf.log_z));
        let (bs_x, emp_x) = (median(&nsmc_bs.x_first), median(&nsmc_emp.x_first));
        lines.push(format!(
            "M={m} logZ bs {bs_z:.2e} bpf {bpf_z:.2e}, x_T1 bs {bs_x:.2e} no-bs {emp_x:.2e}"
        ));
        if m >= 10 && bs_z >= bpf_z {
            failed.push(format!("(a) at M={m}"));
        }
        if m == 50 && bs_z > 2.0 * fapf_med {
            failed.push(format!("(b) ratio {:.1}", bs_z / fapf_med));
        }
        if (m == 10 || m == 50) && bs_x > emp_x {
            failed.push(format!("(c) at M={m}"));
        }
    }
    Ok((failed, lines))
}

fn qualitative_reproduction() -> Outcome {
    let (failed, lines) = orderings(StageProposal::Prior, 0)?;
    let (alt_failed, _) = orderings(StageProposal::LocallyOptimal, 1)?;
    let verdict = |f: &[String]| {
        if f.is_empty() {
            "all orderings hold".to_string()
        } else {
            format!("failed {}", f.join(", "))
        }
    };
    Ok((
        failed.is_empty(),
        format!(
            "prior stage proposals, median SE over 10 seeds: {}; {}; \
             non-gating locally optimal stage proposals: {}",
            lines.join("; "),
            verdict(&failed),
            verdict(&alt_failed)
        ),
    ))
}

const SCALAR: ScalarLgss = ScalarLgss {
    init_mean: 0.0,
    init_var: 1.0,
    a_coef: 0.5,
    noise_var: 1.0,
    obs_var: 1.0,
};

fn variance_formulas() -> Outcome {
    let y = [0.7, -0.4, 1.3, 0.2];
    let consts =
        compute_constants(&SCALAR, &y, 4, QuadratureMethod::ClosedForm).map_err(fail_on)?;
    let mut worst_limit = 0.0f64;
    for n_x in [1usize, 2, 10, 100] {
        let fa = sigma_fa(&consts, n_x, 4).map_err(fail_on)?;
        let lim = sigma_nsmc(&consts, n_x, 4, 1_000_000_000).map_err(fail_on)?;
        worst_limit = worst_limit.max((lim / fa - 1.0).abs());
    }
    let mc = mc_constants(&SCALAR, &y, 4, 1_000_000, 9600);
    let worst_z = check_against_mc(&consts, &mc);

    let spec = ModelSpec::from(IndependentSsmSpec {
        n_x: 2,
        scalar: SCALAR,
    });
    let model = spec.build().map_err(fail_on)?;
    let data = simulate(&spec, 2, 301).map_err(fail_on)?;
    let y1: Vec<f64> = (1..=2).map(|t| data.y(t)[0]).collect();
    let c2 = compute_constants(&SCALAR, &y1, 2, QuadratureMethod::ClosedForm).map_err(fail_on)?;
    let formula = sigma_nsmc(&c2, 2, 2, 5).map_err(fail_on)?;
    let proc = ProperWeightingProcedure::new(InnerKind::SmcBackward, 5);
    let n = 2000;
    let est: Vec<f64> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            nsmc_run(
                &model,
                &data,
                n,
                &proc,
                Streams::new(derive_seed(9601, &[r])),
            )
            .map(|o| o.last().mean.iter().sum())
        })
        .collect::<nsmc::Result<_>>()
        .map_err(fail_on)?;
    let emp = n as f64 * sample_variance(&est);
    let rel = (emp / formula - 1.0).abs();
    Ok((
        worst_limit <= 1e-6 && worst_z <= BAND && rel <= 0.15,
        format!(
            "limit gap {worst_limit:.1e} (tol 1e-6); constants vs 1e6-draw MC max |z| {worst_z:.2}; \
             N Var {emp:.4} vs formula {formula:.4} ({:.1}%, tol 15%)",
            100.0 * rel
        ),
    ))
}

fn lambda_zero_gap(model: &LinearGaussianSsm, data: &Dataset) -> Result<f64, String> {
    let streams = Streams::new(9701);
    let proc = ProperWeightingProcedure::new(InnerKind::SmcBackward, 5)
        .with_stage_proposal(StageProposal::LocallyOptimal);
    let mut fa = ParticleSystem::new(40, 4);
    let mut gap = 0.0f64;
    for t in 1..=data.len() {
        let mut probe = fa.clone();
        let a = fapf_step(&mut fa, model, data.y(t), streams).map_err(fail_on)?;
        let b = nsmc_step(&mut probe, model, &proc, data.y(t), streams).map_err(fail_on)?;
        for (p, q) in a.probabilities.iter().zip(&b.probabilities) {
            gap = gap.max((p - q).abs());
        }
    }
    Ok(gap)
}

fn reduction_identities() -> Outcome {
    let model = ModelSpec::from(StssmSpec::reference(5))
        .build()
        .map_err(fail_on)?;
    let data = simulate(model.spec(), 6, 9700).map_err(fail_on)?;
    let streams = Streams::new(9702);

    let mut uniform_general = true;
    for kind in InnerKind::ALL {
        let proc = ProperWeightingProcedure::new(kind, 4);
        let mut sys = ParticleSystem::new(30, 5);
        for t in 1..=data.len() {
            general_nsmc_step(
                &mut sys,
                &model,
                &proc,
                AuxiliaryDesign::FULLY_ADAPTED,
                data.y(t),
                streams,
            )
            .map_err(fail_on)?;
            uniform_general &= sys.logw().iter().all(|&w| w == 0.0);
        }
    }

    let mut identical_law = true;
    let mut uniform_fapf = true;
    let mut fa = ParticleSystem::new(40, 5);
    let mut exact = ParticleSystem::new(40, 5);
    for t in 1..=data.len() {
        let a = fapf_step(&mut fa, &model, data.y(t), streams).map_err(fail_on)?;
        let b = nsmc_step(&mut exact, &model, &ExactFfbs, data.y(t), streams).map_err(fail_on)?;
        identical_law &= a
            .probabilities
            .iter()
            .map(|p| p.to_bits())
            .eq(b.probabilities.iter().map(|p| p.to_bits()));
        identical_law &= a.log_z_increment.to_bits() == b.log_z_increment.to_bits();
        identical_law &= fa.states() == exact.states();
        let w0 = fa.logw()[0];
        uniform_fapf &= fa.logw().iter().all(|&w| w == w0);
    }
    let full_runs = fapf_run(&model, &data, 40, streams)
        .map_err(fail_on)?
        .to_csv_string()
        == nsmc_run(&model, &data, 40, &ExactFfbs, streams)
            .map_err(fail_on)?
            .to_csv_string();

    let chain0 = ModelSpec::from(StssmSpec {
        lambda: 0.0,
        ..StssmSpec::reference(4)
    })
    .build()
    .map_err(fail_on)?;
    let data0 = simulate(chain0.spec(), 3, 9703).map_err(fail_on)?;
    let gap = lambda_zero_gap(&chain0, &data0)?;

    Ok((
        uniform_general && identical_law && full_runs && uniform_fapf,
        format!(
            "fully adapted general NSMC weights uniform: {uniform_general}; exact inner law \
             bit-identical to FAPF: {}; FAPF weights uniform: {uniform_fapf}; \
             lambda=0 locally optimal inner SMC max prob gap {gap:.1e}",
            identical_law && full_runs
        ),
    ))
}

fn experiment_config(dir: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "name": "determinism",
            "model": {{"kind": "stssm", "n_x": 4, "a_coef": 0.5, "tau": 1.0, "lambda": 1.0, "obs_var": 0.0625}},
            "T": 5,
            "data": {{"seed": 9800}},
            "methods": [
                {{"name": "kf", "kind": "kalman"}},
                {{"name": "fapf", "kind": "fapf", "N": 50}},
                {{"name": "bpf", "kind": "bpf", "N": 50, "M": 5, "resampling": "systematic"}},
                {{"name": "bs", "kind": "nsmc", "N": 50, "M": 5, "inner": "smc+bs"}},
                {{"name": "emp", "kind": "nsmc", "N": 50, "M": 5, "inner": "smc+empirical"}},
                {{"name": "is", "kind": "nsmc", "N": 50, "M": 5, "inner": "is"}},
                {{"name": "self", "kind": "nsmc", "N": 50, "M": 5, "inner": "self-nested"}},
                {{"name": "gen", "kind": "nsmc-general", "N": 50, "M": 5, "inner": "smc+bs", "proposal": "transition"}}
            ],
            "replicates": 8,
            "seed": 9801,
            "budget_matching": true,
            "output_dir": {:?}
        }}"#,
        dir.display().to_string()
    );
    ExperimentConfig::from_json(&text, Path::new("determinism.json")).expect("valid config")
}

fn determinism() -> Outcome {
    let model = &ModelSpec::from(StssmSpec::reference(4))
        .build()
        .map_err(fail_on)?;
    let data = &simulate(model.spec(), 6, 9802).map_err(fail_on)?;
    let streams = Streams::new(9803);
    let procs: Vec<ProperWeightingProcedure> = InnerKind::ALL
        .iter()
        .map(|&k| ProperWeightingProcedure::new(k, 4))
        .collect();
    type Run<'a> = Box<dyn Fn() -> nsmc::Result<FilterOutput> + 'a>;
    let mut runs: Vec<(&str, Run)> = vec![
        ("kalman", Box::new(|| kalman_output(model, data))),
        ("fapf", Box::new(|| fapf_run(model, data, 60, streams))),
        (
            "bpf",
            Box::new(|| bootstrap_pf(model, data, 60, streams, BootstrapOptions::default())),
        ),
    ];
    for p in &procs {
        runs.push((
            p.kind.name(),
            Box::new(move || nsmc_run(model, data, 60, p, streams)),
        ));
    }
    runs.push((
        "nsmc-general",
        Box::new(|| {
            general_nsmc_run(
                model,
                data,
                60,
                &procs[0],
                AuxiliaryDesign::BOOTSTRAP,
                streams,
            )
        }),
    ));
    let mut differing = Vec::new();
    for (name, run) in &runs {
        let a = run().map_err(fail_on)?.to_csv_string();
        let b = run().map_err(fail_on)?.to_csv_string();
        if a != b {
            differing.push(name.to_string());
        }
    }

    let tmp = tempfile::tempdir().map_err(fail_on)?;
    let cfg = experiment_config(tmp.path());
    let mut outputs = Vec::new();
    for (k, workers) in [1usize, 4, 4].into_iter().enumerate() {
        let out = tmp.path().join(format!("run{k}"));
        let opts = RunOptions {
            workers: Some(workers),
            out: Some(out.clone()),
            verbose: false,
        };
        let report = run_experiment(&cfg, &opts).map_err(fail_on)?;
        if !report.failures.is_empty() {
            return Err(format!("{} experiment runs failed", report.failures.len()));
        }
        let bytes =
            [RESULTS_FILE, SUMMARY_FILE].map(|f| std::fs::read(out.join(f)).map_err(fail_on));
        let [r, s] = bytes;
        outputs.push((r?, s?));
    }
    let pipeline_same = outputs.windows(2).all(|w| w[0] == w[1]);
    if !pipeline_same {
        differing.push("experiment pipeline".into());
    }
    Ok((
        differing.is_empty(),
        format!(
            "{} filters rerun byte-identical; experiment outputs identical across 3 runs \
             (1 and 4 workers): {pipeline_same}{}",
            runs.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {}", differing.join(", "))
            }
        ),
    ))
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 7] = [
        (
            1,
            "oracle agreement",
            Duration::from_secs(60),
            oracle_agreement,
        ),
        (
            2,
            "proper weighting",
            Duration::from_secs(300),
            proper_weighting,
        ),
        (
            3,
            "normalizer unbiasedness",
            Duration::from_secs(600),
            normalizer_unbiasedness,
        ),
        (
            4,
            "qualitative reproduction",
            Duration::from_secs(1800),
            qualitative_reproduction,
        ),
        (
            5,
            "variance formulas",
            Duration::from_secs(1200),
            variance_formulas,
        ),
        (
            6,
            "reduction identities",
            Duration::from_secs(60),
            reduction_identities,
        ),
        (7, "determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (passed, detail) = match outcome {
            Ok((ok, detail)) => (ok && elapsed <= budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {id} {}: {name}: {detail} [{:.1}s of {}s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 7 criteria passed", 7 - failed);
    let strict = std::env::var("NSMC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
