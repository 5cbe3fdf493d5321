//! Proper-weighting moment checks for every inner procedure.

use std::io::Write;

use nsmc::model::{ModelSpec, StssmSpec};
use nsmc::nested::{InnerKind, ProperWeightingProcedure};
use nsmc::oracle::proper_weighting_tests;
use nsmc::rng::derive_seed;

use crate::error::CliResult;

pub const MOMENTS: [&str; 4] = ["1", "x1", "x1^2", "x1*x2"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub label: String,
    pub z: f64,
    pub passed: bool,
}

/// Runs `reps` replicates per (procedure, conditional target) pair on a
/// two-component model and tests each moment at 3 standard errors.
pub fn run_selftest(reps: usize, seed: u64) -> CliResult<Vec<CheckResult>> {
    let model = ModelSpec::from(StssmSpec {
        obs_var: 0.5,
        ..StssmSpec::reference(2)
    })
    .build()?;
    let prev = [0.8, -0.3];
    let y = [0.4, 1.1];
    let mut results = Vec::new();
    for (k, kind) in InnerKind::ALL.into_iter().enumerate() {
        let proc = ProperWeightingProcedure::new(kind, 5);
        for (c, prev) in [None, Some(&prev[..])].into_iter().enumerate() {
            let tests = proper_weighting_tests(
                &model,
                prev,
                &y,
                &proc,
                reps,
                derive_seed(seed, &[k as u64, c as u64]),
            )?;
            let at = if prev.is_some() { "t>1" } else { "t=1" };
            for (phi, z) in MOMENTS.iter().zip(tests) {
                results.push(CheckResult {
                    label: format!("{} M=5 {at} phi={phi}", kind.name()),
                    z: z.z,
                    passed: z.passes(),
                });
            }
        }
    }
    Ok(results)
}

/// Prints one line per check; returns whether all passed.
pub fn report<W: Write>(mut w: W, results: &[CheckResult]) -> std::io::Result<bool> {
    for r in results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        writeln!(w, "{tag} {} z={:.2}", r.label, r.z)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    writeln!(w, "{} checks, {failed} failed", results.len())?;
    Ok(failed == 0)
}
