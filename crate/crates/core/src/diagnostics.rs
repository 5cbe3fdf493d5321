//! Replicate aggregation and simple statistical checks.
//!
//! Quantiles use linear interpolation between closest ranks (the type-7
//! convention): for sorted values `v` and level `p`, position `h = (R-1) p`
//! and `q = v[⌊h⌋] + (h - ⌊h⌋)(v[⌊h⌋+1] - v[⌊h⌋])`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{NsmcError, Result};

pub const QUANTILE_CONVENTION: &str = "type-7";

pub fn squared_error(estimate: f64, truth: f64) -> f64 {
    (estimate - truth) * (estimate - truth)
}

pub fn squared_errors(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    assert_eq!(estimate.len(), truth.len(), "length mismatch");
    estimate
        .iter()
        .zip(truth)
        .map(|(&e, &t)| squared_error(e, t))
        .collect()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0)
}

/// Type-7 quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Zero spread: `z` is 0 when the mean equals the target, else ±∞.
    pub degenerate: bool,
}

impl ZTest {
    pub fn passes(&self) -> bool {
        self.z.abs() <= 3.0
    }
}

/// `z = (mean - target) / stderr`.
pub fn unbiasedness_test(samples: &[f64], target: f64) -> Result<ZTest> {
    if samples.len() < 30 {
        return Err(NsmcError::InvalidParameter(format!(
            "unbiasedness test needs at least 30 samples, got {}",
            samples.len()
        )));
    }
    let (mean, stderr) = mean_stderr(samples);
    let diff = mean - target;
    let degenerate = !(stderr > 0.0);
    let z = if !degenerate {
        diff / stderr
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(ZTest {
        z,
        mean,
        stderr,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub estimator_name: String,
    pub values: Vec<f64>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Sample standard deviation over `√R`; NaN for one value.
    pub stderr: f64,
}

impl ReplicateSummary {
    fn stats(&self) -> [(&'static str, f64); 6] {
        [
            ("median", self.median),
            ("q25", self.q25),
            ("q75", self.q75),
            ("mean", self.mean),
            ("stderr", self.stderr),
            ("count", self.values.len() as f64),
        ]
    }
}

pub fn aggregate(name: &str, values: &[f64]) -> Result<ReplicateSummary> {
    if values.is_empty() {
        return Err(NsmcError::InvalidParameter(format!(
            "no replicate values for {name}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, stderr) = mean_stderr(values);
    Ok(ReplicateSummary {
        estimator_name: name.to_string(),
        values: values.to_vec(),
        median: quantile_sorted(&sorted, 0.5),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        mean,
        stderr,
    })
}

/// Writes `experiment,estimator,stat,value` rows.
pub fn write_summary_csv<W: Write>(
    w: W,
    experiment: &str,
    summaries: &[ReplicateSummary],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["experiment", "estimator", "stat", "value"])?;
    for s in summaries {
        for (stat, value) in s.stats() {
            out.write_record([
                experiment,
                s.estimator_name.as_str(),
                stat,
                &value.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
