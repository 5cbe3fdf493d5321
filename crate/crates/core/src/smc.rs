//! Outer-level SMC machinery: log-domain weights, resampling, the particle
//! system shared by every filter, filter output, and the bootstrap particle
//! filter baseline.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{NsmcError, Result};
use crate::model::{Dataset, TargetSequence};
use crate::rng::{Purpose, Streams};

/// `log Σ exp(v)`; `-∞` for an empty or all `-∞` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log((1/N) Σ exp(v))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

/// Normalized probabilities and `log((1/N) Σ exp(logw))`, by max-shift.
///
/// Fails with [`NsmcError::WeightCollapse`] (with `t = 0`; callers fill in
/// the step) when every entry is `-∞`.
pub fn normalize_logweights(logw: &[f64]) -> Result<(Vec<f64>, f64)> {
    debug_assert!(logw.iter().all(|v| !v.is_nan()), "NaN log-weight");
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || logw.is_empty() {
        return Err(NsmcError::WeightCollapse { t: 0 });
    }
    let mut p: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    let log_mean = max + total.ln() - (logw.len() as f64).ln();
    Ok((p, log_mean))
}

/// Effective sample size `1 / Σ p_i²` of normalized probabilities.
pub fn ess(probabilities: &[f64]) -> f64 {
    1.0 / probabilities.iter().map(|p| p * p).sum::<f64>()
}

/// Cumulative sums of normalized probabilities, with every entry from the
/// last positive-probability index onwards pinned to exactly 1.
fn cumulative(probabilities: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = probabilities
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = probabilities.iter().rposition(|&p| p > 0.0) {
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
    }
    cdf
}

#[inline]
fn invert(cdf: &[f64], u: f64) -> usize {
    // first index with u < cdf[i]
    cdf.partition_point(|&c| c <= u)
}

/// `count` i.i.d. categorical draws (0-based indices) by inverse CDF.
pub fn multinomial_resample<R: Rng + ?Sized>(
    probabilities: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let cdf = cumulative(probabilities);
    (0..count)
        .map(|_| invert(&cdf, rng.random::<f64>()))
        .collect()
}

/// Single categorical draw.
pub fn categorical<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let cdf = cumulative(probabilities);
    invert(&cdf, rng.random::<f64>())
}

/// Single categorical draw from unnormalized log-weights.
pub fn categorical_log<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let (p, _) = normalize_logweights(logw).ok()?;
    Some(categorical(&p, rng))
}

/// Systematic resampling. Only offered by the bootstrap baseline.
pub fn systematic_resample<R: Rng + ?Sized>(
    probabilities: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    let cdf = cumulative(probabilities);
    let u0: f64 = rng.random::<f64>() / count as f64;
    (0..count)
        .map(|k| invert(&cdf, u0 + k as f64 / count as f64).min(cdf.len() - 1))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

impl Resampling {
    pub fn resample<R: Rng + ?Sized>(self, p: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
        match self {
            Resampling::Multinomial => multinomial_resample(p, count, rng),
            Resampling::Systematic => systematic_resample(p, count, rng),
        }
    }
}

/// N weighted trajectories. Only the current states are held per particle;
/// earlier states are kept as per-step matrices linked by ancestor indices.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    n: usize,
    n_x: usize,
    states: Vec<f64>,
    history: Vec<Vec<f64>>,
    ancestry: Vec<Vec<usize>>,
    logw: Vec<f64>,
    log_z: f64,
    t: usize,
}

impl ParticleSystem {
    /// Empty system at t = 0 with uniform weights.
    pub fn new(n: usize, n_x: usize) -> Self {
        Self {
            n,
            n_x,
            states: Vec::new(),
            history: Vec::new(),
            ancestry: Vec::new(),
            logw: vec![0.0; n],
            log_z: 0.0,
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn logw(&self) -> &[f64] {
        &self.logw
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Ancestor indices drawn at each completed step (0-based).
    pub fn ancestry(&self) -> &[Vec<usize>] {
        &self.ancestry
    }

    /// Current state `x_t^i`, or `None` at t = 0.
    pub fn state(&self, i: usize) -> Option<&[f64]> {
        (self.t > 0).then(|| &self.states[i * self.n_x..(i + 1) * self.n_x])
    }

    /// Moves to step t + 1.
    pub fn advance(
        &mut self,
        ancestors: Vec<usize>,
        states: Vec<f64>,
        logw: Vec<f64>,
        log_z_increment: f64,
    ) {
        assert_eq!(ancestors.len(), self.n);
        assert_eq!(states.len(), self.n * self.n_x);
        assert_eq!(logw.len(), self.n);
        debug_assert!(ancestors.iter().all(|&a| a < self.n));
        let old = std::mem::replace(&mut self.states, states);
        if self.t > 0 {
            self.history.push(old);
        }
        self.ancestry.push(ancestors);
        self.logw = logw;
        self.log_z += log_z_increment;
        self.t += 1;
    }

    /// Reconstructs the full path `x_{1:t}^i` from the ancestor records.
    pub fn trajectory(&self, i: usize) -> Vec<Vec<f64>> {
        let mut path = Vec::with_capacity(self.t);
        if self.t == 0 {
            return path;
        }
        let mut idx = i;
        path.push(self.state(i).unwrap().to_vec());
        for s in (0..self.t - 1).rev() {
            idx = self.ancestry[s + 1][idx];
            path.push(self.history[s][idx * self.n_x..(idx + 1) * self.n_x].to_vec());
        }
        path.reverse();
        path
    }

    /// Weighted mean and variance of the current states, per component.
    pub fn moments(&self) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let (p, _) = normalize_logweights(&self.logw)
            .map_err(|_| NsmcError::WeightCollapse { t: self.t })?;
        let mut mean = vec![0.0; self.n_x];
        let mut sq = vec![0.0; self.n_x];
        for (i, &w) in p.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = &self.states[i * self.n_x..(i + 1) * self.n_x];
            for d in 0..self.n_x {
                mean[d] += w * x[d];
                sq[d] += w * x[d] * x[d];
            }
        }
        let var = mean
            .iter()
            .zip(&sq)
            .map(|(m, s)| (s - m * m).max(0.0))
            .collect();
        Ok((mean, var, ess(&p)))
    }
}

/// What one outer step of a fully adapted or nested filter computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Normalized resampling probabilities over the previous particles.
    pub probabilities: Vec<f64>,
    pub log_z_increment: f64,
    pub ess: f64,
}

/// Per-step filter summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub t: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub log_z_increment: f64,
    /// ESS of the resampling weights used at this step (τ for nested
    /// filters, ν for the fully adapted filter, w_t for the bootstrap filter).
    pub ess: f64,
}

/// Filtering means/variances and normalizing-constant estimate of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub n_x: usize,
    pub steps: Vec<StepSummary>,
}

impl FilterOutput {
    pub fn new(n_x: usize) -> Self {
        Self {
            n_x,
            steps: Vec::new(),
        }
    }

    /// `log Ẑ_T`.
    pub fn log_z(&self) -> f64 {
        self.steps.iter().map(|s| s.log_z_increment).sum()
    }

    pub fn last(&self) -> &StepSummary {
        self.steps.last().expect("filter output has no steps")
    }

    /// Writes rows `t,stat,component,value`; `stat` is one of `mean`, `var`,
    /// `logZ_increment`, `ess`, the last two with an empty component.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,stat,component,value")?;
        for s in &self.steps {
            for (d, m) in s.mean.iter().enumerate() {
                writeln!(w, "{},mean,{},{}", s.t, d + 1, m)?;
            }
            for (d, v) in s.var.iter().enumerate() {
                writeln!(w, "{},var,{},{}", s.t, d + 1, v)?;
            }
            writeln!(w, "{},logZ_increment,,{}", s.t, s.log_z_increment)?;
            writeln!(w, "{},ess,,{}", s.t, s.ess)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BootstrapOptions {
    pub resampling: Resampling,
}

/// Bootstrap particle filter: resample on `w_{t-1}`, propagate through the
/// transition, weight by the observation density.
///
/// At t = 1 the resampling step runs on uniform weights, so the random-stream
/// layout is the same as the general nested filter with `ν̂ ≡ 1`.
pub fn bootstrap_pf<T: TargetSequence>(
    model: &T,
    data: &Dataset,
    n: usize,
    streams: Streams,
    options: BootstrapOptions,
) -> Result<FilterOutput> {
    check_dims(model.n_x(), data, n)?;
    let n_x = model.n_x();
    let mut system = ParticleSystem::new(n, n_x);
    let mut out = FilterOutput::new(n_x);
    for t in 1..=data.len() {
        let y = data.y(t);
        let (p, _) =
            normalize_logweights(system.logw()).map_err(|_| NsmcError::WeightCollapse { t })?;
        let ancestors = options
            .resampling
            .resample(&p, n, &mut streams.step(t, Purpose::Resample));
        let mut states = vec![0.0; n * n_x];
        let logw: Vec<f64> = states
            .par_chunks_mut(n_x)
            .enumerate()
            .map(|(i, x)| {
                let prev = system.state(ancestors[i]);
                let mut rng = streams.stream(t, i, Purpose::Propagate);
                model.sample_transition(prev, &mut rng, x);
                model.log_observation(x, y)
            })
            .collect();
        let log_z_inc = log_mean_exp(&logw);
        if log_z_inc == f64::NEG_INFINITY {
            return Err(NsmcError::WeightCollapse { t });
        }
        system.advance(ancestors, states, logw, log_z_inc);
        let (mean, var, ess) = system.moments()?;
        out.steps.push(StepSummary {
            t,
            mean,
            var,
            log_z_increment: log_z_inc,
            ess,
        });
    }
    Ok(out)
}

pub(crate) fn check_dims(n_x: usize, data: &Dataset, n: usize) -> Result<()> {
    if n == 0 {
        return Err(NsmcError::InvalidParameter(
            "number of particles must be at least 1".into(),
        ));
    }
    if data.n_x() != n_x {
        return Err(NsmcError::Dimension(format!(
            "data has {} components, model has {n_x}",
            data.n_x()
        )));
    }
    Ok(())
}
