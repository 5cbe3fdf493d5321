//! Exact inference for the linear-Gaussian chain models.
//!
//! [`kalman_step`] gives the ground-truth filtering law and log-likelihood.
//! [`ffbs_forward`] / [`ffbs_backward`] compute the fully adapted resampling
//! weight `ν_{t-1} = ∫ f(x_t | x_{t-1}) g(y_t | x_t) dx_t` and an exact draw
//! from the locally optimal proposal by scalar message passing over the
//! components of the noise `v_t`, in O(n_x) per particle. [`fapf_run`] is the
//! exact fully adapted particle filter built from them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{NsmcError, Result};
use crate::gauss::LN_2PI;
use crate::model::{
    chain_backward, chain_forward, Dataset, GaussianChain, GaussianMessage, LinearGaussianSsm,
    TargetSequence,
};
use crate::nested::ProperWeighting;
use crate::rng::{Purpose, Streams};
use crate::smc::{
    check_dims, multinomial_resample, normalize_logweights, FilterOutput, ParticleSystem,
    StepReport, StepSummary,
};

/// Gaussian filtering posterior `N(mean, cov)` after `t` observations plus
/// the accumulated exact `log p(y_{1:t})`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub t: usize,
}

impl KalmanBelief {
    /// Belief before the first observation; the first [`kalman_step`]
    /// predicts with the initial law `N(m_0, P⁻¹)`.
    pub fn prior(model: &LinearGaussianSsm) -> Self {
        let n = model.n_x();
        Self {
            mean: DVector::from_element(n, model.init_mean()),
            cov: model.init_precision().covariance(),
            loglik: 0.0,
            t: 0,
        }
    }
}

/// One predict/update step. The innovation covariance `P + obs_var·I` is
/// factorized by Cholesky; the updated covariance is symmetrized explicitly.
pub fn kalman_step(
    belief: &KalmanBelief,
    model: &LinearGaussianSsm,
    y: &[f64],
) -> Result<KalmanBelief> {
    let n = model.n_x();
    if y.len() != n || belief.mean.len() != n {
        return Err(NsmcError::Dimension(format!(
            "observation has {} components, model has {n}",
            y.len()
        )));
    }
    let (pred_mean, pred_cov) = if belief.t == 0 {
        (belief.mean.clone(), belief.cov.clone())
    } else {
        let a = model.a_coef();
        (
            &belief.mean * a,
            &belief.cov * (a * a) + model.noise_precision().covariance(),
        )
    };
    let mut s = pred_cov.clone();
    for i in 0..n {
        s[(i, i)] += model.obs_var();
    }
    let chol = s.clone().cholesky().ok_or_else(|| {
        NsmcError::NotPositiveDefinite(format!("innovation covariance at t = {}", belief.t + 1))
    })?;
    let innov = DVector::from_column_slice(y) - &pred_mean;
    let sol = chol.solve(&innov);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inc = -0.5 * (n as f64 * LN_2PI + log_det + innov.dot(&sol));
    // K = P S⁻¹, so K·innov = P·sol and K·P = P S⁻¹ P
    let mean = &pred_mean + &pred_cov * &sol;
    let cov = &pred_cov - &pred_cov * chol.solve(&pred_cov);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(KalmanBelief {
        mean,
        cov,
        loglik: belief.loglik + inc,
        t: belief.t + 1,
    })
}

/// Runs the Kalman filter over a whole dataset.
pub fn kalman_filter(model: &LinearGaussianSsm, data: &Dataset) -> Result<Vec<KalmanBelief>> {
    check_dims(model.n_x(), data, 1)?;
    let mut belief = KalmanBelief::prior(model);
    let mut out = Vec::with_capacity(data.len());
    for t in 1..=data.len() {
        belief = kalman_step(&belief, model, data.y(t))?;
        out.push(belief.clone());
    }
    Ok(out)
}

/// Kalman filter results in the common filter output format.
pub fn kalman_output(model: &LinearGaussianSsm, data: &Dataset) -> Result<FilterOutput> {
    let beliefs = kalman_filter(model, data)?;
    let mut out = FilterOutput::new(model.n_x());
    let mut prev = 0.0;
    for b in beliefs {
        out.steps.push(StepSummary {
            t: b.t,
            mean: b.mean.iter().copied().collect(),
            var: b.cov.diagonal().iter().copied().collect(),
            log_z_increment: b.loglik - prev,
            ess: f64::NAN,
        });
        prev = b.loglik;
    }
    Ok(out)
}

/// Forward messages over the components of `v_t` for one particle.
#[derive(Debug, Clone)]
pub struct FfbsCache<'a> {
    pub messages: Vec<GaussianMessage>,
    /// `log ν_{t-1} = Σ_d log p(y_{t,d} | y_{t,1:d-1}, x_{t-1})`.
    pub log_nu: f64,
    /// `a(x_{t-1})` (or the initial mean at t = 1).
    pub offsets: Vec<f64>,
    chain: &'a GaussianChain,
}

impl FfbsCache<'_> {
    pub fn chain(&self) -> &GaussianChain {
        self.chain
    }
}

/// Forward filtering on `p(v_t | y_t, x_{t-1}) ∝ g(y_t | a(x_{t-1}) + v_t) p_v(v_t)`.
pub fn ffbs_forward<'a>(
    model: &'a LinearGaussianSsm,
    x_prev: Option<&[f64]>,
    y: &[f64],
) -> FfbsCache<'a> {
    let offsets = model.offsets(x_prev);
    let resid: Vec<f64> = y.iter().zip(&offsets).map(|(y, a)| y - a).collect();
    let chain = model.step_chain(x_prev);
    let messages = chain_forward(chain, Some((&resid, model.obs_var())));
    let log_nu = messages.last().map_or(0.0, |m| m.log_scale);
    FfbsCache {
        messages,
        log_nu,
        offsets,
        chain,
    }
}

/// Exact draw of the noise `v ~ p(v_t | y_t, x_{t-1})`.
pub fn ffbs_backward<R: Rng + ?Sized>(cache: &FfbsCache<'_>, rng: &mut R) -> Vec<f64> {
    let mut v = vec![0.0; cache.messages.len()];
    chain_backward(cache.chain, &cache.messages, rng, &mut v);
    v
}

/// Exact draw of `x_t = a(x_{t-1}) + v` from the locally optimal proposal.
pub fn ffbs_sample_state<R: Rng + ?Sized>(cache: &FfbsCache<'_>, rng: &mut R, out: &mut [f64]) {
    chain_backward(cache.chain, &cache.messages, rng, out);
    for (x, a) in out.iter_mut().zip(&cache.offsets) {
        *x += a;
    }
}

/// One step of the exact fully adapted particle filter. Returns the
/// resampling probabilities `ν^i / Σ ν` alongside the normalizer increment.
pub fn fapf_step(
    system: &mut ParticleSystem,
    model: &LinearGaussianSsm,
    y: &[f64],
    streams: Streams,
) -> Result<StepReport> {
    let n = system.len();
    let n_x = model.n_x();
    let t = system.t() + 1;
    let caches: Vec<FfbsCache<'_>> = (0..n)
        .into_par_iter()
        .map(|i| ffbs_forward(model, system.state(i), y))
        .collect();
    let log_nu: Vec<f64> = caches.iter().map(|c| c.log_nu).collect();
    let (probabilities, log_z_increment) =
        normalize_logweights(&log_nu).map_err(|_| NsmcError::WeightCollapse { t })?;
    let ancestors =
        multinomial_resample(&probabilities, n, &mut streams.step(t, Purpose::Resample));
    let mut states = vec![0.0; n * n_x];
    states.par_chunks_mut(n_x).enumerate().for_each(|(i, x)| {
        let mut rng = streams.stream(t, i, Purpose::Propagate);
        ffbs_sample_state(&caches[ancestors[i]], &mut rng, x);
    });
    drop(caches);
    system.advance(ancestors, states, vec![0.0; n], log_z_increment);
    Ok(StepReport {
        ess: crate::smc::ess(&probabilities),
        probabilities,
        log_z_increment,
    })
}

/// Exact fully adapted particle filter.
pub fn fapf_run(
    model: &LinearGaussianSsm,
    data: &Dataset,
    n: usize,
    streams: Streams,
) -> Result<FilterOutput> {
    check_dims(model.n_x(), data, n)?;
    let mut system = ParticleSystem::new(n, model.n_x());
    let mut out = FilterOutput::new(model.n_x());
    for t in 1..=data.len() {
        let report = fapf_step(&mut system, model, data.y(t), streams)?;
        debug_assert!(system.logw().iter().all(|&w| w == 0.0));
        let (mean, var, _) = system.moments()?;
        out.steps.push(StepSummary {
            t,
            mean,
            var,
            log_z_increment: report.log_z_increment,
            ess: report.ess,
        });
    }
    Ok(out)
}

/// Proper-weighting procedure that returns `τ = ν` exactly and samples the
/// optimal proposal exactly. Plugged into the nested filter it reproduces the
/// fully adapted filter draw for draw.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactFfbs;

impl ProperWeighting<LinearGaussianSsm> for ExactFfbs {
    type State<'a> = FfbsCache<'a>;

    fn simulate<'a, R: Rng + ?Sized>(
        &self,
        model: &'a LinearGaussianSsm,
        prev: Option<&[f64]>,
        y: &[f64],
        _rng: &mut R,
    ) -> Result<(Option<FfbsCache<'a>>, f64)> {
        let cache = ffbs_forward(model, prev, y);
        let log_tau = cache.log_nu;
        Ok((Some(cache), log_tau))
    }

    fn propagate<R: Rng + ?Sized>(
        &self,
        _model: &LinearGaussianSsm,
        _prev: Option<&[f64]>,
        _y: &[f64],
        state: &FfbsCache<'_>,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        ffbs_sample_state(state, rng, out);
        Ok(())
    }
}
