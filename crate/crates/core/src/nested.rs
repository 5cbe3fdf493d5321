//! Nested sequential Monte Carlo.
//!
//! The outer filter approximates the fully adapted filter: instead of the
//! exact resampling weight `ν_{t-1}` and an exact draw from the locally
//! optimal proposal, each outer particle runs an inner Monte Carlo procedure
//! that returns a state `u_{t-1}`, a nonnegative weight `τ(u_{t-1})` and a
//! sampler `κ(x_t | u_{t-1})` such that `(x_t, τ)` is properly weighted:
//!
//! ```text
//! E[τ · h(x_t)] = ∫ f(x_t | x_{t-1}) g(y_t | x_t) h(x_t) dx_t   for all h.
//! ```
//!
//! Inner procedures provided here:
//!
//! - inner SMC over the state components followed by backward simulation or
//!   by a draw from the final empirical measure,
//! - importance sampling of the whole state,
//! - one level of self-nesting, where the component sweep is itself a nested
//!   SMC whose stages are handled by importance sampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NsmcError, Result};
use crate::gauss;
use crate::model::{Dataset, GaussianChain, LinearGaussianSsm, TargetSequence};
use crate::rng::{Purpose, Streams};
use crate::smc::{
    check_dims, log_mean_exp, log_sum_exp, multinomial_resample, normalize_logweights,
    FilterOutput, ParticleSystem, StepReport, StepSummary,
};

/// A chain-structured sequence of unnormalized stage targets over the
/// components of one state,
///
/// ```text
/// p_d(x_{1:d}) = Π_{k ≤ d} φ_k(x_{k-1}, x_k),     p_{n_x} ∝ γ_t / γ_{t-1},
/// ```
///
/// with stage proposals `r_d(x_d | x_{d-1})`. Stages are 0-based in code.
pub trait InnerTargetSequence: Sync {
    fn n_stages(&self) -> usize;

    /// `log φ_d(x_{d-1}, x_d) = log p_d(x_{1:d}) - log p_{d-1}(x_{1:d-1})`.
    fn log_stage_factor(&self, d: usize, prev: Option<f64>, x: f64) -> f64;

    fn sample_proposal<R: Rng + ?Sized>(&self, d: usize, prev: Option<f64>, rng: &mut R) -> f64;

    fn log_proposal(&self, d: usize, prev: Option<f64>, x: f64) -> f64;

    /// `log p_d(x_{1:d})` with `d = path.len()`.
    fn log_target(&self, path: &[f64]) -> f64 {
        let mut prev = None;
        let mut acc = 0.0;
        for (d, &x) in path.iter().enumerate() {
            acc += self.log_stage_factor(d, prev, x);
            prev = Some(x);
        }
        acc
    }
}

/// Stage proposal used by inner procedures on component-factored models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageProposal {
    /// The model's per-component transition conditional.
    #[default]
    Prior,
    /// Conditional times the component's own observation factor, normalized.
    LocallyOptimal,
}

/// Models whose incremental target factors over the state components.
pub trait ComponentFactored: TargetSequence {
    type Stages<'a>: InnerTargetSequence
    where
        Self: 'a;

    /// Stage targets for `γ_t(x_{1:t}) / γ_{t-1}(x_{1:t-1})` given `x_{t-1}`
    /// (`None` at t = 1) and `y_t`.
    fn stages<'a>(
        &'a self,
        prev: Option<&[f64]>,
        y: &[f64],
        proposal: StageProposal,
    ) -> Self::Stages<'a>;
}

/// Stage targets of a linear-Gaussian chain model: the directed chain form
/// of the noise with each component's observation factor attached, so
/// `p_{n_x}(x) = f(x | x_{t-1}) g(y_t | x)` exactly.
#[derive(Debug, Clone)]
pub struct ChainStages<'a> {
    chain: &'a GaussianChain,
    offsets: Vec<f64>,
    y: Vec<f64>,
    obs_var: f64,
    proposal: StageProposal,
}

impl ChainStages<'_> {
    #[inline]
    fn noise_prev(&self, d: usize, prev: Option<f64>) -> Option<f64> {
        prev.map(|p| p - self.offsets[d - 1])
    }

    /// Mean and variance of the stage proposal, in the noise domain.
    #[inline]
    fn proposal_moments(&self, d: usize, prev: Option<f64>) -> (f64, f64) {
        let mean = self.chain.conditional_mean(d, self.noise_prev(d, prev));
        let var = self.chain.var(d);
        match self.proposal {
            StageProposal::Prior => (mean, var),
            StageProposal::LocallyOptimal => {
                let resid = self.y[d] - self.offsets[d];
                let prec = 1.0 / var + 1.0 / self.obs_var;
                ((mean / var + resid / self.obs_var) / prec, 1.0 / prec)
            }
        }
    }
}

impl InnerTargetSequence for ChainStages<'_> {
    fn n_stages(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    fn log_stage_factor(&self, d: usize, prev: Option<f64>, x: f64) -> f64 {
        self.chain
            .log_conditional(d, self.noise_prev(d, prev), x - self.offsets[d])
            + gauss::log_normal(self.y[d], x, self.obs_var)
    }

    #[inline]
    fn sample_proposal<R: Rng + ?Sized>(&self, d: usize, prev: Option<f64>, rng: &mut R) -> f64 {
        let (mean, var) = self.proposal_moments(d, prev);
        self.offsets[d] + gauss::normal(rng, mean, var)
    }

    #[inline]
    fn log_proposal(&self, d: usize, prev: Option<f64>, x: f64) -> f64 {
        let (mean, var) = self.proposal_moments(d, prev);
        gauss::log_normal(x - self.offsets[d], mean, var)
    }
}

impl ComponentFactored for LinearGaussianSsm {
    type Stages<'a> = ChainStages<'a>;

    fn stages<'a>(
        &'a self,
        prev: Option<&[f64]>,
        y: &[f64],
        proposal: StageProposal,
    ) -> ChainStages<'a> {
        ChainStages {
            chain: self.step_chain(prev),
            offsets: self.offsets(prev),
            y: y.to_vec(),
            obs_var: self.obs_var(),
            proposal,
        }
    }
}

/// All particles, ancestors and weights of one inner SMC run: the auxiliary
/// variable `u_{t-1}`. Arrays are stage-major (`stage * M + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct InnerState {
    n_stages: usize,
    m: usize,
    particles: Vec<f64>,
    ancestors: Vec<usize>,
    logw: Vec<f64>,
    log_tau: f64,
}

impl InnerState {
    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `log τ = Σ_d log((1/M) Σ_i w_d^i)`.
    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn particles(&self, d: usize) -> &[f64] {
        &self.particles[d * self.m..(d + 1) * self.m]
    }

    pub fn logw(&self, d: usize) -> &[f64] {
        &self.logw[d * self.m..(d + 1) * self.m]
    }

    /// Ancestor indices drawn at stage `d ≥ 1`, pointing into stage `d - 1`.
    pub fn ancestors(&self, d: usize) -> &[usize] {
        assert!(d >= 1, "stage 0 has no ancestors");
        &self.ancestors[(d - 1) * self.m..d * self.m]
    }

    /// Recomputes `log τ` from the stored stage weights.
    pub fn recompute_log_tau(&self) -> f64 {
        (0..self.n_stages).map(|d| log_mean_exp(self.logw(d))).sum()
    }
}

/// Inner SMC over the components: sample `r_1` and weight `p_1 / r_1`; then
/// for each later stage resample multinomially on the previous weights,
/// propagate through `r_d` and weight `p_d / (p_{d-1} r_d)`.
pub fn inner_smc<S: InnerTargetSequence, R: Rng + ?Sized>(
    target: &S,
    m: usize,
    rng: &mut R,
) -> Result<InnerState> {
    if m == 0 {
        return Err(NsmcError::InvalidParameter(
            "inner particle count M must be at least 1".into(),
        ));
    }
    let n = target.n_stages();
    let mut particles = vec![0.0; n * m];
    let mut ancestors = vec![0usize; n.saturating_sub(1) * m];
    let mut logw = vec![0.0; n * m];
    let mut log_tau = 0.0;
    for d in 0..n {
        if d > 0 {
            let (p, _) = normalize_logweights(&logw[(d - 1) * m..d * m])
                .map_err(|_| NsmcError::InnerCollapse { stage: d })?;
            let anc = multinomial_resample(&p, m, rng);
            ancestors[(d - 1) * m..d * m].copy_from_slice(&anc);
        }
        for i in 0..m {
            let prev = (d > 0).then(|| particles[(d - 1) * m + ancestors[(d - 1) * m + i]]);
            let x = target.sample_proposal(d, prev, rng);
            particles[d * m + i] = x;
            logw[d * m + i] = target.log_stage_factor(d, prev, x) - target.log_proposal(d, prev, x);
        }
        let stage_mean = log_mean_exp(&logw[d * m..(d + 1) * m]);
        if stage_mean == f64::NEG_INFINITY {
            return Err(NsmcError::InnerCollapse { stage: d + 1 });
        }
        log_tau += stage_mean;
    }
    Ok(InnerState {
        n_stages: n,
        m,
        particles,
        ancestors,
        logw,
        log_tau,
    })
}

/// Backward pass shared by [`backward_simulate`] and the self-nested
/// procedure: stage weights `logw(d)` (or uniform when `None`) are reweighted
/// by `φ_{d+1}(x_d^j, x_{d+1})`, the only factor of `p_{n_x} / p_d` that
/// depends on the candidate.
fn backward_pass<S: InnerTargetSequence, R: Rng + ?Sized>(
    particles: &[f64],
    logw: Option<&[f64]>,
    n: usize,
    m: usize,
    target: &S,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; n];
    let stage_w = |d: usize, j: usize| logw.map_or(0.0, |w| w[d * m + j]);
    let last: Vec<f64> = (0..m).map(|j| stage_w(n - 1, j)).collect();
    let b =
        crate::smc::categorical_log(&last, rng).ok_or(NsmcError::BackwardCollapse { stage: n })?;
    x[n - 1] = particles[(n - 1) * m + b];
    let mut scratch = vec![0.0; m];
    for d in (0..n - 1).rev() {
        for (j, s) in scratch.iter_mut().enumerate() {
            let w = stage_w(d, j);
            *s = if w == f64::NEG_INFINITY {
                w
            } else {
                w + target.log_stage_factor(d + 1, Some(particles[d * m + j]), x[d + 1])
            };
        }
        let b = crate::smc::categorical_log(&scratch, rng)
            .ok_or(NsmcError::BackwardCollapse { stage: d + 1 })?;
        x[d] = particles[d * m + b];
    }
    Ok(x)
}

/// Backward simulation of one state from an inner SMC run: final index
/// `∝ w_{n_x}`, then for `d = n_x - 1, …, 1` index `∝ w_d^j p_{n_x}(x_{1:d}^j, x_{d+1:n_x}) / p_d(x_{1:d}^j)`.
pub fn backward_simulate<S: InnerTargetSequence, R: Rng + ?Sized>(
    inner: &InnerState,
    target: &S,
    rng: &mut R,
) -> Result<Vec<f64>> {
    backward_pass(
        &inner.particles,
        Some(&inner.logw),
        inner.n_stages,
        inner.m,
        target,
        rng,
    )
}

/// Draws one ancestral path from the final weighted particle set.
pub fn empirical_draw<R: Rng + ?Sized>(inner: &InnerState, rng: &mut R) -> Result<Vec<f64>> {
    let n = inner.n_stages;
    let m = inner.m;
    let mut b = crate::smc::categorical_log(inner.logw(n - 1), rng)
        .ok_or(NsmcError::InnerCollapse { stage: n })?;
    let mut x = vec![0.0; n];
    for d in (0..n).rev() {
        x[d] = inner.particles[d * m + b];
        if d > 0 {
            b = inner.ancestors(d)[b];
        }
    }
    Ok(x)
}

/// A whole-state importance proposal with a tractable density.
pub trait StateProposal: Sync {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);
    fn log_density(&self, x: &[f64]) -> f64;
}

/// The model transition `f(· | x_{t-1})` as an importance proposal.
#[derive(Debug, Clone, Copy)]
pub struct TransitionProposal<'a, T> {
    pub model: &'a T,
    pub prev: Option<&'a [f64]>,
}

impl<T: TargetSequence> StateProposal for TransitionProposal<'_, T> {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.model.sample_transition(self.prev, rng, out);
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.model.log_transition(self.prev, x)
    }
}

/// Candidates and weights of an importance-sampling inner procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    n_x: usize,
    candidates: Vec<f64>,
    logw: Vec<f64>,
    log_tau: f64,
}

impl ImportanceState {
    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn logw(&self) -> &[f64] {
        &self.logw
    }

    pub fn candidate(&self, j: usize) -> &[f64] {
        &self.candidates[j * self.n_x..(j + 1) * self.n_x]
    }

    /// κ: one candidate drawn `∝ w̃`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        let b = crate::smc::categorical_log(&self.logw, rng)
            .ok_or(NsmcError::InnerCollapse { stage: 1 })?;
        out.copy_from_slice(self.candidate(b));
        Ok(())
    }
}

/// η and τ of importance sampling: `M` candidates from the proposal, weights
/// `w̃ = r / p` against the unnormalized log-target, `τ = mean(w̃)`.
pub fn is_simulate<P, F, R>(
    proposal: &P,
    log_target: F,
    n_x: usize,
    m: usize,
    rng: &mut R,
) -> Result<ImportanceState>
where
    P: StateProposal,
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if m == 0 {
        return Err(NsmcError::InvalidParameter(
            "inner particle count M must be at least 1".into(),
        ));
    }
    let mut candidates = vec![0.0; m * n_x];
    let logw: Vec<f64> = candidates
        .chunks_mut(n_x)
        .map(|x| {
            proposal.sample(rng, x);
            log_target(x) - proposal.log_density(x)
        })
        .collect();
    let log_tau = log_mean_exp(&logw);
    if log_tau == f64::NEG_INFINITY {
        return Err(NsmcError::InnerCollapse { stage: 1 });
    }
    Ok(ImportanceState {
        n_x,
        candidates,
        logw,
        log_tau,
    })
}

/// Importance sampling as a proper-weighting procedure; returns `(x, log τ)`.
pub fn is_inner<P, F, R>(
    proposal: &P,
    log_target: F,
    n_x: usize,
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)>
where
    P: StateProposal,
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let state = is_simulate(proposal, log_target, n_x, m, rng)?;
    let mut x = vec![0.0; n_x];
    state.draw(rng, &mut x)?;
    Ok((x, state.log_tau))
}

/// Particle sets of a self-nested component sweep. After each stage the
/// particles are unweighted.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfNestedState {
    n_stages: usize,
    m: usize,
    particles: Vec<f64>,
    log_tau: f64,
}

impl SelfNestedState {
    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn particles(&self, d: usize) -> &[f64] {
        &self.particles[d * self.m..(d + 1) * self.m]
    }
}

/// Nested SMC over the components with `m_outer` particles, each stage
/// handled by importance sampling with `m_inner` candidates from `r_d`.
/// `log τ = Σ_d log((1/M) Σ_i τ_d^i)`.
pub fn self_nested_smc<S: InnerTargetSequence, R: Rng + ?Sized>(
    target: &S,
    m_outer: usize,
    m_inner: usize,
    rng: &mut R,
) -> Result<SelfNestedState> {
    if m_outer == 0 || m_inner == 0 {
        return Err(NsmcError::InvalidParameter(
            "self-nested particle counts must be at least 1".into(),
        ));
    }
    let n = target.n_stages();
    let mut particles = vec![0.0; n * m_outer];
    let mut cand = vec![0.0; m_outer * m_inner];
    let mut cand_w = vec![0.0; m_outer * m_inner];
    let mut stage_tau = vec![0.0; m_outer];
    let mut log_tau = 0.0;
    for d in 0..n {
        for i in 0..m_outer {
            let prev = (d > 0).then(|| particles[(d - 1) * m_outer + i]);
            let c = &mut cand[i * m_inner..(i + 1) * m_inner];
            let w = &mut cand_w[i * m_inner..(i + 1) * m_inner];
            for (cj, wj) in c.iter_mut().zip(w.iter_mut()) {
                let x = target.sample_proposal(d, prev, rng);
                *cj = x;
                *wj = target.log_stage_factor(d, prev, x) - target.log_proposal(d, prev, x);
            }
            stage_tau[i] = log_mean_exp(w);
        }
        let (p, stage_mean) = normalize_logweights(&stage_tau)
            .map_err(|_| NsmcError::InnerCollapse { stage: d + 1 })?;
        log_tau += stage_mean;
        let anc = multinomial_resample(&p, m_outer, rng);
        for (i, &a) in anc.iter().enumerate() {
            let w = &cand_w[a * m_inner..(a + 1) * m_inner];
            let b = crate::smc::categorical_log(w, rng)
                .ok_or(NsmcError::InnerCollapse { stage: d + 1 })?;
            particles[d * m_outer + i] = cand[a * m_inner + b];
        }
    }
    Ok(SelfNestedState {
        n_stages: n,
        m: m_outer,
        particles,
        log_tau,
    })
}

/// κ of the self-nested procedure: backward simulation with `w_d ≡ 1`.
pub fn self_nested_draw<S: InnerTargetSequence, R: Rng + ?Sized>(
    state: &SelfNestedState,
    target: &S,
    rng: &mut R,
) -> Result<Vec<f64>> {
    backward_pass(&state.particles, None, state.n_stages, state.m, target, rng)
}

/// A triple `(η, τ, κ)` generating properly weighted samples for the
/// incremental target of a model.
pub trait ProperWeighting<T: TargetSequence + ?Sized>: Sync {
    type State<'a>: Send + Sync
    where
        T: 'a;

    /// Draws `u_{t-1} ~ η` and returns it with `log τ(u_{t-1})`. A `None`
    /// state means `τ = 0`; such particles are never selected.
    fn simulate<'a, R: Rng + ?Sized>(
        &self,
        model: &'a T,
        prev: Option<&[f64]>,
        y: &[f64],
        rng: &mut R,
    ) -> Result<(Option<Self::State<'a>>, f64)>;

    /// Draws `x_t ~ κ(· | u_{t-1})` into `out`.
    fn propagate<R: Rng + ?Sized>(
        &self,
        model: &T,
        prev: Option<&[f64]>,
        y: &[f64],
        state: &Self::State<'_>,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()>;
}

/// Inner procedure kinds selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerKind {
    /// Inner SMC followed by backward simulation.
    #[serde(rename = "smc+bs")]
    SmcBackward,
    /// Inner SMC followed by a draw from its final empirical measure.
    #[serde(rename = "smc+empirical")]
    SmcEmpirical,
    /// Importance sampling of the whole state from the transition.
    #[serde(rename = "is")]
    Importance,
    /// Nested SMC over components (one level), IS within stages.
    #[serde(rename = "self-nested")]
    SelfNested,
}

impl InnerKind {
    pub const ALL: [InnerKind; 4] = [
        InnerKind::SmcBackward,
        InnerKind::SmcEmpirical,
        InnerKind::Importance,
        InnerKind::SelfNested,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InnerKind::SmcBackward => "smc+bs",
            InnerKind::SmcEmpirical => "smc+empirical",
            InnerKind::Importance => "is",
            InnerKind::SelfNested => "self-nested",
        }
    }
}

/// Configured proper-weighting procedure for component-factored models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperWeightingProcedure {
    pub kind: InnerKind,
    /// Inner particle count (outer count of the inner sweep when self-nested).
    pub m: usize,
    /// Importance candidates per stage, self-nested only.
    pub m_inner: usize,
    /// 1 for self-nested, 0 otherwise.
    pub recursion_depth: u8,
    pub stage_proposal: StageProposal,
}

impl ProperWeightingProcedure {
    pub fn new(kind: InnerKind, m: usize) -> Self {
        Self {
            kind,
            m,
            m_inner: m,
            recursion_depth: u8::from(kind == InnerKind::SelfNested),
            stage_proposal: StageProposal::Prior,
        }
    }

    pub fn with_stage_proposal(mut self, proposal: StageProposal) -> Self {
        self.stage_proposal = proposal;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(NsmcError::InvalidParameter("M must be at least 1".into()));
        }
        match self.kind {
            InnerKind::SelfNested => {
                if self.m_inner == 0 {
                    return Err(NsmcError::InvalidParameter(
                        "M_inner must be at least 1".into(),
                    ));
                }
                if self.recursion_depth != 1 {
                    return Err(NsmcError::InvalidParameter(format!(
                        "self-nesting supports recursion depth 1 only, got {}",
                        self.recursion_depth
                    )));
                }
            }
            _ if self.recursion_depth != 0 => {
                return Err(NsmcError::InvalidParameter(format!(
                    "{} does not nest; recursion depth must be 0",
                    self.kind.name()
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Self-nested procedure: an inner nested SMC with `m_outer` particles over
/// the components in chain order, `m_inner` importance candidates per stage,
/// and backward simulation with unit stage weights.
pub fn self_nested_proc(m_outer: usize, m_inner: usize) -> ProperWeightingProcedure {
    ProperWeightingProcedure {
        kind: InnerKind::SelfNested,
        m: m_outer,
        m_inner,
        recursion_depth: 1,
        stage_proposal: StageProposal::Prior,
    }
}

/// Inner state of a [`ProperWeightingProcedure`].
#[derive(Debug, Clone, PartialEq)]
pub enum InnerVariant {
    Smc(InnerState),
    Importance(ImportanceState),
    SelfNested(SelfNestedState),
}

impl<T: ComponentFactored> ProperWeighting<T> for ProperWeightingProcedure {
    type State<'a>
        = InnerVariant
    where
        T: 'a;

    fn simulate<R: Rng + ?Sized>(
        &self,
        model: &T,
        prev: Option<&[f64]>,
        y: &[f64],
        rng: &mut R,
    ) -> Result<(Option<InnerVariant>, f64)> {
        let run = match self.kind {
            InnerKind::SmcBackward | InnerKind::SmcEmpirical => {
                let stages = model.stages(prev, y, self.stage_proposal);
                inner_smc(&stages, self.m, rng).map(|s| (s.log_tau, InnerVariant::Smc(s)))
            }
            InnerKind::Importance => {
                let proposal = TransitionProposal { model, prev };
                is_simulate(
                    &proposal,
                    |x| model.log_incremental(prev, x, y),
                    model.n_x(),
                    self.m,
                    rng,
                )
                .map(|s| (s.log_tau, InnerVariant::Importance(s)))
            }
            InnerKind::SelfNested => {
                let stages = model.stages(prev, y, self.stage_proposal);
                self_nested_smc(&stages, self.m, self.m_inner, rng)
                    .map(|s| (s.log_tau, InnerVariant::SelfNested(s)))
            }
        };
        match run {
            Ok((log_tau, state)) => Ok((Some(state), log_tau)),
            // τ = 0 is a legal outcome for a single particle
            Err(NsmcError::InnerCollapse { .. }) => Ok((None, f64::NEG_INFINITY)),
            Err(e) => Err(e),
        }
    }

    fn propagate<R: Rng + ?Sized>(
        &self,
        model: &T,
        prev: Option<&[f64]>,
        y: &[f64],
        state: &InnerVariant,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        let x = match (self.kind, state) {
            (InnerKind::SmcBackward, InnerVariant::Smc(s)) => {
                backward_simulate(s, &model.stages(prev, y, self.stage_proposal), rng)?
            }
            (InnerKind::SmcEmpirical, InnerVariant::Smc(s)) => empirical_draw(s, rng)?,
            (InnerKind::Importance, InnerVariant::Importance(s)) => {
                return s.draw(rng, out);
            }
            (InnerKind::SelfNested, InnerVariant::SelfNested(s)) => {
                self_nested_draw(s, &model.stages(prev, y, self.stage_proposal), rng)?
            }
            _ => unreachable!("inner state does not match procedure kind"),
        };
        out.copy_from_slice(&x);
        Ok(())
    }
}

/// Exact sampler of the transition `f` with `τ ≡ 1`: properly weighted for
/// the proposal `r_t = f`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransitionSampler;

impl<T: TargetSequence> ProperWeighting<T> for TransitionSampler {
    type State<'a>
        = ()
    where
        T: 'a;

    fn simulate<R: Rng + ?Sized>(
        &self,
        _model: &T,
        _prev: Option<&[f64]>,
        _y: &[f64],
        _rng: &mut R,
    ) -> Result<(Option<()>, f64)> {
        Ok((Some(()), 0.0))
    }

    fn propagate<R: Rng + ?Sized>(
        &self,
        model: &T,
        prev: Option<&[f64]>,
        _y: &[f64],
        _state: &(),
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        model.sample_transition(prev, rng, out);
        Ok(())
    }
}

/// Runs η for every particle of the system in parallel.
fn simulate_all<'a, T, P>(
    system: &ParticleSystem,
    model: &'a T,
    proc: &P,
    y: &[f64],
    streams: Streams,
    t: usize,
) -> Result<Vec<(Option<P::State<'a>>, f64)>>
where
    T: TargetSequence,
    P: ProperWeighting<T>,
{
    (0..system.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(t, i, Purpose::Inner);
            proc.simulate(model, system.state(i), y, &mut rng)
        })
        .collect()
}

/// One step of nested SMC in fully adapted mode: run the inner procedure for
/// every particle, resample ancestors `∝ τ`, draw `x_t^i` from the inner
/// state of the selected ancestor, and add `log((1/N) Σ τ^i)` to `log Ẑ`.
/// Weights stay uniform.
pub fn nsmc_step<T, P>(
    system: &mut ParticleSystem,
    model: &T,
    proc: &P,
    y: &[f64],
    streams: Streams,
) -> Result<StepReport>
where
    T: TargetSequence,
    P: ProperWeighting<T>,
{
    let n = system.len();
    let n_x = model.n_x();
    let t = system.t() + 1;
    let inner = simulate_all(system, model, proc, y, streams, t)?;
    let log_tau: Vec<f64> = inner.iter().map(|(_, lt)| *lt).collect();
    let (probabilities, log_z_increment) =
        normalize_logweights(&log_tau).map_err(|_| NsmcError::WeightCollapse { t })?;
    let ancestors =
        multinomial_resample(&probabilities, n, &mut streams.step(t, Purpose::Resample));
    let mut states = vec![0.0; n * n_x];
    states
        .par_chunks_mut(n_x)
        .enumerate()
        .try_for_each(|(i, x)| {
            let a = ancestors[i];
            let state = inner[a].0.as_ref().expect("selected particle has τ > 0");
            let mut rng = streams.stream(t, i, Purpose::Propagate);
            proc.propagate(model, system.state(a), y, state, &mut rng, x)
        })?;
    drop(inner);
    system.advance(ancestors, states, vec![0.0; n], log_z_increment);
    Ok(StepReport {
        ess: crate::smc::ess(&probabilities),
        probabilities,
        log_z_increment,
    })
}

/// Nested SMC over a whole dataset.
pub fn nsmc_run<T, P>(
    model: &T,
    data: &Dataset,
    n: usize,
    proc: &P,
    streams: Streams,
) -> Result<FilterOutput>
where
    T: TargetSequence,
    P: ProperWeighting<T>,
{
    check_dims(model.n_x(), data, n)?;
    let mut system = ParticleSystem::new(n, model.n_x());
    let mut out = FilterOutput::new(model.n_x());
    for t in 1..=data.len() {
        let report = nsmc_step(&mut system, model, proc, data.y(t), streams)?;
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

/// Unnormalized proposal `r_t` the inner procedure is properly weighted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalTarget {
    /// `r_t = γ_t / γ_{t-1}` (fully adapted).
    Incremental,
    /// `r_t = f(x_t | x_{t-1})` (bootstrap).
    Transition,
}

/// Adjustment multipliers `ν̂` used for outer resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjustment {
    /// `ν̂ ≡ 1`.
    Unit,
    /// `ν̂ = τ`.
    Tau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuxiliaryDesign {
    pub proposal: ProposalTarget,
    pub adjustment: Adjustment,
}

impl AuxiliaryDesign {
    pub const FULLY_ADAPTED: Self = Self {
        proposal: ProposalTarget::Incremental,
        adjustment: Adjustment::Tau,
    };
    pub const BOOTSTRAP: Self = Self {
        proposal: ProposalTarget::Transition,
        adjustment: Adjustment::Unit,
    };
}

/// One step of nested SMC for an arbitrary auxiliary design: resample
/// `∝ ν̂ w_{t-1}`, propagate with κ, and weight
/// `w_t = (γ_t / γ_{t-1}) · τ / (ν̂ · r_t)`. The normalizer increment is
/// `[Σ ν̂ w_{t-1} / Σ w_{t-1}] · (1/N) Σ w_t`.
pub fn general_nsmc_step<T, P>(
    system: &mut ParticleSystem,
    model: &T,
    proc: &P,
    design: AuxiliaryDesign,
    y: &[f64],
    streams: Streams,
) -> Result<StepReport>
where
    T: TargetSequence,
    P: ProperWeighting<T>,
{
    let n = system.len();
    let n_x = model.n_x();
    let t = system.t() + 1;
    let inner = simulate_all(system, model, proc, y, streams, t)?;
    let log_adjust = |log_tau: f64| match design.adjustment {
        Adjustment::Unit => 0.0,
        Adjustment::Tau => log_tau,
    };
    let logits: Vec<f64> = inner
        .iter()
        .zip(system.logw())
        .map(|((state, log_tau), &w)| {
            if state.is_none() {
                f64::NEG_INFINITY
            } else {
                log_adjust(*log_tau) + w
            }
        })
        .collect();
    let (probabilities, _) =
        normalize_logweights(&logits).map_err(|_| NsmcError::WeightCollapse { t })?;
    let ancestors =
        multinomial_resample(&probabilities, n, &mut streams.step(t, Purpose::Resample));
    let mut states = vec![0.0; n * n_x];
    let logw: Vec<f64> = states
        .par_chunks_mut(n_x)
        .enumerate()
        .map(|(i, x)| {
            let a = ancestors[i];
            let (state, log_tau) = &inner[a];
            let state = state.as_ref().expect("selected particle has τ > 0");
            let prev = system.state(a);
            let mut rng = streams.stream(t, i, Purpose::Propagate);
            proc.propagate(model, prev, y, state, &mut rng, x)?;
            let inc = model.log_incremental(prev, x, y);
            let log_r = match design.proposal {
                ProposalTarget::Incremental => inc,
                ProposalTarget::Transition => model.log_transition(prev, x),
            };
            Ok((inc - log_r) + (log_tau - log_adjust(*log_tau)))
        })
        .collect::<Result<_>>()?;
    drop(inner);
    let log_z_increment = log_sum_exp(&logits) - log_sum_exp(system.logw()) + log_mean_exp(&logw);
    if log_z_increment == f64::NEG_INFINITY {
        return Err(NsmcError::WeightCollapse { t });
    }
    system.advance(ancestors, states, logw, log_z_increment);
    Ok(StepReport {
        ess: crate::smc::ess(&probabilities),
        probabilities,
        log_z_increment,
    })
}

/// General nested SMC over a whole dataset. The reported ESS is that of the
/// weights `w_t` carried out of each step.
pub fn general_nsmc_run<T, P>(
    model: &T,
    data: &Dataset,
    n: usize,
    proc: &P,
    design: AuxiliaryDesign,
    streams: Streams,
) -> Result<FilterOutput>
where
    T: TargetSequence,
    P: ProperWeighting<T>,
{
    check_dims(model.n_x(), data, n)?;
    let mut system = ParticleSystem::new(n, model.n_x());
    let mut out = FilterOutput::new(model.n_x());
    for t in 1..=data.len() {
        let report = general_nsmc_step(&mut system, model, proc, design, data.y(t), streams)?;
        let (mean, var, ess) = system.moments()?;
        out.steps.push(StepSummary {
            t,
            mean,
            var,
            log_z_increment: report.log_z_increment,
            ess,
        });
    }
    Ok(out)
}
