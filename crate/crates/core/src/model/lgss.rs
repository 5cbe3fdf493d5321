use serde::{Deserialize, Serialize};

use super::gmrf::{chain_precision, GaussianChain, TridiagPrecision};
use super::TargetSequence;
use crate::error::{NsmcError, Result};
use crate::gauss;
use rand::Rng;

/// Spatio-temporal linear-Gaussian state space model
///
/// ```text
/// x_1 ~ N(0, Q⁻¹),  x_t = a·x_{t-1} + v_t,  v_t ~ N(0, Q⁻¹),
/// y_t | x_t ~ N(x_t, obs_var·I),
/// ```
///
/// with `Q` the chain precision built from `tau` and `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StssmSpec {
    pub n_x: usize,
    pub a_coef: f64,
    pub tau: f64,
    pub lambda: f64,
    pub obs_var: f64,
}

impl StssmSpec {
    /// The Gaussian chain model used in the reference experiments:
    /// `a = 0.5`, `τ = λ = 1`, `σ_y = 0.25`.
    pub fn reference(n_x: usize) -> Self {
        Self {
            n_x,
            a_coef: 0.5,
            tau: 1.0,
            lambda: 1.0,
            obs_var: 0.25 * 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(NsmcError::InvalidParameter("n_x must be at least 1".into()));
        }
        if !(self.obs_var > 0.0) || !self.obs_var.is_finite() {
            return Err(NsmcError::InvalidParameter(format!(
                "obs_var must be positive and finite, got {}",
                self.obs_var
            )));
        }
        if !self.a_coef.is_finite() {
            return Err(NsmcError::InvalidParameter("a_coef must be finite".into()));
        }
        chain_precision(self.tau, self.lambda, self.n_x).map(|_| ())
    }

    pub fn noise_precision(&self) -> Result<TridiagPrecision> {
        chain_precision(self.tau, self.lambda, self.n_x)
    }
}

/// One-dimensional linear-Gaussian model
/// `x_1 ~ N(init_mean, init_var)`, `x_t = a x_{t-1} + N(0, noise_var)`,
/// `y_t = x_t + N(0, obs_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarLgss {
    pub init_mean: f64,
    pub init_var: f64,
    pub a_coef: f64,
    pub noise_var: f64,
    pub obs_var: f64,
}

impl ScalarLgss {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("init_var", self.init_var),
            ("noise_var", self.noise_var),
            ("obs_var", self.obs_var),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(NsmcError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.init_mean.is_finite() || !self.a_coef.is_finite() {
            return Err(NsmcError::InvalidParameter(
                "init_mean and a_coef must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// `n_x` independent copies of a scalar model. When simulated, every
/// component receives the same observation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentSsmSpec {
    pub n_x: usize,
    pub scalar: ScalarLgss,
}

impl IndependentSsmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 {
            return Err(NsmcError::InvalidParameter("n_x must be at least 1".into()));
        }
        self.scalar.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Stssm(StssmSpec),
    Independent(IndependentSsmSpec),
}

impl ModelSpec {
    pub fn n_x(&self) -> usize {
        match self {
            ModelSpec::Stssm(s) => s.n_x,
            ModelSpec::Independent(s) => s.n_x,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::Stssm(_) => "stssm",
            ModelSpec::Independent(_) => "independent",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Stssm(s) => s.validate(),
            ModelSpec::Independent(s) => s.validate(),
        }
    }

    pub fn build(&self) -> Result<LinearGaussianSsm> {
        LinearGaussianSsm::new(self.clone())
    }
}

impl From<StssmSpec> for ModelSpec {
    fn from(s: StssmSpec) -> Self {
        ModelSpec::Stssm(s)
    }
}

impl From<IndependentSsmSpec> for ModelSpec {
    fn from(s: IndependentSsmSpec) -> Self {
        ModelSpec::Independent(s)
    }
}

/// Linear-Gaussian model with chain-structured noise and isotropic
/// observations, compiled from a [`ModelSpec`].
///
/// `x_1 = m_0 + v_1` with `v_1 ~ N(0, P⁻¹)`; `x_t = a x_{t-1} + v_t` with
/// `v_t ~ N(0, Q⁻¹)`; `y_t = x_t + N(0, obs_var I)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianSsm {
    spec: ModelSpec,
    n_x: usize,
    a_coef: f64,
    obs_var: f64,
    init_mean: f64,
    init_precision: TridiagPrecision,
    noise_precision: TridiagPrecision,
}

impl LinearGaussianSsm {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let model = match &spec {
            ModelSpec::Stssm(s) => {
                let q = s.noise_precision()?;
                Self {
                    n_x: s.n_x,
                    a_coef: s.a_coef,
                    obs_var: s.obs_var,
                    init_mean: 0.0,
                    init_precision: q.clone(),
                    noise_precision: q,
                    spec: spec.clone(),
                }
            }
            ModelSpec::Independent(s) => {
                let m = &s.scalar;
                Self {
                    n_x: s.n_x,
                    a_coef: m.a_coef,
                    obs_var: m.obs_var,
                    init_mean: m.init_mean,
                    init_precision: TridiagPrecision::from_variances(&vec![m.init_var; s.n_x])?,
                    noise_precision: TridiagPrecision::from_variances(&vec![m.noise_var; s.n_x])?,
                    spec: spec.clone(),
                }
            }
        };
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn a_coef(&self) -> f64 {
        self.a_coef
    }

    pub fn obs_var(&self) -> f64 {
        self.obs_var
    }

    pub fn init_mean(&self) -> f64 {
        self.init_mean
    }

    pub fn init_precision(&self) -> &TridiagPrecision {
        &self.init_precision
    }

    pub fn noise_precision(&self) -> &TridiagPrecision {
        &self.noise_precision
    }

    /// Precision of the additive noise entering at this step (`prev = None`
    /// at t = 1).
    pub fn step_precision(&self, prev: Option<&[f64]>) -> &TridiagPrecision {
        match prev {
            None => &self.init_precision,
            Some(_) => &self.noise_precision,
        }
    }

    pub fn step_chain(&self, prev: Option<&[f64]>) -> &GaussianChain {
        self.step_precision(prev).chain()
    }

    /// Deterministic part of the transition: `a·x_{t-1}`, or the initial mean.
    pub fn offsets(&self, prev: Option<&[f64]>) -> Vec<f64> {
        match prev {
            None => vec![self.init_mean; self.n_x],
            Some(p) => p.iter().map(|x| self.a_coef * x).collect(),
        }
    }

    #[inline]
    pub(crate) fn offset_at(&self, prev: Option<&[f64]>, d: usize) -> f64 {
        match prev {
            None => self.init_mean,
            Some(p) => self.a_coef * p[d],
        }
    }
}

impl TargetSequence for LinearGaussianSsm {
    fn n_x(&self) -> usize {
        self.n_x
    }

    fn sample_transition<R: Rng + ?Sized>(
        &self,
        prev: Option<&[f64]>,
        rng: &mut R,
        out: &mut [f64],
    ) {
        self.step_chain(prev).sample_forward(rng, out);
        for (d, x) in out.iter_mut().enumerate() {
            *x += self.offset_at(prev, d);
        }
    }

    fn log_transition(&self, prev: Option<&[f64]>, x: &[f64]) -> f64 {
        let chain = self.step_chain(prev);
        let mut acc = 0.0;
        let mut last = None;
        for (d, &xd) in x.iter().enumerate() {
            let v = xd - self.offset_at(prev, d);
            acc += chain.log_conditional(d, last, v);
            last = Some(v);
        }
        acc
    }

    fn log_observation(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xd, &yd)| gauss::log_normal(yd, xd, self.obs_var))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn stssm_validation() {
        assert!(StssmSpec::reference(10).validate().is_ok());
        let mut s = StssmSpec::reference(3);
        s.obs_var = 0.0;
        assert!(s.validate().is_err());
        s = StssmSpec::reference(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn transition_density_matches_dense_gaussian() {
        let model = ModelSpec::from(StssmSpec::reference(4)).build().unwrap();
        let prev = [0.2, -0.4, 1.0, 0.5];
        let x = [0.0, 0.1, 0.9, -0.3];
        let q = model.noise_precision().to_dense();
        let r = nalgebra::DVector::from_iterator(4, x.iter().zip(&prev).map(|(a, b)| a - 0.5 * b));
        let quad = (r.transpose() * &q * &r)[(0, 0)];
        let det = q.determinant();
        let expect = -0.5 * (4.0 * gauss::LN_2PI - det.ln() + quad);
        assert!((model.log_transition(Some(&prev), &x) - expect).abs() < 1e-12);
    }

    #[test]
    fn independent_model_uses_scalar_parameters() {
        let spec = IndependentSsmSpec {
            n_x: 3,
            scalar: ScalarLgss {
                init_mean: 1.0,
                init_var: 2.0,
                a_coef: 0.9,
                noise_var: 0.5,
                obs_var: 0.1,
            },
        };
        let model = ModelSpec::from(spec).build().unwrap();
        let x = [1.5, 0.0, 2.0];
        let lp: f64 = x.iter().map(|&v| gauss::log_normal(v, 1.0, 2.0)).sum();
        assert!((model.log_transition(None, &x) - lp).abs() < 1e-12);
        let mut rng = seeded(3);
        let mut out = [0.0; 3];
        model.sample_transition(Some(&x), &mut rng, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
