//! Chain-structured Gaussian Markov random fields.
//!
//! A zero-mean Gaussian with tridiagonal precision `Q` is a Markov chain over
//! its components. Eliminating components from the tail gives the directed
//! form
//!
//! ```text
//! v_1 ~ N(0, 1/S_1),   v_d | v_{d-1} ~ N(-Q_{d,d-1}/S_d · v_{d-1}, 1/S_d),
//! S_n = Q_nn,          S_d = Q_dd - Q_{d,d+1}² / S_{d+1},
//! ```
//!
//! which is what every filter in this crate runs on. All pivots `S_d` being
//! positive is equivalent to `Q` being positive definite.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{NsmcError, Result};
use crate::gauss::{self, VAR_FLOOR};

/// Symmetric tridiagonal precision matrix, validated positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagPrecision {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
    chain: GaussianChain,
}

impl TridiagPrecision {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(NsmcError::InvalidParameter(
                "precision must have at least one component".into(),
            ));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(NsmcError::Dimension(format!(
                "offdiag has length {}, expected {}",
                offdiag.len(),
                diag.len() - 1
            )));
        }
        if diag.iter().chain(&offdiag).any(|v| !v.is_finite()) {
            return Err(NsmcError::InvalidParameter(
                "precision entries must be finite".into(),
            ));
        }
        let chain = GaussianChain::factorize(&diag, &offdiag)?;
        Ok(Self {
            diag,
            offdiag,
            chain,
        })
    }

    /// Diagonal precision with entries `1/var`.
    pub fn from_variances(var: &[f64]) -> Result<Self> {
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(NsmcError::InvalidParameter(
                "variances must be positive".into(),
            ));
        }
        Self::new(
            var.iter().map(|v| 1.0 / v).collect(),
            vec![0.0; var.len().saturating_sub(1)],
        )
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// The directed (Markov chain) representation of N(0, Q⁻¹).
    pub fn chain(&self) -> &GaussianChain {
        &self.chain
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = self.diag[i];
        }
        for (i, &o) in self.offdiag.iter().enumerate() {
            q[(i, i + 1)] = o;
            q[(i + 1, i)] = o;
        }
        q
    }

    /// Solves `Q x = b` with the Thomas algorithm.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(b.len(), n, "right-hand side has wrong length");
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        c[0] = if n > 1 { self.offdiag[0] / denom } else { 0.0 };
        d[0] = b[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.offdiag[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = self.offdiag[i] / denom;
            }
            d[i] = (b[i] - self.offdiag[i - 1] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }

    /// Dense covariance `Q⁻¹`, one tridiagonal solve per column.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut cov = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                cov[(i, j)] = col[i];
            }
        }
        // exact symmetry
        (&cov + cov.transpose()) * 0.5
    }

    pub fn log_det(&self) -> f64 {
        self.chain.var.iter().map(|v| -v.ln()).sum()
    }
}

/// Precision of the chain interaction density
/// `exp(-τ/2 Σ v_d² - λ/2 Σ (v_d - v_{d-1})²)`.
pub fn chain_precision(tau: f64, lambda: f64, n: usize) -> Result<TridiagPrecision> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(NsmcError::InvalidParameter(format!(
            "tau must be positive and finite, got {tau}"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(NsmcError::InvalidParameter(format!(
            "lambda must be non-negative and finite, got {lambda}"
        )));
    }
    if n == 0 {
        return Err(NsmcError::InvalidParameter("n must be at least 1".into()));
    }
    let diag = (0..n)
        .map(|i| {
            let neighbours = usize::from(i > 0) + usize::from(i + 1 < n);
            tau + lambda * neighbours as f64
        })
        .collect();
    TridiagPrecision::new(diag, vec![-lambda; n - 1])
}

/// Directed form of a chain Gaussian: `v_d | v_{d-1} ~ N(coef_d v_{d-1}, var_d)`
/// with `coef_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChain {
    coef: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianChain {
    fn factorize(diag: &[f64], offdiag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut pivot = vec![0.0; n];
        pivot[n - 1] = diag[n - 1];
        for d in (0..n - 1).rev() {
            if !(pivot[d + 1] > 0.0) {
                break;
            }
            pivot[d] = diag[d] - offdiag[d] * offdiag[d] / pivot[d + 1];
        }
        if let Some(d) = pivot.iter().position(|&s| !(s > 0.0)) {
            return Err(NsmcError::NotPositiveDefinite(format!(
                "non-positive pivot {} at component {}",
                pivot[d],
                d + 1
            )));
        }
        let var: Vec<f64> = pivot.iter().map(|s| 1.0 / s).collect();
        let coef = (0..n)
            .map(|d| {
                if d == 0 {
                    0.0
                } else {
                    -offdiag[d - 1] * var[d]
                }
            })
            .collect();
        Ok(Self { coef, var })
    }

    pub fn len(&self) -> usize {
        self.var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.var.is_empty()
    }

    pub fn coef(&self, d: usize) -> f64 {
        self.coef[d]
    }

    pub fn var(&self, d: usize) -> f64 {
        self.var[d]
    }

    #[inline]
    pub fn conditional_mean(&self, d: usize, prev: Option<f64>) -> f64 {
        prev.map_or(0.0, |p| self.coef[d] * p)
    }

    #[inline]
    pub fn log_conditional(&self, d: usize, prev: Option<f64>, v: f64) -> f64 {
        gauss::log_normal(v, self.conditional_mean(d, prev), self.var[d])
    }

    /// Ancestral draw, first component to last.
    pub fn sample_forward<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut prev = None;
        for (d, slot) in out.iter_mut().enumerate().take(self.len()) {
            let v = gauss::normal(rng, self.conditional_mean(d, prev), self.var[d]);
            *slot = v;
            prev = Some(v);
        }
    }

    pub fn log_density(&self, v: &[f64]) -> f64 {
        let mut prev = None;
        let mut acc = 0.0;
        for (d, &x) in v.iter().enumerate() {
            acc += self.log_conditional(d, prev, x);
            prev = Some(x);
        }
        acc
    }
}

/// Scalar Gaussian filtering message for one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMessage {
    pub mean: f64,
    pub var: f64,
    /// Accumulated `Σ_{k≤d} log p(ỹ_k | ỹ_{1:k-1})`.
    pub log_scale: f64,
}

/// Forward filtering over the components of a chain, optionally observed
/// through `ỹ_d = v_d + e_d`, `e_d ~ N(0, obs_var)`.
pub fn chain_forward(chain: &GaussianChain, obs: Option<(&[f64], f64)>) -> Vec<GaussianMessage> {
    let n = chain.len();
    let mut out = Vec::with_capacity(n);
    let (mut mean, mut var, mut log_scale) = (0.0, 0.0, 0.0);
    for d in 0..n {
        if d == 0 {
            mean = 0.0;
            var = chain.var[0];
        } else {
            let c = chain.coef[d];
            mean *= c;
            var = c * c * var + chain.var[d];
        }
        if let Some((y, r)) = obs {
            let s = var + r;
            log_scale += gauss::log_normal(y[d], mean, s);
            let gain = var / s;
            mean += gain * (y[d] - mean);
            var = (var * r / s).max(VAR_FLOOR);
        }
        out.push(GaussianMessage {
            mean,
            var,
            log_scale,
        });
    }
    out
}

/// Backward sampling pass: `v_n ~ N(m_n, P_n)`, then
/// `v_d | v_{d+1} ∝ N(v_d; m_d, P_d) · N(v_{d+1}; coef_{d+1} v_d, var_{d+1})`.
pub fn chain_backward<R: Rng + ?Sized>(
    chain: &GaussianChain,
    messages: &[GaussianMessage],
    rng: &mut R,
    out: &mut [f64],
) {
    let n = messages.len();
    let last = messages[n - 1];
    out[n - 1] = gauss::normal(rng, last.mean, last.var);
    for d in (0..n - 1).rev() {
        let m = messages[d];
        let c = chain.coef[d + 1];
        let q = chain.var[d + 1];
        let prec = 1.0 / m.var + c * c / q;
        let var = (1.0 / prec).max(VAR_FLOOR);
        let mean = var * (m.mean / m.var + c * out[d + 1] / q);
        out[d] = gauss::normal(rng, mean, var);
    }
}

/// Exact draw from N(0, Q⁻¹) by forward filtering and backward sampling.
pub fn sample_gmrf_chain<R: Rng + ?Sized>(prec: &TridiagPrecision, rng: &mut R) -> Vec<f64> {
    let messages = chain_forward(prec.chain(), None);
    let mut v = vec![0.0; prec.len()];
    chain_backward(prec.chain(), &messages, rng, &mut v);
    v
}
