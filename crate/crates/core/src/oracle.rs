//! Dense-matrix reference computations.
//!
//! Everything here works on full `n_x × n_x` (or `T n_x × T n_x`) matrices
//! with general inverses and Cholesky factors, independent of the chain
//! recursions used by the filters. Intended for validation at small sizes.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{unbiasedness_test, ZTest};
use crate::error::{NsmcError, Result};
use crate::gauss::LN_2PI;
use crate::model::{Dataset, LinearGaussianSsm, TargetSequence};
use crate::nested::ProperWeighting;
use crate::rng::{derive_seed, seeded};
use rayon::prelude::*;

/// `log N(x; mean, cov)` via a dense Cholesky factor.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let n = x.len();
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| NsmcError::NotPositiveDefinite("dense covariance".into()))?;
    let diff = x - mean;
    let z = chol
        .l()
        .solve_lower_triangular(&diff)
        .ok_or_else(|| NsmcError::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (n as f64 * LN_2PI + log_det + z.norm_squared()))
}

fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| NsmcError::NotPositiveDefinite("singular dense precision".into()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Mean and covariance of `f(x_t | x_{t-1})`; `prev = None` is the initial law.
pub fn dense_transition(
    model: &LinearGaussianSsm,
    prev: Option<&[f64]>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = model.spec().n_x();
    let cov = inverse(&model.step_precision(prev).to_dense())?;
    let mean = match prev {
        None => DVector::from_element(n, model.init_mean()),
        Some(p) => DVector::from_column_slice(p) * model.a_coef(),
    };
    Ok((mean, cov))
}

/// `log ν = log ∫ f(x | x_{t-1}) g(y | x) dx = log N(y; μ, Σ + r I)`.
pub fn dense_log_nu(model: &LinearGaussianSsm, prev: Option<&[f64]>, y: &[f64]) -> Result<f64> {
    let (mean, cov) = dense_transition(model, prev)?;
    let n = mean.len();
    let s = cov + DMatrix::identity(n, n) * model.obs_var();
    mvn_logpdf(&DVector::from_column_slice(y), &mean, &s)
}

/// Mean and covariance of `q(x_t | x_{t-1}, y_t) ∝ f g`.
pub fn dense_step_posterior(
    model: &LinearGaussianSsm,
    prev: Option<&[f64]>,
    y: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mean, cov) = dense_transition(model, prev)?;
    let n = mean.len();
    let prec = inverse(&cov)? + DMatrix::identity(n, n) / model.obs_var();
    let post_cov = inverse(&prec)?;
    let rhs = inverse(&cov)? * &mean + DVector::from_column_slice(y) / model.obs_var();
    Ok((&post_cov * rhs, post_cov))
}

/// `log p(y_{1:T})` from the joint Gaussian of all observations.
///
/// With `x_t = a x_{t-1} + v_t`, `Cov(x_s, x_t) = a^{t-s} Var(x_s)` for
/// `s ≤ t`, and `y_t = x_t + e_t`.
pub fn dense_loglik(model: &LinearGaussianSsm, data: &Dataset) -> Result<f64> {
    let n = model.spec().n_x();
    let t_len = data.len();
    let a = model.a_coef();
    let p0 = inverse(&model.init_precision().to_dense())?;
    let q = inverse(&model.noise_precision().to_dense())?;
    let mut marg = Vec::with_capacity(t_len);
    let mut v = p0;
    for t in 0..t_len {
        if t > 0 {
            v = &v * (a * a) + &q;
        }
        marg.push(v.clone());
    }
    let dim = n * t_len;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut mean = DVector::zeros(dim);
    for t in 0..t_len {
        let m_t = model.init_mean() * a.powi(t as i32);
        mean.rows_mut(t * n, n).fill(m_t);
        for (s, m_s) in marg.iter().enumerate().take(t + 1) {
            let block = m_s * a.powi((t - s) as i32);
            cov.view_mut((t * n, s * n), (n, n)).copy_from(&block);
            cov.view_mut((s * n, t * n), (n, n))
                .copy_from(&block.transpose());
        }
    }
    cov += DMatrix::identity(dim, dim) * model.obs_var();
    let y = DVector::from_column_slice(data.observations());
    mvn_logpdf(&y, &mean, &cov)
}

/// z-tests of `E[(τ/ν) φ(x)] = E_q[φ]` for `φ ∈ {1, x₁, x₁², x₁x₂}` over
/// `reps` independent runs of a proper-weighting procedure on the
/// conditional target `(prev, y)`. Needs `n_x ≥ 2` and `reps ≥ 30`.
pub fn proper_weighting_tests<P>(
    model: &LinearGaussianSsm,
    prev: Option<&[f64]>,
    y: &[f64],
    proc: &P,
    reps: usize,
    seed: u64,
) -> Result<[ZTest; 4]>
where
    P: ProperWeighting<LinearGaussianSsm>,
{
    let n_x = model.n_x();
    if n_x < 2 {
        return Err(NsmcError::InvalidParameter(
            "proper-weighting moments need n_x ≥ 2".into(),
        ));
    }
    let log_nu = dense_log_nu(model, prev, y)?;
    let (mean, cov) = dense_step_posterior(model, prev, y)?;
    let expect = [
        1.0,
        mean[0],
        cov[(0, 0)] + mean[0] * mean[0],
        cov[(0, 1)] + mean[0] * mean[1],
    ];
    let samples: Vec<[f64; 4]> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded(derive_seed(seed, &[r as u64]));
            let (state, log_tau) = proc.simulate(model, prev, y, &mut rng)?;
            let Some(state) = state else {
                return Ok([0.0; 4]);
            };
            let mut x = vec![0.0; n_x];
            proc.propagate(model, prev, y, &state, &mut rng, &mut x)?;
            let w = (log_tau - log_nu).exp();
            Ok([w, w * x[0], w * x[0] * x[0], w * x[0] * x[1]])
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(4);
    for (k, target) in expect.into_iter().enumerate() {
        let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        out.push(unbiasedness_test(&col, target)?);
    }
    Ok(out.try_into().expect("four moments"))
}
