//! Asymptotic variances of fully adapted SMC and nested SMC for the
//! independent-components model with test function `φ = Σ_d x_{t,d}` and
//! inner proposal equal to the transition.
//!
//! Per component the model is a scalar linear-Gaussian SSM, so with the
//! filter `π_s(x_s)`, predictive `p_{s+1}(x) = p(x_{s+1} | y_{1:s})`
//! (`p_1 = μ`), backward likelihood `β_s(x) = p(y_{s+1:t} | x_s = x)`,
//! `K_{s+1}(x) = g(y_{s+1} | x) β_{s+1}(x)` and
//! `h_s(x) = E_{π_t}[x_t | x_s = x] - E_{π_t}[x_t]`, the constants reduce to
//!
//! ```text
//! B_s = ∫ π_s β_s² / (∫ π_s β_s)²        B̃_s = ∫ p_{s+1} K_{s+1}² / (∫ p_{s+1} K_{s+1})²
//! C_s = ∫ π_s β_s² h_s / (…)²            C̃_s = ∫ p_{s+1} K_{s+1}² h_{s+1} / (…)²
//! A_s = ∫ π_s β_s² h_s² / (…)²           Ã_s = ∫ p_{s+1} K_{s+1}² h_{s+1}² / (…)²
//! A_t = Var_{π_t}(x_t)
//! ```
//!
//! `β_s` and `K_{s+1}` are exponentials of quadratics and `h_s` is affine,
//! so every integral is a Gaussian moment. Centering `h_s` at the posterior
//! mean makes the constants valid for any observation sequence.

use serde::{Deserialize, Serialize};

use crate::error::{NsmcError, Result};
use crate::gauss;
use crate::model::ScalarLgss;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    #[default]
    ClosedForm,
    /// Gauss–Hermite against the Gaussian factor, doubling the order from 8
    /// until the relative change of every ratio is below `rel_tol`.
    GaussHermite { rel_tol: f64, max_order: usize },
}

/// Constants for horizon `t`; vectors are indexed by `s = 0, …, t-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConstants {
    pub t: usize,
    pub a_t: f64,
    pub a: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub b: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub c: Vec<f64>,
    pub c_tilde: Vec<f64>,
    /// `E_{π_t}[x_t]`, the centering of φ.
    pub posterior_mean: f64,
}

/// Scalar Kalman filter moments `(m_s, P_s)` for `s = 1..=t` (index `s-1`).
fn scalar_filter(m: &ScalarLgss, y: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(y.len());
    let (mut mean, mut var) = (m.init_mean, m.init_var);
    for (k, &yk) in y.iter().enumerate() {
        if k > 0 {
            mean *= m.a_coef;
            var = m.a_coef * m.a_coef * var + m.noise_var;
        }
        let gain = var / (var + m.obs_var);
        mean += gain * (yk - mean);
        var *= 1.0 - gain;
        out.push((mean, var));
    }
    out
}

/// Predictive `p(x_s | y_{1:s-1})` for `s = 1..=t` (index `s-1`).
fn scalar_predictive(m: &ScalarLgss, filt: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = vec![(m.init_mean, m.init_var)];
    for &(mean, var) in &filt[..filt.len() - 1] {
        out.push((m.a_coef * mean, m.a_coef * m.a_coef * var + m.noise_var));
    }
    out
}

/// Information form `(J_s, h_s)` of `β_s(x) ∝ exp(-J x²/2 + h x)` for
/// `s = 1..=t` (index `s-1`); `β_t ≡ 1`.
fn backward_information(m: &ScalarLgss, y: &[f64]) -> Vec<(f64, f64)> {
    let t = y.len();
    let mut out = vec![(0.0, 0.0); t];
    for s in (1..t).rev() {
        let (j1, h1) = out[s];
        let jp = j1 + 1.0 / m.obs_var;
        let hp = h1 + y[s] / m.obs_var;
        let den = 1.0 + m.noise_var * jp;
        out[s - 1] = (m.a_coef * m.a_coef * jp / den, m.a_coef * hp / den);
    }
    out
}

/// `E[x_t | x_s = x, y_{s+1:t}] = α_s x + γ_s` for `s = 1..=t` (index `s-1`).
fn conditional_mean_coefficients(m: &ScalarLgss, y: &[f64]) -> Vec<(f64, f64)> {
    let t = y.len();
    (1..=t)
        .map(|s| {
            let (mut alpha, mut gamma, mut var) = (1.0, 0.0, 0.0);
            for &yk in &y[s..t] {
                var = m.a_coef * m.a_coef * var + m.noise_var;
                let gain = var / (var + m.obs_var);
                alpha *= (1.0 - gain) * m.a_coef;
                gamma = (1.0 - gain) * m.a_coef * gamma + gain * yk;
                var *= 1.0 - gain;
            }
            (alpha, gamma)
        })
        .collect()
}

/// One `(Gaussian, weight, affine)` integrand:
/// `∫ N(x; mean, var) W(x)^k (α x + γ)^p dx` with `W = exp(-J x²/2 + h x)`.
#[derive(Debug, Clone, Copy)]
struct Integrand {
    mean: f64,
    var: f64,
    j: f64,
    h: f64,
    alpha: f64,
    gamma: f64,
}

/// `(A, B, C)`-type ratios `∫ p W² ψ^k / (∫ p W)²` for `k = 2, 0, 1`.
fn ratios_closed(f: &Integrand, name: &'static str, s: usize) -> Result<(f64, f64, f64)> {
    let div = || NsmcError::DivergentIntegral { name, s };
    let (l1, _, _) = gauss::tilt(f.mean, f.var, f.j, f.h).ok_or_else(div)?;
    let (l2, mu, v) = gauss::tilt(f.mean, f.var, 2.0 * f.j, 2.0 * f.h).ok_or_else(div)?;
    let b = (l2 - 2.0 * l1).exp();
    let e1 = f.alpha * mu + f.gamma;
    let e2 = f.alpha * f.alpha * v + e1 * e1;
    Ok((b * e2, b, b * e1))
}

/// Physicists' Gauss–Hermite nodes and weights (∫ e^{-z²} f(z) dz).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut z = 0.0f64;
    let half = n.div_ceil(2);
    for i in 0..half {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for k in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / k as f64).sqrt() * p2 - ((k - 1) as f64 / k as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn ratios_gauss_hermite(f: &Integrand, order: usize) -> (f64, f64, f64) {
    let (z, w) = gauss_hermite(order);
    let sd = (2.0 * f.var).sqrt();
    // log W relative to its value at the Gaussian mean, for scale
    let log_w = |x: f64| -0.5 * f.j * x * x + f.h * x;
    let shift = log_w(f.mean);
    let (mut s0, mut s1, mut s2, mut m1) = (0.0, 0.0, 0.0, 0.0);
    for (&zi, &wi) in z.iter().zip(&w) {
        let x = f.mean + sd * zi;
        let lw = log_w(x) - shift;
        let w1 = wi * lw.exp();
        let w2 = wi * (2.0 * lw).exp();
        let psi = f.alpha * x + f.gamma;
        m1 += w1;
        s0 += w2;
        s1 += w2 * psi;
        s2 += w2 * psi * psi;
    }
    // the 1/√π normalizations cancel only partly: (Σ/√π) / (Σ/√π)²
    let norm = std::f64::consts::PI.sqrt();
    let den = m1 * m1;
    (s2 * norm / den, s0 * norm / den, s1 * norm / den)
}

fn ratios(
    f: &Integrand,
    method: QuadratureMethod,
    name: &'static str,
    s: usize,
) -> Result<(f64, f64, f64)> {
    match method {
        QuadratureMethod::ClosedForm => ratios_closed(f, name, s),
        QuadratureMethod::GaussHermite { rel_tol, max_order } => {
            let mut order = 8;
            let mut prev = ratios_gauss_hermite(f, order);
            while order * 2 <= max_order {
                order *= 2;
                let next = ratios_gauss_hermite(f, order);
                let change = [
                    (next.0 - prev.0, next.0),
                    (next.1 - prev.1, next.1),
                    (next.2 - prev.2, next.2),
                ]
                .iter()
                .map(|(d, v)| d.abs() / v.abs().max(1e-300))
                .fold(0.0, f64::max);
                prev = next;
                if change < rel_tol {
                    return Ok(prev);
                }
            }
            Err(NsmcError::DivergentIntegral { name, s })
        }
    }
}

/// Evaluates all constants of the variance formulas at horizon `t` for the
/// scalar model, given the shared observation sequence `y_{1:t}`.
pub fn compute_constants(
    model: &ScalarLgss,
    y: &[f64],
    t: usize,
    method: QuadratureMethod,
) -> Result<VarianceConstants> {
    model.validate()?;
    if t == 0 || y.len() < t {
        return Err(NsmcError::InvalidParameter(format!(
            "horizon t = {t} needs t ≥ 1 and at least t observations (got {})",
            y.len()
        )));
    }
    let y = &y[..t];
    let filt = scalar_filter(model, y);
    let pred = scalar_predictive(model, &filt);
    let info = backward_information(model, y);
    let lin = conditional_mean_coefficients(model, y);
    let (m_t, a_t) = filt[t - 1];

    let mut c = VarianceConstants {
        t,
        a_t,
        a: vec![0.0; t],
        a_tilde: vec![0.0; t],
        b: vec![1.0; t],
        b_tilde: vec![0.0; t],
        c: vec![0.0; t],
        c_tilde: vec![0.0; t],
        posterior_mean: m_t,
    };
    for s in 0..t {
        if s > 0 {
            let (mean, var) = filt[s - 1];
            let (j, h) = info[s - 1];
            let (alpha, gamma) = lin[s - 1];
            let f = Integrand {
                mean,
                var,
                j,
                h,
                alpha,
                gamma: gamma - m_t,
            };
            (c.a[s], c.b[s], c.c[s]) = ratios(&f, method, "B", s)?;
        }
        let (mean, var) = pred[s];
        let (j, h) = info[s];
        let (alpha, gamma) = lin[s];
        let f = Integrand {
            mean,
            var,
            j: j + 1.0 / model.obs_var,
            h: h + y[s] / model.obs_var,
            alpha,
            gamma: gamma - m_t,
        };
        (c.a_tilde[s], c.b_tilde[s], c.c_tilde[s]) = ratios(&f, method, "B~", s)?;
    }
    Ok(c)
}

fn check_horizon(consts: &VarianceConstants, n_x: usize, t: usize) -> Result<()> {
    if t != consts.t {
        return Err(NsmcError::InvalidParameter(format!(
            "constants were computed for t = {}, asked for t = {t}",
            consts.t
        )));
    }
    if n_x == 0 {
        return Err(NsmcError::InvalidParameter("n_x must be at least 1".into()));
    }
    Ok(())
}

/// `Σ^FA_t = n A_t + Σ_{s=1}^{t-1} [n B_s^{n-1} A_s + n(n-1) B_s^{n-2} C_s²]`.
pub fn sigma_fa(consts: &VarianceConstants, n_x: usize, t: usize) -> Result<f64> {
    check_horizon(consts, n_x, t)?;
    let n = n_x as f64;
    let mut sigma = n * consts.a_t;
    for s in 1..t {
        let b = consts.b[s];
        sigma += n * b.powi(n_x as i32 - 1) * consts.a[s];
        if n_x >= 2 {
            sigma += n * (n - 1.0) * b.powi(n_x as i32 - 2) * consts.c[s].powi(2);
        }
    }
    Ok(sigma)
}

/// `Σ^M_t` of nested SMC with `M ≥ 2` inner particles per component.
pub fn sigma_nsmc(consts: &VarianceConstants, n_x: usize, t: usize, m: u64) -> Result<f64> {
    check_horizon(consts, n_x, t)?;
    if m < 2 {
        return Err(NsmcError::Domain(format!(
            "the nested SMC variance formula needs M ≥ 2, got {m}"
        )));
    }
    let n = n_x as f64;
    let mf = m as f64;
    let inv_m = 1.0 / mf;
    let mut sigma = n * consts.a_t;
    for s in 0..t {
        let b = consts.b[s];
        let factor = (1.0 - inv_m) * (1.0 + consts.b_tilde[s] / (b * (mf - 1.0)));
        let a_m = consts.a[s] + inv_m * (consts.a_tilde[s] - consts.a[s]);
        sigma += n * b.powi(n_x as i32 - 1) * a_m * factor.powi(n_x as i32 - 1);
        if n_x >= 2 {
            let c_m = consts.c[s] + inv_m * (consts.c_tilde[s] - consts.c[s]);
            sigma +=
                n * (n - 1.0) * b.powi(n_x as i32 - 2) * c_m * c_m * factor.powi(n_x as i32 - 2);
        }
    }
    Ok(sigma)
}
