#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nsmc::asymptotics::VarianceConstants;
use nsmc::diagnostics::mean_stderr;
use nsmc::gauss::log_normal;
use nsmc::model::{IndependentSsmSpec, LinearGaussianSsm, ModelSpec, ScalarLgss, StssmSpec};
use nsmc::rng::{derive_seed, seeded};
use rand::Rng;
use rayon::prelude::*;

pub fn random_stssm<R: Rng>(rng: &mut R, max_n_x: usize) -> LinearGaussianSsm {
    let spec = StssmSpec {
        n_x: rng.random_range(1..=max_n_x),
        a_coef: rng.random_range(-0.9..0.9),
        tau: rng.random_range(0.3..3.0),
        lambda: rng.random_range(0.0..2.0),
        obs_var: rng.random_range(0.05..2.0),
    };
    ModelSpec::from(spec).build().unwrap()
}

pub fn random_independent<R: Rng>(rng: &mut R, max_n_x: usize) -> LinearGaussianSsm {
    let scalar = ScalarLgss {
        init_mean: rng.random_range(-1.0..1.0),
        init_var: rng.random_range(0.2..3.0),
        a_coef: rng.random_range(-0.9..0.9),
        noise_var: rng.random_range(0.2..3.0),
        obs_var: rng.random_range(0.05..2.0),
    };
    let n_x = rng.random_range(1..=max_n_x);
    ModelSpec::from(IndependentSsmSpec { n_x, scalar })
        .build()
        .unwrap()
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Two-sided Kolmogorov–Smirnov statistic of a sample against a cdf.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value of the KS statistic at level 0.001.
pub fn ks_critical(n: usize) -> f64 {
    1.949 / (n as f64).sqrt()
}

/// A Gaussian vector with dense mean and covariance, supporting
/// conditioning and marginalization by index sets.
#[derive(Debug, Clone)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DenseGaussian {
    pub fn select(&self, idx: &[usize]) -> DenseGaussian {
        let mean = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]);
        DenseGaussian { mean, cov }
    }

    /// Law of the `keep` coordinates given `given = values`.
    pub fn condition(&self, keep: &[usize], given: &[usize], values: &[f64]) -> DenseGaussian {
        if given.is_empty() {
            return self.select(keep);
        }
        let skk = DMatrix::from_fn(keep.len(), keep.len(), |r, c| self.cov[(keep[r], keep[c])]);
        let skg = DMatrix::from_fn(keep.len(), given.len(), |r, c| {
            self.cov[(keep[r], given[c])]
        });
        let sgg = DMatrix::from_fn(given.len(), given.len(), |r, c| {
            self.cov[(given[r], given[c])]
        });
        let sgg_inv = sgg.try_inverse().expect("conditioning block invertible");
        let diff = DVector::from_iterator(
            given.len(),
            given.iter().zip(values).map(|(&i, &v)| v - self.mean[i]),
        );
        let mk = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.mean[i]));
        let mean = mk + &skg * &sgg_inv * diff;
        let cov = &skk - &skg * &sgg_inv * skg.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        DenseGaussian { mean, cov }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        nsmc::oracle::mvn_logpdf(&DVector::from_column_slice(x), &self.mean, &self.cov).unwrap()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let l = self.cov.clone().cholesky().expect("positive definite").l();
        let z = DVector::from_iterator(
            self.mean.len(),
            (0..self.mean.len()).map(|_| nsmc::gauss::std_normal(rng)),
        );
        (&self.mean + l * z).iter().copied().collect()
    }
}

/// Joint law of `(x_1..x_t, y_1..y_t)` of a scalar linear-Gaussian model;
/// `x_k` at index `k-1`, `y_k` at index `t+k-1`.
pub fn scalar_joint(m: &ScalarLgss, t: usize) -> DenseGaussian {
    let mut marg = vec![m.init_var; t];
    for k in 1..t {
        marg[k] = m.a_coef * m.a_coef * marg[k - 1] + m.noise_var;
    }
    let cov_x = |j: usize, k: usize| {
        let (lo, hi) = (j.min(k), j.max(k));
        m.a_coef.powi((hi - lo) as i32) * marg[lo]
    };
    let cov = DMatrix::from_fn(2 * t, 2 * t, |r, c| {
        let base = cov_x(r % t, c % t);
        if r >= t && r == c {
            base + m.obs_var
        } else {
            base
        }
    });
    let mean = DVector::from_fn(2 * t, |r, _| m.init_mean * m.a_coef.powi((r % t) as i32));
    DenseGaussian { mean, cov }
}

/// z-scores of the four proper-weighting moment checks.
pub fn proper_weighting_z<P>(
    model: &LinearGaussianSsm,
    prev: Option<&[f64]>,
    y: &[f64],
    proc: &P,
    reps: usize,
    seed: u64,
) -> [f64; 4]
where
    P: nsmc::nested::ProperWeighting<LinearGaussianSsm>,
{
    nsmc::oracle::proper_weighting_tests(model, prev, y, proc, reps, seed)
        .unwrap()
        .map(|z| z.z)
}

/// Monte Carlo estimates (mean, stderr) of every constant from dense
/// Gaussian conditionals of the joint law of `(x_{1:t}, y_{1:t})`.
pub struct McConstants {
    pub a: Vec<(f64, f64)>,
    pub a_tilde: Vec<(f64, f64)>,
    pub b: Vec<(f64, f64)>,
    pub b_tilde: Vec<(f64, f64)>,
    pub c: Vec<(f64, f64)>,
    pub c_tilde: Vec<(f64, f64)>,
    pub a_t: f64,
}

fn x_idx(k: usize) -> Vec<usize> {
    (0..k).collect()
}

fn y_idx(t: usize, k: usize) -> Vec<usize> {
    (t..t + k).collect()
}

pub fn mc_constants(m: &ScalarLgss, y: &[f64], t: usize, draws: usize, seed: u64) -> McConstants {
    let joint = scalar_joint(m, t);
    let all_y = y_idx(t, t);
    let post = joint.condition(&x_idx(t), &all_y, &y[..t]);
    let post_xt = post.select(&[t - 1]);
    let m_t = post_xt.mean[0];
    // E[x_t | x_{1:k}, y_{1:t}] - m_t
    let h = |xs: &[f64]| -> f64 {
        let k = xs.len();
        if k == t {
            xs[t - 1] - m_t
        } else {
            post.condition(&[t - 1], &x_idx(k), xs).mean[0] - m_t
        }
    };
    let pi_t = |k: usize| post.select(&x_idx(k));
    let pi_s = |s: usize| joint.condition(&x_idx(s), &y_idx(t, s), &y[..s]);

    let summarize = |vals: Vec<[f64; 3]>| -> [(f64, f64); 3] {
        let mut out = [(0.0, 0.0); 3];
        for k in 0..3 {
            let col: Vec<f64> = vals.iter().map(|v| v[k]).collect();
            out[k] = mean_stderr(&col);
        }
        out
    };
    let run = |s: usize, tilde: bool, salt: u64| -> [(f64, f64); 3] {
        let filt: Option<DenseGaussian> = (s > 0).then(|| pi_s(s));
        let target = pi_t(if tilde { s + 1 } else { s });
        let vals: Vec<[f64; 3]> = (0..draws)
            .into_par_iter()
            .map(|i| {
                let mut rng = seeded(derive_seed(seed, &[s as u64, salt, i as u64]));
                let mut xs = filt.as_ref().map_or(Vec::new(), |f| f.sample(&mut rng));
                let mut log_den = filt.as_ref().map_or(0.0, |f| f.log_pdf(&xs));
                if tilde {
                    let (mean, var) = match xs.last() {
                        None => (m.init_mean, m.init_var),
                        Some(&prev) => (m.a_coef * prev, m.noise_var),
                    };
                    let x = nsmc::gauss::normal(&mut rng, mean, var);
                    log_den += log_normal(x, mean, var);
                    xs.push(x);
                }
                let rho2 = (2.0 * (target.log_pdf(&xs) - log_den)).exp();
                let hv = h(&xs);
                [rho2 * hv * hv, rho2, rho2 * hv]
            })
            .collect();
        summarize(vals)
    };

    let mut out = McConstants {
        a: vec![(0.0, 0.0); t],
        a_tilde: vec![(0.0, 0.0); t],
        b: vec![(1.0, 0.0); t],
        b_tilde: vec![(0.0, 0.0); t],
        c: vec![(0.0, 0.0); t],
        c_tilde: vec![(0.0, 0.0); t],
        a_t: post_xt.cov[(0, 0)],
    };
    for s in 0..t {
        if s > 0 {
            [out.a[s], out.b[s], out.c[s]] = run(s, false, 0);
        }
        [out.a_tilde[s], out.b_tilde[s], out.c_tilde[s]] = run(s, true, 1);
    }
    out
}

/// Largest `|z|` of the exact constants against the Monte Carlo estimates.
pub fn check_against_mc(exact: &VarianceConstants, mc: &McConstants) -> f64 {
    assert!((exact.a_t - mc.a_t).abs() < 1e-10, "A_t");
    type Group<'a> = (&'a str, &'a [f64], &'a [(f64, f64)]);
    let groups: [Group; 6] = [
        ("A", &exact.a, &mc.a),
        ("A~", &exact.a_tilde, &mc.a_tilde),
        ("B", &exact.b, &mc.b),
        ("B~", &exact.b_tilde, &mc.b_tilde),
        ("C", &exact.c, &mc.c),
        ("C~", &exact.c_tilde, &mc.c_tilde),
    ];
    let mut worst = 0.0f64;
    for (name, e, m) in groups {
        for s in 0..exact.t {
            let (mean, se) = m[s];
            if se == 0.0 {
                assert_eq!(e[s], mean, "{name}_{s}");
            } else {
                worst = worst.max(((e[s] - mean) / se).abs());
            }
        }
    }
    worst
}
