//! Variance-versus-M curves from the asymptotic formulas.

use std::io::Write;
use std::path::Path;

use nsmc::asymptotics::{compute_constants, sigma_fa, sigma_nsmc, QuadratureMethod};
use nsmc::model::{simulate, IndependentSsmSpec, ModelSpec, ScalarLgss};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CURVE_FILE: &str = "asymptotics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Observations {
    /// Simulate a scalar path with this seed.
    Seed(u64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub scalar: ScalarLgss,
    pub n_x: usize,
    /// Horizon `t` of the variance.
    #[serde(rename = "T")]
    pub t: usize,
    pub observations: Observations,
    #[serde(rename = "M")]
    pub m_grid: Vec<u64>,
    #[serde(default)]
    pub quadrature: QuadratureMethod,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            scalar: ScalarLgss {
                init_mean: 0.0,
                init_var: 1.0,
                a_coef: 0.5,
                noise_var: 1.0,
                obs_var: 1.0,
            },
            n_x: 10,
            t: 5,
            observations: Observations::Seed(1),
            m_grid: vec![2, 5, 10, 100, 1_000_000_000],
            quadrature: QuadratureMethod::ClosedForm,
        }
    }
}

impl CurveConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{} line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    fn observations(&self) -> CliResult<Vec<f64>> {
        match &self.observations {
            Observations::Values(y) => Ok(y.clone()),
            Observations::Seed(seed) => {
                let spec = ModelSpec::from(IndependentSsmSpec {
                    n_x: 1,
                    scalar: self.scalar,
                });
                Ok(simulate(&spec, self.t, *seed)?.observations().to_vec())
            }
        }
    }
}

/// One row per grid value: `(M, Σ^M, Σ^FA)`.
pub fn variance_curve(cfg: &CurveConfig) -> CliResult<Vec<(u64, f64, f64)>> {
    if cfg.m_grid.iter().any(|&m| m < 2) {
        return Err(CliError::Config(
            "every M in the grid must be at least 2".into(),
        ));
    }
    let y = cfg.observations()?;
    let consts = compute_constants(&cfg.scalar, &y, cfg.t, cfg.quadrature)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let fa = sigma_fa(&consts, cfg.n_x, cfg.t).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.m_grid
        .iter()
        .map(|&m| Ok((m, sigma_nsmc(&consts, cfg.n_x, cfg.t, m)?, fa)))
        .collect()
}

pub fn write_curve<W: Write>(w: W, rows: &[(u64, f64, f64)]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["M", "sigma_M", "sigma_FA"])?;
    for (m, s, fa) in rows {
        w.write_record([m.to_string(), s.to_string(), fa.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_ends_at_the_limit() {
        let rows = variance_curve(&CurveConfig::default()).unwrap();
        let (m, s, fa) = *rows.last().unwrap();
        assert_eq!(m, 1_000_000_000);
        assert!((s / fa - 1.0).abs() <= 1e-6);
        assert!(rows.iter().all(|r| r.1 >= r.2));
    }

    #[test]
    fn rejects_single_inner_particle() {
        let cfg = CurveConfig {
            m_grid: vec![1, 5],
            ..CurveConfig::default()
        };
        assert!(variance_curve(&cfg).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_curve(&mut buf, &[(2, 3.5, 1.25)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "M,sigma_M,sigma_FA\n2,3.5,1.25\n"
        );
    }
}
