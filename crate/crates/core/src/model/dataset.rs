use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::lgss::{IndependentSsmSpec, ModelSpec, ScalarLgss, StssmSpec};
use super::TargetSequence;
use crate::error::{NsmcError, Result};
use crate::gauss;
use crate::rng::{derive_seed, seeded, Purpose};

/// Observations (and optionally the latent path) of one simulated or loaded
/// data set. Matrices are row-major, `T × n_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    t_len: usize,
    n_x: usize,
    observations: Vec<f64>,
    latent: Option<Vec<f64>>,
    seed: u64,
}

/// JSON sidecar describing the model and seed a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model_kind: String,
    pub n_x: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub a_coef: f64,
    pub tau: f64,
    pub lambda: f64,
    pub obs_var: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_var: Option<f64>,
}

impl DatasetMeta {
    pub fn new(model: &ModelSpec, t_len: usize, seed: u64) -> Self {
        match model {
            ModelSpec::Stssm(s) => Self {
                model_kind: "stssm".into(),
                n_x: s.n_x,
                t_len,
                a_coef: s.a_coef,
                tau: s.tau,
                lambda: s.lambda,
                obs_var: s.obs_var,
                seed,
                init_mean: None,
                init_var: None,
            },
            ModelSpec::Independent(s) => Self {
                model_kind: "independent".into(),
                n_x: s.n_x,
                t_len,
                a_coef: s.scalar.a_coef,
                tau: 1.0 / s.scalar.noise_var,
                lambda: 0.0,
                obs_var: s.scalar.obs_var,
                seed,
                init_mean: Some(s.scalar.init_mean),
                init_var: Some(s.scalar.init_var),
            },
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let spec = match self.model_kind.as_str() {
            "stssm" => ModelSpec::Stssm(StssmSpec {
                n_x: self.n_x,
                a_coef: self.a_coef,
                tau: self.tau,
                lambda: self.lambda,
                obs_var: self.obs_var,
            }),
            "independent" => ModelSpec::Independent(IndependentSsmSpec {
                n_x: self.n_x,
                scalar: ScalarLgss {
                    init_mean: self.init_mean.unwrap_or(0.0),
                    init_var: self.init_var.unwrap_or(1.0 / self.tau),
                    a_coef: self.a_coef,
                    noise_var: 1.0 / self.tau,
                    obs_var: self.obs_var,
                },
            }),
            other => {
                return Err(NsmcError::InvalidParameter(format!(
                    "unknown model_kind {other:?}"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Dataset {
    pub fn new(
        n_x: usize,
        observations: Vec<f64>,
        latent: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if n_x == 0 || observations.is_empty() || !observations.len().is_multiple_of(n_x) {
            return Err(NsmcError::Dimension(format!(
                "{} observation values do not form rows of width {n_x}",
                observations.len()
            )));
        }
        if let Some(x) = &latent {
            if x.len() != observations.len() {
                return Err(NsmcError::Dimension(
                    "latent path and observations differ in size".into(),
                ));
            }
        }
        Ok(Self {
            t_len: observations.len() / n_x,
            n_x,
            observations,
            latent,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Observation `y_t`, with `t` 1-based.
    pub fn y(&self, t: usize) -> &[f64] {
        &self.observations[(t - 1) * self.n_x..t * self.n_x]
    }

    pub fn latent(&self, t: usize) -> Option<&[f64]> {
        self.latent
            .as_ref()
            .map(|x| &x[(t - 1) * self.n_x..t * self.n_x])
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// Keeps the first `t_len` steps.
    pub fn truncated(&self, t_len: usize) -> Self {
        let t_len = t_len.min(self.t_len);
        let cut = t_len * self.n_x;
        Self {
            t_len,
            n_x: self.n_x,
            observations: self.observations[..cut].to_vec(),
            latent: self.latent.as_ref().map(|x| x[..cut].to_vec()),
            seed: self.seed,
        }
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.meta.json`; returns the CSV path.
    pub fn save(&self, dir: &Path, name: &str, model: &ModelSpec) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        let mut w = BufWriter::new(File::create(&csv_path)?);
        if self.latent.is_some() {
            writeln!(w, "t,d,y,x")?;
        } else {
            writeln!(w, "t,d,y")?;
        }
        for t in 1..=self.t_len {
            let y = self.y(t);
            for d in 0..self.n_x {
                match self.latent(t) {
                    Some(x) => writeln!(w, "{},{},{},{}", t, d + 1, y[d], x[d])?,
                    None => writeln!(w, "{},{},{}", t, d + 1, y[d])?,
                }
            }
        }
        w.flush()?;
        let meta = DatasetMeta::new(model, self.t_len, self.seed);
        let meta_path = dir.join(format!("{name}.meta.json"));
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(csv_path)
    }

    /// Loads a CSV written by [`Dataset::save`] together with its sidecar.
    pub fn load(csv_path: &Path) -> Result<(Self, DatasetMeta)> {
        let meta_path = sidecar_path(csv_path);
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let headers = rdr.headers()?.clone();
        let has_x = headers.len() == 4 && &headers[3] == "x";
        if &headers[0] != "t" || &headers[1] != "d" || &headers[2] != "y" {
            return Err(NsmcError::InvalidParameter(format!(
                "{}: expected header t,d,y[,x]",
                csv_path.display()
            )));
        }
        let n = meta.n_x * meta.t_len;
        let mut y = vec![f64::NAN; n];
        let mut x = has_x.then(|| vec![f64::NAN; n]);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|e| {
                    NsmcError::InvalidParameter(format!(
                        "{} line {}: {e}",
                        csv_path.display(),
                        line + 2
                    ))
                })
            };
            let t = parse(0)? as usize;
            let d = parse(1)? as usize;
            if t == 0 || d == 0 || t > meta.t_len || d > meta.n_x {
                return Err(NsmcError::Dimension(format!(
                    "{} line {}: index (t={t}, d={d}) out of range",
                    csv_path.display(),
                    line + 2
                )));
            }
            let k = (t - 1) * meta.n_x + (d - 1);
            y[k] = parse(2)?;
            if let Some(x) = x.as_mut() {
                x[k] = parse(3)?;
            }
        }
        if y.iter().any(|v| v.is_nan()) {
            return Err(NsmcError::Dimension(format!(
                "{}: missing (t, d) rows",
                csv_path.display()
            )));
        }
        Ok((Self::new(meta.n_x, y, x, meta.seed)?, meta))
    }
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

/// Draws latent states and observations from the generative model.
/// The output is a pure function of `(model, t_len, seed)`.
pub fn simulate(model: &ModelSpec, t_len: usize, seed: u64) -> Result<Dataset> {
    if t_len == 0 {
        return Err(NsmcError::InvalidParameter("T must be at least 1".into()));
    }
    let lgss = model.build()?;
    let n_x = lgss.n_x();
    let mut rng = seeded(derive_seed(seed, &[Purpose::Simulate as u64]));
    let sd = lgss.obs_var().sqrt();
    let mut xs = vec![0.0; t_len * n_x];
    let mut ys = vec![0.0; t_len * n_x];
    for t in 0..t_len {
        let (done, rest) = xs.split_at_mut(t * n_x);
        let prev = (t > 0).then(|| &done[(t - 1) * n_x..]);
        let x = &mut rest[..n_x];
        lgss.sample_transition(prev, &mut rng, x);
        let y = &mut ys[t * n_x..(t + 1) * n_x];
        match model {
            ModelSpec::Stssm(_) => {
                for (yd, &xd) in y.iter_mut().zip(x.iter()) {
                    *yd = xd + sd * gauss::std_normal(&mut rng);
                }
            }
            // replicated observation: every component sees y_{t,1}
            ModelSpec::Independent(_) => {
                let y1 = x[0] + sd * gauss::std_normal(&mut rng);
                y.fill(y1);
            }
        }
    }
    Dataset::new(n_x, ys, Some(xs), seed)
}
