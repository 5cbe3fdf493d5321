//! Experiment configuration files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nsmc::model::ModelSpec;
use nsmc::nested::{
    Adjustment, AuxiliaryDesign, InnerKind, ProperWeightingProcedure, ProposalTarget, StageProposal,
};
use nsmc::smc::Resampling;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Kalman,
    Fapf,
    Bpf,
    Nsmc,
    NsmcGeneral,
}

/// Where the observations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    /// Simulate from the configured model with this seed.
    Seed(u64),
    /// Load a dataset written by `nsmc simulate`.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub kind: MethodKind,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Candidates per stage for the self-nested procedure; defaults to `M`.
    #[serde(rename = "M_inner", default, skip_serializing_if = "Option::is_none")]
    pub m_inner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_proposal: Option<StageProposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampling: Option<Resampling>,
    /// `nsmc-general` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalTarget>,
    /// `nsmc-general` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<Adjustment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub data: DataSource,
    pub methods: Vec<MethodConfig>,
    pub replicates: usize,
    pub seed: u64,
    /// Give every BPF entry `N·M` particles.
    #[serde(default)]
    pub budget_matching: bool,
    pub output_dir: PathBuf,
}

/// A validated method ready to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Kalman,
    Fapf {
        n: usize,
    },
    Bpf {
        n: usize,
        resampling: Resampling,
    },
    Nsmc {
        n: usize,
        proc: ProperWeightingProcedure,
    },
    NsmcGeneral {
        n: usize,
        proc: ProperWeightingProcedure,
        design: AuxiliaryDesign,
    },
}

impl MethodConfig {
    fn invalid(&self, msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("method '{}': {msg}", self.name))
    }

    fn particles(&self) -> CliResult<usize> {
        match self.n {
            Some(n) if n >= 1 => Ok(n),
            Some(_) => Err(self.invalid("N must be at least 1")),
            None => Err(self.invalid("N is required")),
        }
    }

    fn procedure(&self) -> CliResult<ProperWeightingProcedure> {
        let m = self.m.ok_or_else(|| self.invalid("M is required"))?;
        let kind = self
            .inner
            .ok_or_else(|| self.invalid("inner is required"))?;
        let mut proc = ProperWeightingProcedure::new(kind, m);
        if let Some(mi) = self.m_inner {
            if kind != InnerKind::SelfNested {
                return Err(self.invalid("M_inner applies to self-nested only"));
            }
            proc.m_inner = mi;
        }
        if let Some(sp) = self.stage_proposal {
            if kind == InnerKind::Importance {
                return Err(self.invalid("is draws whole states and has no stage proposal"));
            }
            proc.stage_proposal = sp;
        }
        proc.validate().map_err(|e| self.invalid(e))?;
        Ok(proc)
    }

    pub fn resolve(&self, budget_matching: bool) -> CliResult<Method> {
        let nested_only = self.inner.is_some() || self.stage_proposal.is_some();
        let general_only = self.proposal.is_some() || self.adjustment.is_some();
        if general_only && self.kind != MethodKind::NsmcGeneral {
            return Err(self.invalid("proposal/adjustment apply to nsmc-general only"));
        }
        if self.resampling.is_some() && self.kind != MethodKind::Bpf {
            return Err(self.invalid("resampling applies to bpf only"));
        }
        let method = match self.kind {
            MethodKind::Kalman => {
                if self.n.is_some() || self.m.is_some() || nested_only {
                    return Err(self.invalid("kalman takes no N, M or inner"));
                }
                Method::Kalman
            }
            MethodKind::Fapf => {
                if self.m.is_some() || nested_only {
                    return Err(self.invalid("fapf takes no M or inner"));
                }
                Method::Fapf {
                    n: self.particles()?,
                }
            }
            MethodKind::Bpf => {
                if nested_only {
                    return Err(self.invalid("bpf takes no inner procedure"));
                }
                let n = self.particles()?;
                let n = match (budget_matching, self.m) {
                    (true, Some(m)) if m >= 1 => n * m,
                    (true, Some(_)) => return Err(self.invalid("M must be at least 1")),
                    (true, None) => {
                        return Err(self.invalid("budget_matching needs M on bpf entries"))
                    }
                    (false, Some(_)) => return Err(self.invalid("M on bpf needs budget_matching")),
                    (false, None) => n,
                };
                Method::Bpf {
                    n,
                    resampling: self.resampling.unwrap_or_default(),
                }
            }
            MethodKind::Nsmc => Method::Nsmc {
                n: self.particles()?,
                proc: self.procedure()?,
            },
            MethodKind::NsmcGeneral => Method::NsmcGeneral {
                n: self.particles()?,
                proc: self.procedure()?,
                design: AuxiliaryDesign {
                    proposal: self.proposal.unwrap_or(ProposalTarget::Incremental),
                    adjustment: self.adjustment.unwrap_or(Adjustment::Tau),
                },
            },
        };
        Ok(method)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!(
                "{} line {} column {}: {e}",
                origin.display(),
                e.line(),
                e.column()
            ))
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks every precondition before any run starts.
    pub fn validate(&self) -> CliResult<Vec<Method>> {
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        if self.t_len == 0 {
            return Err(CliError::Config("T must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("no methods configured".into()));
        }
        let mut names = HashSet::new();
        for m in &self.methods {
            if m.name.is_empty() || m.name.contains(',') || m.name.contains(':') {
                return Err(CliError::Config(format!(
                    "method name '{}' must be non-empty without ',' or ':'",
                    m.name
                )));
            }
            if !names.insert(m.name.as_str()) {
                return Err(CliError::Config(format!(
                    "duplicate method name '{}'",
                    m.name
                )));
            }
        }
        self.methods
            .iter()
            .map(|m| m.resolve(self.budget_matching))
            .collect()
    }
}
