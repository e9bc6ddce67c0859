//! On-disk JSON schemas for instances and constrained programs.
//!
//! An instance file names the hypothesis and the bandits. Each bandit is
//! given either as raw probabilistic data (`p`, `x`, optional `x0`,
//! transformed through the file's `utility`) or as pre-built rewards and
//! rates (`r`, `q`). Unknown fields are rejected; parse errors cite the
//! file path and position. All state ids in files are zero-based globals.
//!
//! ```json
//! {
//!   "hypothesis": "RN",
//!   "utility": { "kind": "linear", "discount": 0.5 },
//!   "bandits": [
//!     { "p": [[0.0, 0.5], [0.5, 0.0]], "x0": [1.0, 1.0], "x": [[1.0, 1.0], [1.0, 1.0]] },
//!     { "r": [1.0], "q": [[0.0]] }
//!   ]
//! }
//! ```
//!
//! A constraints file supplies the reward types (type 0 first), the lower
//! bounds (one per type after the first), and the start multi-state as one
//! global id per bandit:
//!
//! ```json
//! { "rewards": [[1,0,0],[0,1,0],[0,0,1]], "bounds": [0.3, 0.1], "start": [0, 1, 2] }
//! ```

use crate::constrained::{ConstrainedError, ConstrainedProgram};
use crate::model::{
    build_chain, BanditChain, Hypothesis, Instance, ModelError, RawBandit, UtilitySpec,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Semantic { path: String, message: String },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: {source}")]
    Constrained {
        path: String,
        source: ConstrainedError,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub hypothesis: Hypothesis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityFile>,
    pub bandits: Vec<BanditFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsFile {
    pub rewards: Vec<Vec<f64>>,
    pub bounds: Vec<f64>,
    pub start: Vec<usize>,
}

impl UtilityFile {
    fn resolve(&self, path: &str) -> Result<UtilitySpec, FormatError> {
        match self.kind.as_str() {
            "linear" => {
                if self.lambda.is_some() {
                    return Err(semantic(path, "linear utility takes no lambda"));
                }
                Ok(UtilitySpec::Linear {
                    discount: self.discount,
                })
            }
            "risk_averse" | "risk_seeking" => {
                if self.discount.is_some() {
                    return Err(semantic(path, "exponential utilities take no discount"));
                }
                let lambda = self.lambda.ok_or_else(|| {
                    semantic(path, "exponential utilities require a lambda")
                })?;
                Ok(if self.kind == "risk_averse" {
                    UtilitySpec::RiskAverse { lambda }
                } else {
                    UtilitySpec::RiskSeeking { lambda }
                })
            }
            other => Err(semantic(
                path,
                &format!("unknown utility kind {other:?}; expected \"linear\", \"risk_averse\", or \"risk_seeking\""),
            )),
        }
    }
}

fn semantic(path: &str, message: &str) -> FormatError {
    FormatError::Semantic {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn read_file(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<'a, T: Deserialize<'a>>(text: &'a str, path: &str) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Parse an instance from JSON text; `path` labels error messages.
pub fn parse_instance(text: &str, path: &str) -> Result<Instance, FormatError> {
    let file: InstanceFile = parse_json(text, path)?;
    let utility = file.utility.as_ref().map(|u| u.resolve(path)).transpose()?;
    let mut chains = Vec::with_capacity(file.bandits.len());
    for (idx, bandit) in file.bandits.iter().enumerate() {
        let chain = match (&bandit.p, &bandit.r, &bandit.q) {
            (Some(p), None, None) => {
                let x = bandit.x.clone().ok_or_else(|| {
                    semantic(
                        path,
                        &format!("bandit {idx}: raw form requires x alongside p"),
                    )
                })?;
                let x0 = bandit.x0.clone().unwrap_or_else(|| vec![0.0; p.len()]);
                let raw = RawBandit {
                    p: p.clone(),
                    x0,
                    x,
                };
                let utility = utility.as_ref().ok_or_else(|| {
                    semantic(
                        path,
                        &format!("bandit {idx} is raw data but the file has no utility"),
                    )
                })?;
                raw.check(idx).map_err(|source| FormatError::Model {
                    path: path.to_string(),
                    source,
                })?;
                build_chain(&raw, utility).map_err(|source| FormatError::Model {
                    path: path.to_string(),
                    source,
                })?
            }
            (None, Some(r), Some(q)) => {
                if bandit.x.is_some() || bandit.x0.is_some() {
                    return Err(semantic(
                        path,
                        &format!("bandit {idx}: pre-built form takes no payoffs"),
                    ));
                }
                BanditChain::new(r.clone(), q.clone())
                    .map_err(|source| semantic(path, &format!("bandit {idx}: {source}")))?
            }
            _ => {
                return Err(semantic(
                    path,
                    &format!("bandit {idx}: provide either p/x (raw) or r/q (pre-built)"),
                ))
            }
        };
        chains.push(chain);
    }
    Instance::new(chains, file.hypothesis).map_err(|source| FormatError::Model {
        path: path.to_string(),
        source,
    })
}

pub fn load_instance(path: &Path) -> Result<Instance, FormatError> {
    let text = read_file(path)?;
    parse_instance(&text, &path.display().to_string())
}

/// Parse a constraints file against its instance.
pub fn parse_constraints(
    text: &str,
    path: &str,
    instance: &Instance,
) -> Result<ConstrainedProgram, FormatError> {
    let file: ConstraintsFile = parse_json(text, path)?;
    let start = instance
        .multistate_from_globals(&file.start)
        .map_err(|source| FormatError::Model {
            path: path.to_string(),
            source,
        })?;
    ConstrainedProgram::new(instance.clone(), file.rewards, file.bounds, start).map_err(|source| {
        FormatError::Constrained {
            path: path.to_string(),
            source,
        }
    })
}

pub fn load_constraints(
    path: &Path,
    instance: &Instance,
) -> Result<ConstrainedProgram, FormatError> {
    let text = read_file(path)?;
    parse_constraints(&text, &path.display().to_string(), instance)
}

/// Render an instance in the pre-built on-disk form.
pub fn instance_to_file(instance: &Instance) -> InstanceFile {
    InstanceFile {
        hypothesis: instance.hypothesis(),
        utility: None,
        bandits: instance
            .chains()
            .iter()
            .map(|c| BanditFile {
                r: Some(c.r.clone()),
                q: Some(c.q.clone()),
                ..BanditFile::default()
            })
            .collect(),
    }
}
