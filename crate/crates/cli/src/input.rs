//! File loading with diagnostics that name the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;
use tot_core::{MarginalFamily, Tensor, TotError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("environment variable {name}: {detail}")]
    Env { name: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{command}: {source}")]
    Core {
        command: &'static str,
        #[source]
        source: TotError,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Malformed { .. } | CliError::Env { .. } | CliError::Io { .. } => 1,
            CliError::Core { source, .. } => match source {
                TotError::NonConvergence { .. } | TotError::InnerMinimizer { .. } => 3,
                _ => 2,
            },
        }
    }
}

fn malformed(path: &Path, detail: impl Into<String>) -> CliError {
    CliError::Malformed {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_object(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(malformed(path, "top level must be a JSON object")),
        Err(e) => Err(malformed(path, format!("invalid JSON: {e}"))),
    }
}

fn field<'a>(path: &Path, map: &'a Map<String, Value>, name: &str) -> Result<&'a Value, CliError> {
    map.get(name)
        .ok_or_else(|| malformed(path, format!("missing field `{name}`")))
}

fn count(path: &Path, map: &Map<String, Value>, name: &str) -> Result<usize, CliError> {
    field(path, map, name)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| {
            malformed(
                path,
                format!("field `{name}` must be a nonnegative integer"),
            )
        })
}

fn numbers(path: &Path, value: &Value, name: &str) -> Result<Vec<f64>, CliError> {
    let items = value
        .as_array()
        .ok_or_else(|| malformed(path, format!("field `{name}` must be an array of numbers")))?;
    items
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .ok_or_else(|| malformed(path, format!("field `{name}[{i}]` is not a number")))
        })
        .collect()
}

/// `{"d": int, "n": int, "data": [...]}`.
pub fn load_tensor(path: &Path) -> Result<Tensor, CliError> {
    let map = read_object(path)?;
    let d = count(path, &map, "d")?;
    let n = count(path, &map, "n")?;
    let data = numbers(path, field(path, &map, "data")?, "data")?;
    Tensor::new(d, n, data).map_err(|e| malformed(path, format!("field `data`: {e}")))
}

/// The raw `p` list of a marginal file, without family validation.
pub fn load_measures(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let map = read_object(path)?;
    let p = field(path, &map, "p")?
        .as_array()
        .ok_or_else(|| malformed(path, "field `p` must be an array of arrays"))?;
    p.iter()
        .enumerate()
        .map(|(j, v)| numbers(path, v, &format!("p[{j}]")))
        .collect()
}

/// `{"p": [[...], ...]}`.
pub fn load_marginals(path: &Path) -> Result<MarginalFamily, CliError> {
    let p = load_measures(path)?;
    MarginalFamily::new(p).map_err(|e| malformed(path, format!("field `p`: {e}")))
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const LP_CAP_VAR: &str = "TOT_LP_MAX_VARIABLES";

/// The LP size cap, overridable through the environment.
pub fn lp_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(LP_CAP_VAR) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|e| CliError::Env {
                name: LP_CAP_VAR,
                detail: format!("{v:?} is not a variable count: {e}"),
            }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Env {
            name: LP_CAP_VAR,
            detail: e.to_string(),
        }),
    }
}
