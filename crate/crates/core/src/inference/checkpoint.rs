//! JSON checkpoints. Parameters are stored as decimal strings in Rust's
//! shortest round-trip notation, so loading reproduces every bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FitConfig, FitReport};
use crate::drift::{DriftSpec, ParamVector};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    spec: DriftSpec,
    params: Vec<String>,
    delta: String,
    config_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: DriftSpec,
    pub params: ParamVector,
    pub delta: f64,
    pub config_digest: String,
}

/// Hex SHA-256 of the configuration's JSON form.
pub fn config_digest(config: &FitConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn save_checkpoint(report: &FitReport, spec: &DriftSpec, config: &FitConfig, path: &Path) -> Result<()> {
    spec.check_params(report.final_params.as_slice())?;
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        params: report.final_params.0.iter().map(|p| p.to_string()).collect(),
        delta: report.final_delta.to_string(),
        config_digest: config_digest(config),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

fn parse(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Checkpoint(format!("{what} {s:?} is not a number")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    file.spec
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid drift spec: {e}")))?;
    let params = file
        .params
        .iter()
        .enumerate()
        .map(|(i, s)| parse(s, &format!("parameter {i}")))
        .collect::<Result<Vec<_>>>()?;
    file.spec
        .check_params(&params)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let delta = parse(&file.delta, "delta")?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Checkpoint(format!("delta {delta} is not positive")));
    }
    Ok(Checkpoint {
        spec: file.spec,
        params: ParamVector(params),
        delta,
        config_digest: file.config_digest,
    })
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &DriftSpec) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.spec != expected {
        return Err(Error::SpecMismatch {
            expected: serde_json::to_string(expected)?,
            found: serde_json::to_string(&ck.spec)?,
        });
    }
    Ok(ck)
}
