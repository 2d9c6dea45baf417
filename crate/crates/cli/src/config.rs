//! Run configuration: a JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureConfig {
    /// Built-in task name or task JSON file.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Extra captures with fresh sensor noise.
    #[arg(long)]
    pub replays: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Object placements `[x, y]` or `[x, y, yaw]`; file only.
    #[arg(skip)]
    pub placement: Option<Vec<Vec<f64>>>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[arg(long)]
    pub task: Option<String>,
    /// Directory of source demonstrations.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Generation spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// Generation-spec style grid file; the task's evaluation grid otherwise.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Heatmap CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional PPM rendering of the heatmap.
    #[arg(long)]
    pub ppm: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// ADR spec JSON.
    #[arg(long, conflicts_with = "obstacle")]
    pub adr: Option<PathBuf>,
    /// Obstacle spec JSON.
    #[arg(long)]
    pub obstacle: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Overlays the non-null flag values onto the config file's values.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Path>) -> Result<T> {
    let mut base = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<Value>(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let Value::Object(map) = &mut base else {
        anyhow::bail!("config file must hold a JSON object");
    };
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).context("invalid configuration")
}

/// SHA-256 of the resolved configuration and any referenced input files.
pub fn config_hash<T: Serialize>(config: &T, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    for p in inputs {
        h.update(std::fs::read(p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
