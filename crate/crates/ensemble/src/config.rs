//! Campaign configuration: validated parameters plus the TOML file format
//! for process-mode campaigns.
//!
//! ```toml
//! [campaign]
//! round_time = 600.0
//! monitor_time = 30.0
//! rounds = 72
//! units = 6
//! rho = 1.5
//! seed = 7
//! out_dir = "campaign"
//! seeds_dir = "corpus"          # optional initial corpus
//!
//! [target]
//! binary = "build/target"
//! runner = "build/runner"       # instrumented replay runner
//!
//! [callgraph]
//! path = "target.cg"
//! entries = "target.entries"    # optional
//! edge_map = "target.edges"
//!
//! [adapters.afl]
//! kind = "process"
//! cmd = "afl-fuzz -i {in} -o {out} -- {target} @@"
//! seeds_glob = "queue/*"
//! crashes_glob = "crashes/*"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ensemble_core::FuzzerId;
use serde::Deserialize;
use thiserror::Error;

use crate::adapter::{AdapterError, AdapterKind, AdapterSpec};

pub const DEFAULT_ROUND_TIME: f64 = 600.0;
pub const DEFAULT_MONITOR_TIME: f64 = 30.0;
pub const DEFAULT_FUZZ_ROUNDS: u32 = 72;
pub const DEFAULT_UNITS: u32 = 6;
pub const DEFAULT_RHO: f64 = 1.5;
pub const DEFAULT_SEED: u64 = 0;

/// Validated campaign timing and sizing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignParams {
    pub round_time: f64,
    pub monitor_time: f64,
    pub rounds: u32,
    pub units: u32,
    pub rho: f64,
    pub seed: u64,
}

impl Default for CampaignParams {
    fn default() -> Self {
        CampaignParams {
            round_time: DEFAULT_ROUND_TIME,
            monitor_time: DEFAULT_MONITOR_TIME,
            rounds: DEFAULT_FUZZ_ROUNDS,
            units: DEFAULT_UNITS,
            rho: DEFAULT_RHO,
            seed: DEFAULT_SEED,
        }
    }
}

impl CampaignParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.round_time > 0.0) || !self.round_time.is_finite() {
            return Err(ConfigError::Invalid("round_time must be positive".into()));
        }
        if !(self.monitor_time > 0.0) || self.monitor_time >= self.round_time / 2.0 {
            return Err(ConfigError::Invalid(
                "monitor_time must be positive and less than round_time / 2".into(),
            ));
        }
        if self.units < 1 {
            return Err(ConfigError::Invalid("units must be at least 1".into()));
        }
        if self.rounds < 1 {
            return Err(ConfigError::Invalid("rounds must be at least 1".into()));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(ConfigError::Invalid("rho must be positive".into()));
        }
        Ok(())
    }
}

/// A fully resolved process-mode configuration.
#[derive(Debug, Clone)]
pub struct ProcessConfig {
    pub params: CampaignParams,
    pub target: PathBuf,
    pub runner: PathBuf,
    pub callgraph: PathBuf,
    pub entries: Option<PathBuf>,
    pub edge_map: Option<PathBuf>,
    pub seeds_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub adapters: Vec<AdapterSpec>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    campaign: CampaignSection,
    target: TargetSection,
    callgraph: CallgraphSection,
    adapters: BTreeMap<String, AdapterSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CampaignSection {
    round_time: Option<f64>,
    monitor_time: Option<f64>,
    rounds: Option<u32>,
    units: Option<u32>,
    rho: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<String>,
    seeds_dir: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSection {
    binary: String,
    runner: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CallgraphSection {
    path: String,
    entries: Option<String>,
    edge_map: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterSection {
    kind: AdapterKind,
    #[serde(default)]
    cmd: String,
    #[serde(default)]
    seeds_glob: String,
    #[serde(default)]
    crashes_glob: String,
}

/// Load and validate a process-mode config file. Relative paths resolve
/// against the config file's directory.
pub fn load_config(path: &Path) -> Result<ProcessConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ConfigFile = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };

    let params = CampaignParams {
        round_time: file.campaign.round_time.unwrap_or(DEFAULT_ROUND_TIME),
        monitor_time: file.campaign.monitor_time.unwrap_or(DEFAULT_MONITOR_TIME),
        rounds: file.campaign.rounds.unwrap_or(DEFAULT_FUZZ_ROUNDS),
        units: file.campaign.units.unwrap_or(DEFAULT_UNITS),
        rho: file.campaign.rho.unwrap_or(DEFAULT_RHO),
        seed: file.campaign.seed.unwrap_or(DEFAULT_SEED),
    };
    params.validate()?;

    if file.adapters.is_empty() {
        return Err(ConfigError::Invalid("no adapters configured".into()));
    }
    let mut adapters = Vec::new();
    for (name, section) in &file.adapters {
        let spec = AdapterSpec {
            name: FuzzerId::new(name.clone()),
            kind: section.kind,
            cmd: section.cmd.clone(),
            seeds_glob: section.seeds_glob.clone(),
            crashes_glob: section.crashes_glob.clone(),
        };
        spec.validate()?;
        adapters.push(spec);
    }

    Ok(ProcessConfig {
        params,
        target: resolve(&file.target.binary),
        runner: resolve(&file.target.runner),
        callgraph: resolve(&file.callgraph.path),
        entries: file.callgraph.entries.as_deref().map(resolve),
        edge_map: file.callgraph.edge_map.as_deref().map(resolve),
        seeds_dir: file.campaign.seeds_dir.as_deref().map(resolve),
        out_dir: file
            .campaign
            .out_dir
            .as_deref()
            .map(resolve)
            .unwrap_or_else(|| base.join("campaign")),
        adapters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(CampaignParams::default().validate().is_ok());
        let bad = CampaignParams {
            monitor_time: 300.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CampaignParams {
            monitor_time: 299.9,
            ..Default::default()
        };
        assert!(bad.validate().is_ok());
        assert!(CampaignParams {
            units: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(CampaignParams {
            rounds: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
