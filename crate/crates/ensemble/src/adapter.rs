//! Adapter specs: the contract by which base fuzzers are launched and
//! harvested.
//!
//! A process adapter names a launch command with `{target}`, `{in}`, and
//! `{out}` placeholders (corpus directory in, findings directory out), plus
//! glob patterns (relative to the instance's output directory) where new
//! seeds and crash inputs appear. Simulated adapters carry no command; their
//! behavior comes from the scenario's fuzzer profiles.

use ensemble_core::FuzzerId;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Process,
    Simulated,
}

/// One base fuzzer's launch-and-harvest contract.
#[derive(Debug, Clone)]
pub struct AdapterSpec {
    pub name: FuzzerId,
    pub kind: AdapterKind,
    /// Launch template; split on whitespace, then placeholders substituted
    /// per token. Required placeholders for process adapters: `{target}`,
    /// `{in}`, `{out}`, each exactly once.
    pub cmd: String,
    /// Where new seeds appear, relative to the instance output directory.
    pub seeds_glob: String,
    /// Where crash inputs appear, relative to the instance output directory.
    pub crashes_glob: String,
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter {name}: placeholder {placeholder} must appear exactly once in cmd (found {count})")]
    BadPlaceholder {
        name: FuzzerId,
        placeholder: &'static str,
        count: usize,
    },
    #[error("adapter {name}: empty cmd")]
    EmptyCmd { name: FuzzerId },
    #[error("adapter {name}: empty glob pattern")]
    EmptyGlob { name: FuzzerId },
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.kind == AdapterKind::Simulated {
            return Ok(());
        }
        if self.cmd.trim().is_empty() {
            return Err(AdapterError::EmptyCmd {
                name: self.name.clone(),
            });
        }
        for placeholder in ["{target}", "{in}", "{out}"] {
            let count = self.cmd.matches(placeholder).count();
            if count != 1 {
                return Err(AdapterError::BadPlaceholder {
                    name: self.name.clone(),
                    placeholder,
                    count,
                });
            }
        }
        if self.seeds_glob.trim().is_empty() || self.crashes_glob.trim().is_empty() {
            return Err(AdapterError::EmptyGlob {
                name: self.name.clone(),
            });
        }
        Ok(())
    }

    /// Substitute placeholders and split into argv tokens. Substitution
    /// happens per token, so paths containing spaces survive.
    pub fn argv(&self, target: &str, input_dir: &str, out_dir: &str) -> Vec<String> {
        self.cmd
            .split_whitespace()
            .map(|tok| {
                tok.replace("{target}", target)
                    .replace("{in}", input_dir)
                    .replace("{out}", out_dir)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(cmd: &str) -> AdapterSpec {
        AdapterSpec {
            name: FuzzerId::new("afl"),
            kind: AdapterKind::Process,
            cmd: cmd.into(),
            seeds_glob: "queue/*".into(),
            crashes_glob: "crashes/*".into(),
        }
    }

    #[test]
    fn placeholders_required_exactly_once() {
        assert!(spec("fuzz {target} -i {in} -o {out}").validate().is_ok());
        assert!(spec("fuzz {target} -i {in}").validate().is_err());
        assert!(spec("fuzz {target} {target} -i {in} -o {out}")
            .validate()
            .is_err());
    }

    #[test]
    fn simulated_needs_no_cmd() {
        let s = AdapterSpec {
            name: FuzzerId::new("sim"),
            kind: AdapterKind::Simulated,
            cmd: String::new(),
            seeds_glob: String::new(),
            crashes_glob: String::new(),
        };
        assert!(s.validate().is_ok());
    }

    #[test]
    fn argv_substitution() {
        let args = spec("sh run.sh {target} {in} {out}").argv("t.bin", "in d", "out");
        assert_eq!(args, vec!["sh", "run.sh", "t.bin", "in d", "out"]);
    }
}
