//! Synthetic targets for deterministic simulation.
//!
//! A scenario describes a program as *regions* of coverage edges guarded by
//! gates (format checks, loop constraints, magic values, solver-hard
//! branches). A region with a prerequisite only becomes discoverable once
//! every edge of the prerequisite region is covered by the corpus a fuzzer
//! instance can see, which reproduces the hand-off dynamic where one base
//! fuzzer's output unlocks another's specialty.
//!
//! Each fuzzer profile gives a per-gate discovery rate (expected
//! first-discovery time of an edge is exponential in it), an optional churn
//! rate producing seeds that re-cover already-known edges of its regions,
//! and optional scripted productions at fixed virtual times for exact
//! fixtures.
//!
//! The scenario embeds a call graph and an edge-ownership map consistent
//! with the gates, so deep edges come out of the ordinary depth analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ensemble_core::callgraph::{self, CallGraph, DepthMap};
use ensemble_core::{EdgeId, FuzzerId};
use serde::Deserialize;
use thiserror::Error;

use crate::config::CampaignParams;
#[cfg(test)]
use crate::config::{DEFAULT_MONITOR_TIME, DEFAULT_ROUND_TIME};

/// One group of edges behind a common gate.
#[derive(Debug, Clone)]
pub struct Region {
    pub id: String,
    /// Gate label, matched against profile rate keys (e.g. FORMAT, MAGIC,
    /// LOOP, SOLVER).
    pub gate: String,
    /// The function owning this region's edges.
    pub owner: String,
    pub edges: Vec<EdgeId>,
    /// Region that must be fully covered before this one opens.
    pub prereq: Option<String>,
}

/// Scripted production: at `at` seconds into round `round`, emit one seed
/// covering `edges` (and crash if asked).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub round: u32,
    pub at: f64,
    pub edges: Vec<u64>,
    #[serde(default)]
    pub crash: bool,
}

/// One base fuzzer's behavior model.
#[derive(Debug, Clone, Default)]
pub struct Profile {
    /// Gate label → discovery rate per edge per unit-second.
    pub rates: BTreeMap<String, f64>,
    /// Rate of re-coverage seeds over this fuzzer's open capable regions.
    pub churn: f64,
    pub scripted: Vec<ScriptedEvent>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub regions: Vec<Region>,
    pub callgraph: CallGraph,
    pub edge_owner: BTreeMap<EdgeId, String>,
    pub profiles: BTreeMap<FuzzerId, Profile>,
    /// Edge → crash probability once covered by a produced seed.
    pub crash_sites: BTreeMap<EdgeId, f64>,
    /// Campaign parameter defaults bundled with the scenario.
    pub campaign: Option<ScenarioCampaignDefaults>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCampaignDefaults {
    pub units: Option<u32>,
    pub rounds: Option<u32>,
    pub round_time: Option<f64>,
    pub monitor_time: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario call graph: {0}")]
    CallGraph(#[from] callgraph::CallGraphError),
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.regions.is_empty() {
            return Err(ScenarioError::Invalid("no regions".into()));
        }
        let mut ids = BTreeSet::new();
        let mut edges_seen: BTreeSet<EdgeId> = BTreeSet::new();
        for region in &self.regions {
            if !ids.insert(region.id.clone()) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate region id {}",
                    region.id
                )));
            }
            if region.edges.is_empty() {
                return Err(ScenarioError::Invalid(format!(
                    "region {} has no edges",
                    region.id
                )));
            }
            for &e in &region.edges {
                if !edges_seen.insert(e) {
                    return Err(ScenarioError::Invalid(format!(
                        "edge {e} appears in more than one region"
                    )));
                }
            }
        }
        for region in &self.regions {
            if let Some(p) = &region.prereq {
                if !ids.contains(p) {
                    return Err(ScenarioError::Invalid(format!(
                        "region {} has unknown prereq {p}",
                        region.id
                    )));
                }
            }
        }
        // Prereq chains must be acyclic.
        for region in &self.regions {
            let mut seen = BTreeSet::new();
            let mut cur = Some(region.id.as_str());
            while let Some(id) = cur {
                if !seen.insert(id) {
                    return Err(ScenarioError::Invalid(format!(
                        "prereq cycle through region {id}"
                    )));
                }
                cur = self
                    .region(id)
                    .and_then(|r| r.prereq.as_deref());
            }
        }
        let functions: BTreeSet<&str> = self.callgraph.functions().collect();
        for region in &self.regions {
            if !functions.contains(region.owner.as_str()) {
                return Err(ScenarioError::Invalid(format!(
                    "region {} owner {} missing from call graph",
                    region.id, region.owner
                )));
            }
        }
        for (&edge, owner) in &self.edge_owner {
            if !edges_seen.contains(&edge) {
                return Err(ScenarioError::Invalid(format!(
                    "edge map names edge {edge} outside any region"
                )));
            }
            if !functions.contains(owner.as_str()) {
                return Err(ScenarioError::Invalid(format!(
                    "edge map owner {owner} missing from call graph"
                )));
            }
        }
        for (&edge, &prob) in &self.crash_sites {
            if !edges_seen.contains(&edge) {
                return Err(ScenarioError::Invalid(format!(
                    "crash site {edge} is not a scenario edge"
                )));
            }
            if !(0.0..=1.0).contains(&prob) {
                return Err(ScenarioError::Invalid(format!(
                    "crash probability {prob} out of range"
                )));
            }
        }
        if self.profiles.is_empty() {
            return Err(ScenarioError::Invalid("no fuzzer profiles".into()));
        }
        for (fuzzer, profile) in &self.profiles {
            for (gate, &rate) in &profile.rates {
                if !(rate >= 0.0) || !rate.is_finite() {
                    return Err(ScenarioError::Invalid(format!(
                        "profile {fuzzer}: bad rate for gate {gate}"
                    )));
                }
            }
            if !(profile.churn >= 0.0) || !profile.churn.is_finite() {
                return Err(ScenarioError::Invalid(format!(
                    "profile {fuzzer}: bad churn rate"
                )));
            }
            for ev in &profile.scripted {
                if ev.round == 0 {
                    return Err(ScenarioError::Invalid(format!(
                        "profile {fuzzer}: scripted rounds are 1-based"
                    )));
                }
                for &e in &ev.edges {
                    if !edges_seen.contains(&EdgeId(e)) {
                        return Err(ScenarioError::Invalid(format!(
                            "profile {fuzzer}: scripted edge {e} is not a scenario edge"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn fuzzers(&self) -> Vec<FuzzerId> {
        self.profiles.keys().cloned().collect()
    }

    /// All edges of the region's prerequisite chain (excluding the region
    /// itself), nearest ancestor first.
    pub fn chain_edges(&self, region: &Region) -> Vec<EdgeId> {
        let mut out = Vec::new();
        let mut cur = region.prereq.as_deref();
        while let Some(id) = cur {
            let r = self.region(id).expect("validated prereq");
            out.extend(r.edges.iter().copied());
            cur = r.prereq.as_deref();
        }
        out
    }

    pub fn depths(&self, rho: f64) -> Result<DepthMap, ScenarioError> {
        Ok(callgraph::compute_depths(&self.callgraph, rho)?)
    }

    /// Deep edge ids under the scenario's call graph and edge map.
    pub fn deep_edges(&self, rho: f64) -> Result<BTreeSet<EdgeId>, ScenarioError> {
        let depths = self.depths(rho)?;
        Ok(callgraph::deep_edges(&depths, &self.edge_owner))
    }

    /// Campaign parameters: scenario defaults overlaid on `base`.
    pub fn campaign_params(&self, base: CampaignParams) -> CampaignParams {
        let mut params = base;
        if let Some(d) = &self.campaign {
            if let Some(u) = d.units {
                params.units = u;
            }
            if let Some(r) = d.rounds {
                params.rounds = r;
            }
            if let Some(rt) = d.round_time {
                params.round_time = rt;
            }
            if let Some(mt) = d.monitor_time {
                params.monitor_time = mt;
            }
            if let Some(rho) = d.rho {
                params.rho = rho;
            }
        }
        params
    }
}

// ---------------------------------------------------------------------------
// TOML schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    #[serde(default)]
    campaign: Option<ScenarioCampaignDefaults>,
    #[serde(rename = "regions")]
    regions: Vec<RegionSection>,
    callgraph: CallgraphSection,
    #[serde(default)]
    crash_sites: Vec<CrashSiteSection>,
    profiles: BTreeMap<String, ProfileSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSection {
    id: String,
    gate: String,
    owner: String,
    edges: Vec<u64>,
    #[serde(default)]
    prereq: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CallgraphSection {
    calls: Vec<String>,
    #[serde(default)]
    entries: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrashSiteSection {
    edge: u64,
    prob: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    #[serde(default)]
    rates: BTreeMap<String, f64>,
    #[serde(default)]
    churn: f64,
    #[serde(default)]
    scripted: Vec<ScriptedEvent>,
}

/// Parse a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text)?;
    let mut graph = CallGraph::new();
    for (i, line) in file.callgraph.calls.iter().enumerate() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(f), None, _) => graph.add_function(f),
            (Some(a), Some(b), None) => graph.add_call(a, b),
            _ => {
                return Err(ScenarioError::Invalid(format!(
                    "callgraph call entry {i} must be `caller callee`"
                )))
            }
        }
    }
    for e in &file.callgraph.entries {
        graph.add_entry(e.clone());
    }
    let regions: Vec<Region> = file
        .regions
        .into_iter()
        .map(|r| Region {
            id: r.id,
            gate: r.gate,
            owner: r.owner,
            edges: r.edges.into_iter().map(EdgeId).collect(),
            prereq: r.prereq,
        })
        .collect();
    let edge_owner: BTreeMap<EdgeId, String> = regions
        .iter()
        .flat_map(|r| r.edges.iter().map(|&e| (e, r.owner.clone())))
        .collect();
    let scenario = Scenario {
        seed: file.seed,
        regions,
        callgraph: graph,
        edge_owner,
        profiles: file
            .profiles
            .into_iter()
            .map(|(name, p)| {
                (
                    FuzzerId::new(name),
                    Profile {
                        rates: p.rates,
                        churn: p.churn,
                        scripted: p.scripted,
                    },
                )
            })
            .collect(),
        crash_sites: file
            .crash_sites
            .into_iter()
            .map(|c| (EdgeId(c.edge), c.prob))
            .collect(),
        campaign: file.campaign,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Load a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Parameters for the scenario generator: a linear chain of gated region
/// stages plus fuzzer capability profiles over the gate labels.
#[derive(Debug, Clone)]
pub struct ScenarioParams {
    /// Stages in prerequisite order: (gate label, number of regions,
    /// edges per region, discovery-rate hint ignored here).
    pub stages: Vec<StageParams>,
    /// Fuzzer name → (gate label → rate, churn).
    pub fuzzers: Vec<FuzzerParams>,
    /// Crash probability at the final edge of the last stage, if any.
    pub final_crash_prob: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageParams {
    pub gate: String,
    pub regions: u32,
    pub edges_per_region: u32,
}

#[derive(Debug, Clone)]
pub struct FuzzerParams {
    pub name: String,
    pub rates: BTreeMap<String, f64>,
    pub churn: f64,
}

/// Build a deterministic chained-stage scenario.
///
/// Regions form one linear prerequisite chain across all stages, so every
/// stage hands off to the next: a fuzzer capable only of a later gate can
/// do nothing until the earlier stage is fully covered by somebody's
/// corpus. The call graph is the matching function chain, which makes the
/// tail regions deep under the usual threshold.
pub fn gen_scenario(params: &ScenarioParams, seed: u64) -> Result<Scenario, ScenarioError> {
    if params.stages.is_empty() {
        return Err(ScenarioError::Invalid("generator needs stages".into()));
    }
    if params.fuzzers.is_empty() {
        return Err(ScenarioError::Invalid("generator needs fuzzers".into()));
    }
    for s in &params.stages {
        if s.regions == 0 || s.edges_per_region == 0 {
            return Err(ScenarioError::Invalid(
                "stages need at least one region and one edge".into(),
            ));
        }
    }
    let mut regions = Vec::new();
    let mut graph = CallGraph::new();
    graph.add_entry("main");
    let mut prev_fn = "main".to_string();
    let mut prev_region: Option<String> = None;
    let mut next_edge = 1u64;
    for stage in &params.stages {
        for idx in 0..stage.regions {
            let id = format!("{}{}", stage.gate.to_ascii_lowercase(), idx);
            let owner = format!("fn_{id}");
            graph.add_call(prev_fn.clone(), owner.clone());
            let edges: Vec<EdgeId> = (0..stage.edges_per_region)
                .map(|_| {
                    let e = EdgeId(next_edge);
                    next_edge += 1;
                    e
                })
                .collect();
            regions.push(Region {
                id: id.clone(),
                gate: stage.gate.clone(),
                owner: owner.clone(),
                edges,
                prereq: prev_region.clone(),
            });
            prev_fn = owner;
            prev_region = Some(id);
        }
    }
    let edge_owner: BTreeMap<EdgeId, String> = regions
        .iter()
        .flat_map(|r| r.edges.iter().map(|&e| (e, r.owner.clone())))
        .collect();
    let mut crash_sites = BTreeMap::new();
    if let Some(prob) = params.final_crash_prob {
        let last = regions.last().and_then(|r| r.edges.last()).copied();
        if let Some(edge) = last {
            crash_sites.insert(edge, prob);
        }
    }
    let scenario = Scenario {
        seed,
        regions,
        callgraph: graph,
        edge_owner,
        profiles: params
            .fuzzers
            .iter()
            .map(|f| {
                (
                    FuzzerId::new(f.name.clone()),
                    Profile {
                        rates: f.rates.clone(),
                        churn: f.churn,
                        scripted: Vec::new(),
                    },
                )
            })
            .collect(),
        crash_sites,
        campaign: None,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// The standard two-specialist hand-off used by the comparison studies:
/// a FORMAT stage only `gen` can work, then a SOLVER stage only `sym` can
/// work, plus two weak generalists, with a certain crash at the final edge.
pub fn gen_handoff(seed: u64) -> Scenario {
    let params = ScenarioParams {
        stages: vec![
            StageParams {
                gate: "FORMAT".into(),
                regions: 3,
                edges_per_region: 6,
            },
            StageParams {
                gate: "SOLVER".into(),
                regions: 7,
                edges_per_region: 8,
            },
        ],
        fuzzers: vec![
            FuzzerParams {
                name: "gen".into(),
                rates: [("FORMAT".to_string(), 0.002)].into_iter().collect(),
                churn: 0.15,
            },
            FuzzerParams {
                name: "sym".into(),
                rates: [("SOLVER".to_string(), 0.002)].into_iter().collect(),
                churn: 0.15,
            },
            FuzzerParams {
                name: "mut1".into(),
                rates: [
                    ("FORMAT".to_string(), 0.0003),
                    ("SOLVER".to_string(), 0.0003),
                ]
                .into_iter()
                .collect(),
                churn: 0.1,
            },
            FuzzerParams {
                name: "mut2".into(),
                rates: [("FORMAT".to_string(), 0.0001)].into_iter().collect(),
                churn: 0.1,
            },
            FuzzerParams {
                name: "mut3".into(),
                rates: [("SOLVER".to_string(), 0.0001)].into_iter().collect(),
                churn: 0.1,
            },
            FuzzerParams {
                name: "mut4".into(),
                rates: [("FORMAT".to_string(), 0.00005)].into_iter().collect(),
                churn: 0.1,
            },
        ],
        final_crash_prob: Some(1.0),
    };
    gen_scenario(&params, seed).expect("hand-off parameters are consistent")
}

/// The deep-grind comparison scenario: a broad shallow NOISE stage that
/// saturates quickly, then a long DIG chain only `digger` can work, slowly,
/// with the crash at its deep tail. While grinding, digger's churn keeps
/// re-covering the deep and rarely-hit DIG edges — qualitatively beneficial,
/// but invisible to path-novelty-only evaluation, which therefore keeps
/// stopping the digger halfway through every round.
pub fn gen_deepsite(seed: u64) -> Scenario {
    let params = ScenarioParams {
        stages: vec![
            StageParams {
                gate: "NOISE".into(),
                regions: 4,
                edges_per_region: 10,
            },
            StageParams {
                gate: "DIG".into(),
                regions: 3,
                edges_per_region: 2,
            },
        ],
        fuzzers: vec![
            FuzzerParams {
                name: "breadth".into(),
                rates: [("NOISE".to_string(), 0.002)].into_iter().collect(),
                churn: 0.1,
            },
            FuzzerParams {
                name: "digger".into(),
                rates: [("DIG".to_string(), 0.0008)].into_iter().collect(),
                churn: 0.2,
            },
            FuzzerParams {
                name: "pathy".into(),
                rates: [("NOISE".to_string(), 0.004)].into_iter().collect(),
                churn: 0.1,
            },
        ],
        final_crash_prob: Some(1.0),
    };
    gen_scenario(&params, seed).expect("deep-site parameters are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let a = gen_handoff(42);
        let b = gen_handoff(42);
        assert_eq!(a.regions.len(), b.regions.len());
        for (ra, rb) in a.regions.iter().zip(&b.regions) {
            assert_eq!(ra.id, rb.id);
            assert_eq!(ra.edges, rb.edges);
            assert_eq!(ra.prereq, rb.prereq);
        }
        assert_eq!(a.crash_sites, b.crash_sites);
    }

    #[test]
    fn handoff_has_disjoint_capabilities_and_chain() {
        let s = gen_handoff(1);
        // SOLVER regions sit behind the FORMAT chain.
        let solver0 = s.region("solver0").unwrap();
        assert_eq!(solver0.prereq.as_deref(), Some("format2"));
        let gen = &s.profiles[&FuzzerId::new("gen")];
        let sym = &s.profiles[&FuzzerId::new("sym")];
        assert!(gen.rates.contains_key("FORMAT") && !gen.rates.contains_key("SOLVER"));
        assert!(sym.rates.contains_key("SOLVER") && !sym.rates.contains_key("FORMAT"));
        // Tail of the chain is deep.
        let deep = s.deep_edges(1.5).unwrap();
        let last_region = s.regions.last().unwrap();
        for e in &last_region.edges {
            assert!(deep.contains(e));
        }
        let first_region = &s.regions[0];
        for e in &first_region.edges {
            assert!(!deep.contains(e));
        }
    }

    #[test]
    fn generator_rejects_inconsistent_params() {
        let bad = ScenarioParams {
            stages: vec![],
            fuzzers: vec![],
            final_crash_prob: None,
        };
        assert!(gen_scenario(&bad, 1).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
seed = 9

[campaign]
units = 4
rounds = 12

[[regions]]
id = "a"
gate = "FORMAT"
owner = "fn_a"
edges = [1, 2]

[[regions]]
id = "b"
gate = "SOLVER"
owner = "fn_b"
edges = [3]
prereq = "a"

[[crash_sites]]
edge = 3
prob = 1.0

[callgraph]
calls = ["main fn_a", "fn_a fn_b"]
entries = ["main"]

[profiles.gen.rates]
FORMAT = 0.01

[profiles.sym]
churn = 0.5
[profiles.sym.rates]
SOLVER = 0.02

[[profiles.sym.scripted]]
round = 1
at = 60.0
edges = [3]
crash = true
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.regions.len(), 2);
        assert_eq!(s.chain_edges(s.region("b").unwrap()), vec![EdgeId(1), EdgeId(2)]);
        assert_eq!(s.crash_sites[&EdgeId(3)], 1.0);
        let defaults = s.campaign_params(CampaignParams::default());
        assert_eq!(defaults.units, 4);
        assert_eq!(defaults.rounds, 12);
        assert_eq!(defaults.round_time, DEFAULT_ROUND_TIME);
        assert_eq!(defaults.monitor_time, DEFAULT_MONITOR_TIME);
        let sym = &s.profiles[&FuzzerId::new("sym")];
        assert_eq!(sym.scripted.len(), 1);
        assert!(sym.scripted[0].crash);
    }

    #[test]
    fn validation_catches_mistakes() {
        let dup_edge = r#"
seed = 1
[[regions]]
id = "a"
gate = "G"
owner = "f"
edges = [1]
[[regions]]
id = "b"
gate = "G"
owner = "f"
edges = [1]
[callgraph]
calls = ["main f"]
[profiles.x.rates]
G = 0.1
"#;
        assert!(parse_scenario(dup_edge).is_err());

        let cycle = r#"
seed = 1
[[regions]]
id = "a"
gate = "G"
owner = "f"
edges = [1]
prereq = "b"
[[regions]]
id = "b"
gate = "G"
owner = "f"
edges = [2]
prereq = "a"
[callgraph]
calls = ["main f"]
[profiles.x.rates]
G = 0.1
"#;
        assert!(parse_scenario(cycle).is_err());
    }
}
