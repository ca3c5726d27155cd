//! Campaign reports: per-round logs, the consolidated report document, and
//! the JSON/CSV emitters.
//!
//! During a run every completed round is appended to a line-delimited JSON
//! log, so an orchestrator crash loses at most the round in flight. The
//! consolidated report is written at the end and can be rebuilt losslessly
//! from the line log with `ensemble report`.
//!
//! The report carries every scheduling decision, reassignment, metric
//! vector, and θ used, so feedback computations can be replayed offline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use ensemble_core::record::{CrashId, Frame};
use ensemble_core::scheduler::Reassignment;
use ensemble_core::seedeval::{MetricVector, WeightVector, METRICS};
use ensemble_core::{FuzzerId, SeedId, UnitId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    Virtual,
    Wall,
}

/// Echo of the effective configuration, for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub policy: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scenario_seed: Option<u64>,
    pub units: u32,
    pub rounds: u32,
    pub round_time: f64,
    pub monitor_time: f64,
    pub rho: f64,
    pub fuzzers: Vec<FuzzerId>,
    pub deep_edges: usize,
}

/// One fuzzer's outcome in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundFuzzerLog {
    /// Metric vector c0..c4 of the round's local pool.
    pub c: MetricVector,
    /// Reward credited to the scheduler this round.
    pub gamma_new: f64,
    /// Time-weighted pull count.
    pub pulls: f64,
    /// Units initially assigned by the round schedule.
    pub units_held: u32,
}

/// Cumulative record stats after the round's synchronization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub edges: usize,
    pub paths: usize,
    pub unique_crashes: usize,
    pub crash_events: u64,
    pub global_seeds: usize,
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub assignment: BTreeMap<UnitId, FuzzerId>,
    pub primed_units: BTreeSet<UnitId>,
    pub reassignments: Vec<Reassignment>,
    pub theta: WeightVector,
    pub fuzzers: BTreeMap<FuzzerId, RoundFuzzerLog>,
    pub stats: RoundStats,
    pub early_termination: bool,
    /// Seconds of the round actually spent (< round_time on early
    /// termination).
    pub duration: f64,
}

/// One deduplicated crash bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashBucket {
    pub id: CrashId,
    pub frames: Vec<Frame>,
    pub representatives: BTreeSet<SeedId>,
    pub events: u64,
    pub first_round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub edges: usize,
    pub paths: usize,
    pub unique_crashes: usize,
    pub crash_events: u64,
    pub global_seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzerSummary {
    pub pulls_total: f64,
    /// Fraction of all unit-time this fuzzer held.
    pub share: f64,
}

/// The consolidated campaign report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub clock: ClockKind,
    pub duration_seconds: f64,
    pub totals: Totals,
    pub fuzzer_summary: BTreeMap<FuzzerId, FuzzerSummary>,
    pub rounds: Vec<RoundLog>,
    pub crashes: Vec<CrashBucket>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("report parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("round log stream is missing its {0} record")]
    IncompleteStream(&'static str),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let report: CampaignReport = serde_json::from_str(text)?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(ReportError::SchemaVersion(report.schema_version));
        }
        Ok(report)
    }

    /// Per-round time series as CSV: one row per (round, fuzzer), zero
    /// rows for fuzzers idle that round.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = vec![
            "round".into(),
            "fuzzer".into(),
            "units_held".into(),
            "pulls".into(),
            "gamma_new".into(),
        ];
        for j in 0..METRICS {
            header.push(format!("c{j}"));
        }
        for j in 0..METRICS {
            header.push(format!("theta{j}"));
        }
        header.extend(
            ["edges_total", "paths_total", "crashes_total"]
                .into_iter()
                .map(String::from),
        );
        w.write_record(&header)?;
        for log in &self.rounds {
            for fuzzer in &self.config.fuzzers {
                let row = log.fuzzers.get(fuzzer);
                let (c, gamma_new, pulls, units_held) = match row {
                    Some(r) => (r.c, r.gamma_new, r.pulls, r.units_held),
                    None => (MetricVector::default(), 0.0, 0.0, 0),
                };
                let mut record: Vec<String> = vec![
                    log.round.to_string(),
                    fuzzer.to_string(),
                    units_held.to_string(),
                    fmt_f64(pulls),
                    fmt_f64(gamma_new),
                ];
                record.extend(c.0.iter().map(u64::to_string));
                record.extend(log.theta.0.iter().map(|&t| fmt_f64(t)));
                record.push(log.stats.edges.to_string());
                record.push(log.stats.paths.to_string());
                record.push(log.stats.unique_crashes.to_string());
                w.write_record(&record)?;
            }
        }
        let bytes = w.into_inner().expect("csv into_inner");
        Ok(String::from_utf8(bytes).expect("csv utf8"))
    }
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip formatting, same as the JSON emitter.
    let mut buf = ryu_like(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_like(v: f64) -> String {
    let mut s = serde_json::to_string(&v).expect("f64 json");
    if s == "null" {
        s = "NaN".into();
    }
    s
}

/// One record of the line-delimited round log. Externally tagged: each
/// line is `{"config": ...}`, `{"round": ...}`, or `{"final": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogRecord {
    Config {
        schema_version: u32,
        clock: ClockKind,
        config: ConfigEcho,
    },
    Round {
        round: Box<RoundLog>,
    },
    Final {
        duration_seconds: f64,
        totals: Totals,
        fuzzer_summary: BTreeMap<FuzzerId, FuzzerSummary>,
        crashes: Vec<CrashBucket>,
    },
}

/// Receives campaign progress; lets round data hit disk between rounds.
pub trait ReportSink {
    fn record(&mut self, record: &LogRecord) -> Result<(), ReportError>;
}

/// Discards everything.
pub struct NullSink;

impl ReportSink for NullSink {
    fn record(&mut self, _record: &LogRecord) -> Result<(), ReportError> {
        Ok(())
    }
}

/// Appends line-delimited JSON records to a file, flushing per record.
pub struct NdjsonSink {
    path: PathBuf,
    file: std::fs::File,
}

impl NdjsonSink {
    pub fn create(path: &Path) -> Result<Self, ReportError> {
        let file = std::fs::File::create(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(NdjsonSink {
            path: path.to_path_buf(),
            file,
        })
    }
}

impl ReportSink for NdjsonSink {
    fn record(&mut self, record: &LogRecord) -> Result<(), ReportError> {
        let line = serde_json::to_string(record)?;
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.write_all(b"\n"))
            .and_then(|_| self.file.flush())
            .map_err(|source| ReportError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Rebuild a consolidated report from a line-delimited round log.
pub fn report_from_ndjson(text: &str) -> Result<CampaignReport, ReportError> {
    let mut config: Option<(u32, ClockKind, ConfigEcho)> = None;
    let mut rounds: Vec<RoundLog> = Vec::new();
    let mut fin: Option<(f64, Totals, BTreeMap<FuzzerId, FuzzerSummary>, Vec<CrashBucket>)> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(line)? {
            LogRecord::Config {
                schema_version,
                clock,
                config: c,
            } => config = Some((schema_version, clock, c)),
            LogRecord::Round { round } => rounds.push(*round),
            LogRecord::Final {
                duration_seconds,
                totals,
                fuzzer_summary,
                crashes,
            } => fin = Some((duration_seconds, totals, fuzzer_summary, crashes)),
        }
    }
    let (schema_version, clock, config) =
        config.ok_or(ReportError::IncompleteStream("config"))?;
    if schema_version != SCHEMA_VERSION {
        return Err(ReportError::SchemaVersion(schema_version));
    }
    let (duration_seconds, totals, fuzzer_summary, crashes) =
        fin.ok_or(ReportError::IncompleteStream("final"))?;
    Ok(CampaignReport {
        schema_version,
        config,
        clock,
        duration_seconds,
        totals,
        fuzzer_summary,
        rounds,
        crashes,
    })
}

/// Parse either a consolidated JSON report or a line-delimited round log,
/// detected by whether the first line is a log record.
pub fn parse_report_input(text: &str) -> Result<CampaignReport, ReportError> {
    let first_line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if serde_json::from_str::<LogRecord>(first_line).is_ok() {
        report_from_ndjson(text)
    } else {
        CampaignReport::from_json(text)
    }
}
