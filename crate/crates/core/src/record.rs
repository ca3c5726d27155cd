//! The global fuzzing record: per-edge hit counts, execution-path identity,
//! and crash identity.
//!
//! Path identity is a digest over the bucketed hit profile of one execution,
//! so two executions that differ only within one hit-count bucket share a
//! path id. Crash identity is a digest over the top three stack frames after
//! normalization, so crashes that diverge only deeper in the stack collapse
//! into one bucket.
//!
//! # Digest byte layouts (stable contract)
//!
//! Both identities use the fixed 128-bit FNV-1a hash from [`crate::hash`].
//!
//! * Path id: for every covered edge in ascending edge-id order, 8 bytes of
//!   little-endian edge id followed by 1 byte of bucket index.
//! * Crash id: for each of the first `min(3, n)` frames, the UTF-8 bytes of
//!   the function name, one zero byte, then 8 bytes of little-endian offset.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::hash::Fnv128;
use crate::ids::EdgeId;

/// Hit counts for the edges covered by one or many executions.
///
/// Absent edges have an implicit count of zero; stored counts are always
/// at least one.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageMap {
    hits: BTreeMap<EdgeId, u64>,
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `count` hits to `edge`. Zero counts are ignored.
    pub fn add(&mut self, edge: EdgeId, count: u64) {
        if count > 0 {
            *self.hits.entry(edge).or_insert(0) += count;
        }
    }

    pub fn get(&self, edge: EdgeId) -> u64 {
        self.hits.get(&edge).copied().unwrap_or(0)
    }

    pub fn contains(&self, edge: EdgeId) -> bool {
        self.hits.contains_key(&edge)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    /// Covered edges with their counts, in ascending edge order.
    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, u64)> + '_ {
        self.hits.iter().map(|(&e, &c)| (e, c))
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.hits.keys().copied()
    }
}

impl FromIterator<(EdgeId, u64)> for CoverageMap {
    fn from_iter<T: IntoIterator<Item = (EdgeId, u64)>>(iter: T) -> Self {
        let mut m = CoverageMap::new();
        for (e, c) in iter {
            m.add(e, c);
        }
        m
    }
}

/// One normalized stack frame: function name plus a relative offset.
///
/// Absolute addresses are stripped during normalization; only the symbol
/// and its intra-function offset take part in crash identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frame {
    pub function: String,
    pub offset: u64,
}

impl Frame {
    pub fn new(function: impl Into<String>, offset: u64) -> Self {
        Frame {
            function: function.into(),
            offset,
        }
    }

    /// Normalize one raw frame string.
    ///
    /// Accepts `name`, `name+0x1a`, `name+26`, or forms with a leading
    /// absolute address such as `0x7f3a00001234 in name+0x1a`. Pure
    /// address tokens are dropped; the last symbol-like token wins.
    pub fn parse(raw: &str) -> Frame {
        let mut best: Option<&str> = None;
        for tok in raw.split_whitespace() {
            if tok == "in" || tok == "at" || is_address(tok) {
                continue;
            }
            best = Some(tok);
        }
        match best {
            Some(tok) => {
                let (name, off) = match tok.split_once('+') {
                    Some((n, o)) => (n, parse_offset(o)),
                    None => (tok, 0),
                };
                Frame::new(name, off)
            }
            None => Frame::new("??", 0),
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.offset == 0 {
            f.write_str(&self.function)
        } else {
            write!(f, "{}+0x{:x}", self.function, self.offset)
        }
    }
}

fn is_address(tok: &str) -> bool {
    tok.strip_prefix("0x")
        .map(|h| !h.is_empty() && h.chars().all(|c| c.is_ascii_hexdigit()))
        .unwrap_or(false)
}

fn parse_offset(s: &str) -> u64 {
    if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).unwrap_or(0)
    } else {
        s.parse().unwrap_or(0)
    }
}

/// Coverage and crash observations from executing one seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub coverage: CoverageMap,
    pub crashed: bool,
    pub stack_frames: Vec<Frame>,
}

impl ExecutionResult {
    /// A non-crashing execution.
    pub fn ok(coverage: CoverageMap) -> Self {
        ExecutionResult {
            coverage,
            crashed: false,
            stack_frames: Vec::new(),
        }
    }

    /// A crashing execution; `frames` must be nonempty.
    pub fn crash(coverage: CoverageMap, frames: Vec<Frame>) -> Result<Self, RecordError> {
        if frames.is_empty() {
            return Err(RecordError::EmptyFrames);
        }
        Ok(ExecutionResult {
            coverage,
            crashed: true,
            stack_frames: frames,
        })
    }
}

/// Identity of one execution path (bucketed hit profile digest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathId(pub u128);

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Identity of one crash bucket (top-3-frame digest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CrashId(pub u128);

impl fmt::Display for CrashId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl Serialize for CrashId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{:032x}", self.0))
    }
}

impl<'de> Deserialize<'de> for CrashId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <&str>::deserialize(d)?;
        u128::from_str_radix(s, 16)
            .map(CrashId)
            .map_err(serde::de::Error::custom)
    }
}

/// Errors from record operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordError {
    /// A crash was reported without any stack frames.
    EmptyFrames,
    /// A coverage interchange line could not be parsed.
    MalformedCoverageLine { line: usize },
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordError::EmptyFrames => f.write_str("crash with empty frame list"),
            RecordError::MalformedCoverageLine { line } => {
                write!(f, "malformed coverage line {line}")
            }
        }
    }
}

impl core::error::Error for RecordError {}

/// AFL-convention hit-count bucket index, 0..=7.
///
/// Classes: 1, 2, 3, 4–7, 8–15, 16–31, 32–127, ≥128.
pub fn bucket(count: u64) -> u8 {
    match count {
        0 => 0, // not stored in practice; map to the lowest class
        1 => 0,
        2 => 1,
        3 => 2,
        4..=7 => 3,
        8..=15 => 4,
        16..=31 => 5,
        32..=127 => 6,
        _ => 7,
    }
}

/// Digest of one execution's bucketed hit profile.
pub fn path_id(coverage: &CoverageMap) -> PathId {
    let mut h = Fnv128::new();
    for (edge, count) in coverage.iter() {
        h.write(&edge.0.to_le_bytes());
        h.write(&[bucket(count)]);
    }
    PathId(h.finish())
}

/// Digest of the top `min(3, n)` normalized frames.
pub fn crash_id(frames: &[Frame]) -> Result<CrashId, RecordError> {
    if frames.is_empty() {
        return Err(RecordError::EmptyFrames);
    }
    let mut h = Fnv128::new();
    for frame in frames.iter().take(3) {
        h.write(frame.function.as_bytes());
        h.write(&[0]);
        h.write(&frame.offset.to_le_bytes());
    }
    Ok(CrashId(h.finish()))
}

/// Novelty observed while merging one execution into the record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeDelta {
    pub new_edges: usize,
    pub new_path: bool,
    pub new_unique_crash: bool,
}

/// The campaign-wide fuzzing record `M`: global edge hit counts, known
/// path ids, known crash ids, and the raw crash event total.
#[derive(Debug, Clone, Default)]
pub struct FuzzRecord {
    global_coverage: CoverageMap,
    known_paths: BTreeSet<PathId>,
    known_crashes: BTreeSet<CrashId>,
    crash_total: u64,
}

impl FuzzRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn coverage(&self) -> &CoverageMap {
        &self.global_coverage
    }

    pub fn edges_covered(&self) -> usize {
        self.global_coverage.len()
    }

    pub fn paths_known(&self) -> usize {
        self.known_paths.len()
    }

    pub fn unique_crashes(&self) -> usize {
        self.known_crashes.len()
    }

    pub fn crash_total(&self) -> u64 {
        self.crash_total
    }

    pub fn knows_path(&self, p: PathId) -> bool {
        self.known_paths.contains(&p)
    }

    pub fn knows_crash(&self, c: CrashId) -> bool {
        self.known_crashes.contains(&c)
    }

    /// Fold one execution into the record, summing hit counts and
    /// registering path/crash identities. Returns what was new.
    pub fn merge(&mut self, result: &ExecutionResult) -> MergeDelta {
        let mut delta = MergeDelta::default();
        for (edge, count) in result.coverage.iter() {
            if !self.global_coverage.contains(edge) {
                delta.new_edges += 1;
            }
            self.global_coverage.add(edge, count);
        }
        let pid = path_id(&result.coverage);
        delta.new_path = self.known_paths.insert(pid);
        if result.crashed {
            self.crash_total += 1;
            // The crash invariant guarantees nonempty frames.
            if let Ok(cid) = crash_id(&result.stack_frames) {
                delta.new_unique_crash = self.known_crashes.insert(cid);
            }
        }
        delta
    }

    /// Half the mean hit count over all covered edges; 0.0 when nothing
    /// is covered. An edge is "less frequent" when its count is strictly
    /// below this threshold.
    pub fn less_frequent_threshold(&self) -> f64 {
        if self.global_coverage.is_empty() {
            return 0.0;
        }
        let total: u64 = self.global_coverage.iter().map(|(_, c)| c).sum();
        0.5 * total as f64 / self.global_coverage.len() as f64
    }
}

/// Parse the coverage interchange format produced by instrumented runners.
///
/// One `edge_id count` pair per line (decimal or `0x`-hex ids), `#` comment
/// lines skipped, plus an optional trailing `CRASH frame1;frame2;...` line.
pub fn parse_execution(text: &str) -> Result<ExecutionResult, RecordError> {
    let mut coverage = CoverageMap::new();
    let mut frames: Option<Vec<Frame>> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("CRASH") {
            let fs: Vec<Frame> = rest
                .trim()
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(Frame::parse)
                .collect();
            if fs.is_empty() {
                return Err(RecordError::EmptyFrames);
            }
            frames = Some(fs);
            continue;
        }
        let mut parts = line.split_whitespace();
        let (edge, count) = match (parts.next(), parts.next(), parts.next()) {
            (Some(e), Some(c), None) => (e, c),
            _ => return Err(RecordError::MalformedCoverageLine { line: idx + 1 }),
        };
        let edge = parse_token_u64(edge)
            .ok_or(RecordError::MalformedCoverageLine { line: idx + 1 })?;
        let count: u64 = count
            .parse()
            .map_err(|_| RecordError::MalformedCoverageLine { line: idx + 1 })?;
        coverage.add(EdgeId(edge), count);
    }
    match frames {
        Some(fs) => ExecutionResult::crash(coverage, fs),
        None => Ok(ExecutionResult::ok(coverage)),
    }
}

/// Render an [`ExecutionResult`] in the coverage interchange format.
pub fn render_execution(result: &ExecutionResult) -> String {
    let mut out = String::new();
    for (edge, count) in result.coverage.iter() {
        out.push_str(&edge.0.to_string());
        out.push(' ');
        out.push_str(&count.to_string());
        out.push('\n');
    }
    if result.crashed {
        out.push_str("CRASH ");
        for (i, frame) in result.stack_frames.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            out.push_str(&frame.to_string());
        }
        out.push('\n');
    }
    out
}

pub(crate) fn parse_token_u64(tok: &str) -> Option<u64> {
    if let Some(hex) = tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        tok.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cov(pairs: &[(u64, u64)]) -> CoverageMap {
        pairs.iter().map(|&(e, c)| (EdgeId(e), c)).collect()
    }

    #[test]
    fn bucket_classes() {
        assert_eq!(bucket(1), 0);
        assert_eq!(bucket(2), 1);
        assert_eq!(bucket(3), 2);
        assert_eq!(bucket(4), 3);
        assert_eq!(bucket(7), 3);
        assert_eq!(bucket(8), 4);
        assert_eq!(bucket(15), 4);
        assert_eq!(bucket(16), 5);
        assert_eq!(bucket(31), 5);
        assert_eq!(bucket(32), 6);
        assert_eq!(bucket(127), 6);
        assert_eq!(bucket(128), 7);
        assert_eq!(bucket(u64::MAX), 7);
    }

    #[test]
    fn path_id_same_bucket_same_id() {
        // Counts 5 and 6 both land in the 4–7 class.
        assert_eq!(path_id(&cov(&[(1, 5)])), path_id(&cov(&[(1, 6)])));
    }

    #[test]
    fn path_id_distinguishes_support() {
        assert_ne!(path_id(&cov(&[])), path_id(&cov(&[(1, 1)])));
    }

    #[test]
    fn path_id_order_independent() {
        let a: CoverageMap = [(EdgeId(9), 2), (EdgeId(3), 1)].into_iter().collect();
        let b: CoverageMap = [(EdgeId(3), 1), (EdgeId(9), 2)].into_iter().collect();
        assert_eq!(path_id(&a), path_id(&b));
    }

    #[test]
    fn crash_id_top3_only() {
        let f = |n: &str| Frame::new(n, 0);
        let a = crash_id(&[f("a"), f("b"), f("c"), f("d")]).unwrap();
        let b = crash_id(&[f("a"), f("b"), f("c"), f("e")]).unwrap();
        assert_eq!(a, b);
        let short = crash_id(&[f("a")]).unwrap();
        assert_eq!(short, crash_id(&[f("a")]).unwrap());
        let c = crash_id(&[f("a"), f("b"), f("c")]).unwrap();
        let d = crash_id(&[f("a"), f("b"), f("x")]).unwrap();
        assert_ne!(c, d);
    }

    #[test]
    fn crash_id_rejects_empty() {
        assert_eq!(crash_id(&[]), Err(RecordError::EmptyFrames));
    }

    #[test]
    fn frame_normalization_strips_addresses() {
        assert_eq!(
            Frame::parse("0x7f3a00001234 in parse_header+0x42"),
            Frame::new("parse_header", 0x42)
        );
        assert_eq!(Frame::parse("main"), Frame::new("main", 0));
        assert_eq!(Frame::parse("f+12"), Frame::new("f", 12));
        assert_eq!(Frame::parse("0xdeadbeef"), Frame::new("??", 0));
    }

    #[test]
    fn merge_first_result() {
        let mut m = FuzzRecord::new();
        let r = ExecutionResult::ok(cov(&[(1, 2), (2, 1)]));
        let d = m.merge(&r);
        assert_eq!(d.new_edges, 2);
        assert!(d.new_path);
        assert!(!d.new_unique_crash);
        assert_eq!(m.edges_covered(), 2);
        assert_eq!(m.coverage().get(EdgeId(1)), 2);
    }

    #[test]
    fn merge_same_result_twice_is_novelty_idempotent() {
        let mut m = FuzzRecord::new();
        let r = ExecutionResult::crash(cov(&[(1, 1)]), vec![Frame::new("f", 1)]).unwrap();
        let first = m.merge(&r);
        assert!(first.new_path && first.new_unique_crash);
        let second = m.merge(&r);
        assert_eq!(second.new_edges, 0);
        assert!(!second.new_path);
        assert!(!second.new_unique_crash);
        assert_eq!(m.crash_total(), 2);
        assert_eq!(m.unique_crashes(), 1);
        // Counts still summed.
        assert_eq!(m.coverage().get(EdgeId(1)), 2);
    }

    #[test]
    fn less_frequent_threshold_values() {
        let mut m = FuzzRecord::new();
        assert_eq!(m.less_frequent_threshold(), 0.0);
        m.merge(&ExecutionResult::ok(cov(&[(1, 10), (2, 2), (3, 6)])));
        assert!((m.less_frequent_threshold() - 3.0).abs() < 1e-12);
        let mut single = FuzzRecord::new();
        single.merge(&ExecutionResult::ok(cov(&[(7, 4)])));
        assert!((single.less_frequent_threshold() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interchange_round_trip() {
        let r = ExecutionResult::crash(
            cov(&[(3, 5), (17, 1)]),
            vec![Frame::new("boom", 0x10), Frame::new("main", 0)],
        )
        .unwrap();
        let text = render_execution(&r);
        let back = parse_execution(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn interchange_rejects_malformed() {
        assert_eq!(
            parse_execution("1 2\nbogus line here\n"),
            Err(RecordError::MalformedCoverageLine { line: 2 })
        );
        assert_eq!(parse_execution("CRASH \n"), Err(RecordError::EmptyFrames));
    }

    #[test]
    fn interchange_hex_edge_ids() {
        let r = parse_execution("0x10 3\n# comment\n32 1\n").unwrap();
        assert_eq!(r.coverage.get(EdgeId(16)), 3);
        assert_eq!(r.coverage.get(EdgeId(32)), 1);
    }
}
