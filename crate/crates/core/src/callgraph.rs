//! Call-graph ingestion and function-depth analysis.
//!
//! The orchestrator does not perform static analysis itself; it ingests a
//! call graph exported by any external tool as a line-oriented edge list
//! (`caller callee`, one call per line, `#` comments, single-token lines
//! declaring isolated functions). Depths are breadth-first shortest call
//! paths from the entry set; a function is *deep* when its depth strictly
//! exceeds `rho` times the mean reachable depth, and control-flow edges
//! owned by deep functions are the deep edges used by seed evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ids::EdgeId;
use crate::record::parse_token_u64;

/// Default outlier factor for the deep threshold.
pub const DEFAULT_RHO: f64 = 1.5;

/// A static call graph: functions, ordered call pairs, and optional
/// designated entry functions.
#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    functions: BTreeSet<String>,
    calls: BTreeSet<(String, String)>,
    entries: BTreeSet<String>,
}

impl CallGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_function(&mut self, name: impl Into<String>) {
        self.functions.insert(name.into());
    }

    /// Add a call pair, registering both endpoints as functions.
    /// Duplicate pairs collapse; self-calls are allowed.
    pub fn add_call(&mut self, caller: impl Into<String>, callee: impl Into<String>) {
        let caller = caller.into();
        let callee = callee.into();
        self.functions.insert(caller.clone());
        self.functions.insert(callee.clone());
        self.calls.insert((caller, callee));
    }

    /// Designate an entry function; it must already exist or is added.
    pub fn add_entry(&mut self, name: impl Into<String>) {
        let name = name.into();
        self.functions.insert(name.clone());
        self.entries.insert(name);
    }

    pub fn functions(&self) -> impl Iterator<Item = &str> {
        self.functions.iter().map(String::as_str)
    }

    pub fn function_count(&self) -> usize {
        self.functions.len()
    }

    pub fn call_count(&self) -> usize {
        self.calls.len()
    }

    pub fn calls(&self) -> impl Iterator<Item = (&str, &str)> {
        self.calls.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// The effective entry set: designated entries when present, else all
    /// functions with zero in-degree (self-calls do not count as in-edges).
    pub fn entry_set(&self) -> BTreeSet<String> {
        if !self.entries.is_empty() {
            return self.entries.clone();
        }
        let mut has_caller: BTreeSet<&str> = BTreeSet::new();
        for (caller, callee) in &self.calls {
            if caller != callee {
                has_caller.insert(callee.as_str());
            }
        }
        self.functions
            .iter()
            .filter(|f| !has_caller.contains(f.as_str()))
            .cloned()
            .collect()
    }
}

/// Errors from parsing or depth computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallGraphError {
    /// A non-comment line had neither 1 nor 2 tokens.
    MalformedLine { line: usize },
    /// The input declared no functions at all.
    EmptyGraph,
    /// No designated entries and no in-degree-0 functions (fully cyclic).
    NoEntryFunction,
    /// `rho` must be positive and finite.
    InvalidRho,
}

impl fmt::Display for CallGraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallGraphError::MalformedLine { line } => {
                write!(f, "malformed call-graph line {line}: expected 1 or 2 tokens")
            }
            CallGraphError::EmptyGraph => f.write_str("empty call graph"),
            CallGraphError::NoEntryFunction => f.write_str("no entry function"),
            CallGraphError::InvalidRho => f.write_str("rho must be positive"),
        }
    }
}

impl core::error::Error for CallGraphError {}

/// Parse the line-oriented call-graph interchange format.
pub fn parse_callgraph(input: &str) -> Result<CallGraph, CallGraphError> {
    let mut graph = CallGraph::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(f), None, _) => graph.add_function(f),
            (Some(caller), Some(callee), None) => graph.add_call(caller, callee),
            _ => return Err(CallGraphError::MalformedLine { line: idx + 1 }),
        }
    }
    if graph.is_empty() {
        return Err(CallGraphError::EmptyGraph);
    }
    Ok(graph)
}

/// Parse an entry file: one function name per line.
pub fn parse_entries(input: &str) -> BTreeSet<String> {
    input
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(ToString::to_string)
        .collect()
}

/// Parse the edge-ownership map linking dynamic edge ids to the function
/// containing them: lines of `edge_id function_name`.
pub fn parse_edge_map(input: &str) -> Result<BTreeMap<EdgeId, String>, CallGraphError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(edge), Some(func), None) => {
                let id = parse_token_u64(edge)
                    .ok_or(CallGraphError::MalformedLine { line: idx + 1 })?;
                map.insert(EdgeId(id), func.to_string());
            }
            _ => return Err(CallGraphError::MalformedLine { line: idx + 1 }),
        }
    }
    Ok(map)
}

/// Shortest-call-path depth of one function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Finite(u32),
    Unreachable,
}

impl Depth {
    pub fn as_finite(self) -> Option<u32> {
        match self {
            Depth::Finite(d) => Some(d),
            Depth::Unreachable => None,
        }
    }
}

/// Function depths plus the derived deep threshold.
#[derive(Debug, Clone)]
pub struct DepthMap {
    depth: BTreeMap<String, Depth>,
    mean_depth: f64,
    deep_threshold: f64,
}

impl DepthMap {
    pub fn depth(&self, function: &str) -> Option<Depth> {
        self.depth.get(function).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Depth)> {
        self.depth.iter().map(|(f, &d)| (f.as_str(), d))
    }

    /// Mean depth over reachable functions only.
    pub fn mean_depth(&self) -> f64 {
        self.mean_depth
    }

    /// The deep cutoff `rho * mean_depth`; deep means strictly greater.
    pub fn deep_threshold(&self) -> f64 {
        self.deep_threshold
    }

    pub fn reachable_count(&self) -> usize {
        self.depth
            .values()
            .filter(|d| matches!(d, Depth::Finite(_)))
            .count()
    }

    pub fn unreachable_count(&self) -> usize {
        self.depth.len() - self.reachable_count()
    }
}

/// Breadth-first shortest-path depths from the entry set.
///
/// Unreachable functions are marked and excluded from the mean.
pub fn compute_depths(graph: &CallGraph, rho: f64) -> Result<DepthMap, CallGraphError> {
    if graph.is_empty() {
        return Err(CallGraphError::EmptyGraph);
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(CallGraphError::InvalidRho);
    }
    let entries = graph.entry_set();
    if entries.is_empty() {
        return Err(CallGraphError::NoEntryFunction);
    }

    let mut callees: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (caller, callee) in graph.calls() {
        callees.entry(caller).or_default().push(callee);
    }

    let mut depth: BTreeMap<String, Depth> = graph
        .functions()
        .map(|f| (f.to_string(), Depth::Unreachable))
        .collect();
    let mut frontier: Vec<&str> = entries.iter().map(String::as_str).collect();
    for e in &frontier {
        depth.insert(e.to_string(), Depth::Finite(0));
    }
    let mut level = 0u32;
    while !frontier.is_empty() {
        level += 1;
        let mut next: Vec<&str> = Vec::new();
        for f in frontier {
            for &callee in callees.get(f).map(Vec::as_slice).unwrap_or(&[]) {
                if matches!(depth.get(callee), Some(Depth::Unreachable)) {
                    depth.insert(callee.to_string(), Depth::Finite(level));
                    next.push(callee);
                }
            }
        }
        frontier = next;
    }

    let reachable: Vec<u32> = depth.values().filter_map(|d| d.as_finite()).collect();
    let mean_depth = if reachable.is_empty() {
        0.0
    } else {
        reachable.iter().map(|&d| d as f64).sum::<f64>() / reachable.len() as f64
    };
    Ok(DepthMap {
        depth,
        mean_depth,
        deep_threshold: rho * mean_depth,
    })
}

/// Functions whose depth strictly exceeds the deep threshold, plus all
/// unreachable functions (code the call graph cannot see is conservatively
/// deep).
pub fn deep_functions(depths: &DepthMap) -> BTreeSet<String> {
    depths
        .iter()
        .filter(|(_, d)| match d {
            Depth::Finite(v) => (*v as f64) > depths.deep_threshold(),
            Depth::Unreachable => true,
        })
        .map(|(f, _)| f.to_string())
        .collect()
}

/// Deep edge ids: edges whose owning function is deep.
pub fn deep_edges(
    depths: &DepthMap,
    edge_owner: &BTreeMap<EdgeId, String>,
) -> BTreeSet<EdgeId> {
    let deep = deep_functions(depths);
    edge_owner
        .iter()
        .filter(|(_, owner)| deep.contains(*owner))
        .map(|(&e, _)| e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CallGraph {
        parse_callgraph("main a\na b\nb c\n").unwrap()
    }

    #[test]
    fn parse_basics() {
        let g = chain();
        assert_eq!(g.function_count(), 4);
        assert_eq!(g.call_count(), 3);

        let selfcall = parse_callgraph("f f").unwrap();
        assert_eq!(selfcall.function_count(), 1);
        assert_eq!(selfcall.call_count(), 1);

        let dup = parse_callgraph("x y\nx y").unwrap();
        assert_eq!(dup.call_count(), 1);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_callgraph(""), Err(CallGraphError::EmptyGraph)));
        assert!(matches!(
            parse_callgraph("# only comments\n\n"),
            Err(CallGraphError::EmptyGraph)
        ));
        match parse_callgraph("a b c") {
            Err(CallGraphError::MalformedLine { line: 1 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        match parse_callgraph("ok one\n\nx y z\n") {
            Err(CallGraphError::MalformedLine { line: 3 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn chain_depths() {
        let d = compute_depths(&chain(), DEFAULT_RHO).unwrap();
        assert_eq!(d.depth("main"), Some(Depth::Finite(0)));
        assert_eq!(d.depth("a"), Some(Depth::Finite(1)));
        assert_eq!(d.depth("b"), Some(Depth::Finite(2)));
        assert_eq!(d.depth("c"), Some(Depth::Finite(3)));
        assert!((d.mean_depth() - 1.5).abs() < 1e-12);
        assert!((d.deep_threshold() - 2.25).abs() < 1e-12);
        let deep = deep_functions(&d);
        assert_eq!(deep.len(), 1);
        assert!(deep.contains("c"));
    }

    #[test]
    fn single_function_graph() {
        let g = parse_callgraph("main").unwrap();
        let d = compute_depths(&g, DEFAULT_RHO).unwrap();
        assert_eq!(d.depth("main"), Some(Depth::Finite(0)));
        assert_eq!(d.mean_depth(), 0.0);
        assert_eq!(d.deep_threshold(), 0.0);
        // Strict inequality: 0 is not > 0.
        assert!(deep_functions(&d).is_empty());
    }

    #[test]
    fn diamond_takes_shortest_path() {
        let g = parse_callgraph("main a\nmain b\na c\nb c\n").unwrap();
        let d = compute_depths(&g, DEFAULT_RHO).unwrap();
        assert_eq!(d.depth("c"), Some(Depth::Finite(2)));
    }

    #[test]
    fn unreachable_is_deep_and_excluded_from_mean() {
        let mut g = parse_callgraph("main a\nu v\n").unwrap();
        g.add_entry("main");
        let d = compute_depths(&g, DEFAULT_RHO).unwrap();
        assert_eq!(d.depth("u"), Some(Depth::Unreachable));
        assert_eq!(d.depth("v"), Some(Depth::Unreachable));
        // mean over {0, 1} only
        assert!((d.mean_depth() - 0.5).abs() < 1e-12);
        let deep = deep_functions(&d);
        assert!(deep.contains("u"));
        assert!(deep.contains("v"));
        // threshold 0.75: a (depth 1) is deep, main (depth 0) is not
        assert!(deep.contains("a"));
        assert!(!deep.contains("main"));
    }

    #[test]
    fn fully_cyclic_graph_has_no_entry() {
        let g = parse_callgraph("a b\nb a\n").unwrap();
        assert!(matches!(
            compute_depths(&g, DEFAULT_RHO),
            Err(CallGraphError::NoEntryFunction)
        ));
    }

    #[test]
    fn self_call_does_not_hide_entry() {
        let g = parse_callgraph("f f\nf g\n").unwrap();
        let d = compute_depths(&g, DEFAULT_RHO).unwrap();
        assert_eq!(d.depth("f"), Some(Depth::Finite(0)));
        assert_eq!(d.depth("g"), Some(Depth::Finite(1)));
    }

    #[test]
    fn edge_map_and_deep_edges() {
        let d = compute_depths(&chain(), DEFAULT_RHO).unwrap();
        let owners = parse_edge_map("1 main\n2 b\n3 c\n0x10 c\n").unwrap();
        let deep = deep_edges(&d, &owners);
        assert_eq!(
            deep,
            [EdgeId(3), EdgeId(16)].into_iter().collect()
        );
    }

    #[test]
    fn entries_file() {
        let e = parse_entries("main\n# comment\nalt_entry\n");
        assert_eq!(e.len(), 2);
        assert!(e.contains("main"));
        assert!(e.contains("alt_entry"));
    }
}
