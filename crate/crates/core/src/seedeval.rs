//! Multidimensional seed-pool evaluation.
//!
//! A round's local pool is scored against the round-start snapshot of the
//! fuzzing record along five axes:
//!
//! * `c0` — newly covered edges,
//! * `c1` — newly covered execution paths,
//! * `c2` — new unique crashes (deduplicated by crash id),
//! * `c3` — covered deep edges,
//! * `c4` — covered less-frequent edges.
//!
//! `c3` and `c4` intentionally count coverage rather than novelty: hitting a
//! deep or rarely-exercised edge again is still a sign the pool is probing
//! program states that edge/path novelty alone cannot distinguish.
//!
//! Every pool in a round is judged against the same snapshot, so credit is
//! independent of evaluation order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{EdgeId, FuzzerId};
use crate::math;
use crate::record::{crash_id, path_id, CrashId, ExecutionResult, FuzzRecord, PathId};

/// Number of evaluation metrics.
pub const METRICS: usize = 5;

/// The per-pool counts `c0..c4`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricVector(pub [u64; METRICS]);

impl MetricVector {
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn new_edges(&self) -> u64 {
        self.0[0]
    }

    pub fn new_paths(&self) -> u64 {
        self.0[1]
    }

    pub fn new_unique_crashes(&self) -> u64 {
        self.0[2]
    }

    pub fn deep_edges(&self) -> u64 {
        self.0[3]
    }

    pub fn less_frequent_edges(&self) -> u64 {
        self.0[4]
    }
}

/// The weight vector θ.
///
/// Tuned weights are nonnegative and sum to 1; the qualitative mode sets
/// every component to 1 so the reward degenerates to the plain metric sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub [f64; METRICS]);

impl WeightVector {
    /// Uniform tuned weights (the Σσ = 0 fallback).
    pub fn uniform() -> Self {
        WeightVector([1.0 / METRICS as f64; METRICS])
    }

    /// Qualitative mode: θ_j = 1 for all j.
    pub fn qualitative() -> Self {
        WeightVector([1.0; METRICS])
    }
}

/// Score one local pool against the round-start snapshot.
pub fn evaluate_pool(
    pool: &[ExecutionResult],
    snapshot: &FuzzRecord,
    deep: &BTreeSet<EdgeId>,
) -> MetricVector {
    let mut covered: BTreeSet<EdgeId> = BTreeSet::new();
    let mut new_paths: BTreeSet<PathId> = BTreeSet::new();
    let mut new_crashes: BTreeSet<CrashId> = BTreeSet::new();
    for result in pool {
        covered.extend(result.coverage.edges());
        let pid = path_id(&result.coverage);
        if !snapshot.knows_path(pid) {
            new_paths.insert(pid);
        }
        if result.crashed {
            if let Ok(cid) = crash_id(&result.stack_frames) {
                if !snapshot.knows_crash(cid) {
                    new_crashes.insert(cid);
                }
            }
        }
    }
    let threshold = snapshot.less_frequent_threshold();
    let c0 = covered
        .iter()
        .filter(|&&e| !snapshot.coverage().contains(e))
        .count() as u64;
    let c3 = covered.iter().filter(|e| deep.contains(e)).count() as u64;
    let c4 = covered
        .iter()
        .filter(|&&e| (snapshot.coverage().get(e) as f64) < threshold)
        .count() as u64;
    MetricVector([c0, new_paths.len() as u64, new_crashes.len() as u64, c3, c4])
}

/// Tune θ from the spread of each metric across the round's fuzzers:
/// θ_j = σ_j / Σσ, with σ the population standard deviation. Falls back to
/// uniform weights when every metric is constant across fuzzers.
pub fn tune_weights(vectors: &BTreeMap<FuzzerId, MetricVector>) -> WeightVector {
    if vectors.is_empty() {
        return WeightVector::uniform();
    }
    let n = vectors.len() as f64;
    let mut sigma = [0.0f64; METRICS];
    for j in 0..METRICS {
        let values: Vec<f64> = vectors.values().map(|m| m.0[j] as f64).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        sigma[j] = math::sqrt(var);
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return WeightVector::uniform();
    }
    let mut theta = [0.0f64; METRICS];
    for j in 0..METRICS {
        theta[j] = sigma[j] / total;
    }
    WeightVector(theta)
}

/// The weighted reward γ = Σ θ_j c_j.
pub fn reward(metrics: &MetricVector, weights: &WeightVector) -> f64 {
    metrics
        .0
        .iter()
        .zip(weights.0.iter())
        .map(|(&c, &w)| c as f64 * w)
        .sum()
}

/// Qualitative single-seed benefit: true iff any metric component is
/// nonzero, i.e. the θ = 1 reward is positive.
pub fn is_beneficial(
    result: &ExecutionResult,
    snapshot: &FuzzRecord,
    deep: &BTreeSet<EdgeId>,
) -> bool {
    !evaluate_pool(core::slice::from_ref(result), snapshot, deep).is_zero()
}

/// Incremental equivalent of [`evaluate_pool`] for pools that grow during
/// a round: feeding results one at a time yields exactly the metric vector
/// `evaluate_pool` would compute over the whole pool. Every metric is a
/// union-based count against a fixed snapshot, so accumulation order does
/// not matter.
#[derive(Debug, Clone)]
pub struct PoolEvaluator<'a> {
    snapshot: &'a FuzzRecord,
    deep: &'a BTreeSet<EdgeId>,
    threshold: f64,
    covered: BTreeSet<EdgeId>,
    metrics: MetricVector,
    new_paths: BTreeSet<PathId>,
    new_crashes: BTreeSet<CrashId>,
}

impl<'a> PoolEvaluator<'a> {
    pub fn new(snapshot: &'a FuzzRecord, deep: &'a BTreeSet<EdgeId>) -> Self {
        PoolEvaluator {
            snapshot,
            deep,
            threshold: snapshot.less_frequent_threshold(),
            covered: BTreeSet::new(),
            metrics: MetricVector::default(),
            new_paths: BTreeSet::new(),
            new_crashes: BTreeSet::new(),
        }
    }

    pub fn add(&mut self, result: &ExecutionResult) {
        for edge in result.coverage.edges() {
            if !self.covered.insert(edge) {
                continue;
            }
            if !self.snapshot.coverage().contains(edge) {
                self.metrics.0[0] += 1;
            }
            if self.deep.contains(&edge) {
                self.metrics.0[3] += 1;
            }
            if (self.snapshot.coverage().get(edge) as f64) < self.threshold {
                self.metrics.0[4] += 1;
            }
        }
        let pid = path_id(&result.coverage);
        if !self.snapshot.knows_path(pid) && self.new_paths.insert(pid) {
            self.metrics.0[1] += 1;
        }
        if result.crashed {
            if let Ok(cid) = crash_id(&result.stack_frames) {
                if !self.snapshot.knows_crash(cid) && self.new_crashes.insert(cid) {
                    self.metrics.0[2] += 1;
                }
            }
        }
    }

    pub fn metrics(&self) -> MetricVector {
        self.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{CoverageMap, Frame};
    use alloc::vec;

    fn cov(pairs: &[(u64, u64)]) -> CoverageMap {
        pairs.iter().map(|&(e, c)| (EdgeId(e), c)).collect()
    }

    fn snapshot_with(pairs: &[(u64, u64)]) -> FuzzRecord {
        let mut m = FuzzRecord::new();
        m.merge(&ExecutionResult::ok(cov(pairs)));
        m
    }

    #[test]
    fn empty_pool_is_zero() {
        let snap = snapshot_with(&[(1, 3)]);
        let m = evaluate_pool(&[], &snap, &BTreeSet::new());
        assert_eq!(m, MetricVector([0, 0, 0, 0, 0]));
    }

    #[test]
    fn worked_example() {
        // Snapshot counts {e1:10, e2:2, e3:6}; pool covers {e2, e4}; e4 deep;
        // no crash; the pool's path is new. Threshold = 3.0, so e2 (2 < 3)
        // and e4 (absent, 0 < 3) are both less-frequent.
        let snap = snapshot_with(&[(1, 10), (2, 2), (3, 6)]);
        let deep: BTreeSet<EdgeId> = [EdgeId(4)].into_iter().collect();
        let pool = vec![ExecutionResult::ok(cov(&[(2, 1), (4, 1)]))];
        let m = evaluate_pool(&pool, &snap, &deep);
        assert_eq!(m, MetricVector([1, 1, 0, 1, 2]));
    }

    #[test]
    fn shared_new_crash_counts_once() {
        let snap = FuzzRecord::new();
        let frames = vec![Frame::new("boom", 1), Frame::new("mid", 2)];
        let pool = vec![
            ExecutionResult::crash(cov(&[(1, 1)]), frames.clone()).unwrap(),
            ExecutionResult::crash(cov(&[(2, 1)]), frames).unwrap(),
        ];
        let m = evaluate_pool(&pool, &snap, &BTreeSet::new());
        assert_eq!(m.new_unique_crashes(), 1);
    }

    #[test]
    fn known_crash_does_not_count() {
        let frames = vec![Frame::new("boom", 1)];
        let mut snap = FuzzRecord::new();
        snap.merge(&ExecutionResult::crash(cov(&[(1, 1)]), frames.clone()).unwrap());
        // Same crash id, same path/edges as snapshot, nothing rare or deep.
        let r = ExecutionResult::crash(cov(&[(1, 1)]), frames).unwrap();
        let m = evaluate_pool(core::slice::from_ref(&r), &snap, &BTreeSet::new());
        assert_eq!(m.new_unique_crashes(), 0);
        // c4: threshold is 0.5*1 = 0.5 and count 1 is not < 0.5 → 0.
        assert!(!is_beneficial(&r, &snap, &BTreeSet::new()));
    }

    #[test]
    fn tune_weights_single_discriminating_metric() {
        let mut map = BTreeMap::new();
        map.insert(FuzzerId::new("a"), MetricVector([4, 2, 0, 1, 1]));
        map.insert(FuzzerId::new("b"), MetricVector([0, 2, 0, 1, 1]));
        map.insert(FuzzerId::new("c"), MetricVector([2, 2, 0, 1, 1]));
        let w = tune_weights(&map);
        assert!((w.0[0] - 1.0).abs() < 1e-12);
        for j in 1..METRICS {
            assert_eq!(w.0[j], 0.0);
        }
    }

    #[test]
    fn tune_weights_degenerate_population_is_uniform() {
        let mut map = BTreeMap::new();
        map.insert(FuzzerId::new("solo"), MetricVector([7, 1, 0, 3, 2]));
        let w = tune_weights(&map);
        for j in 0..METRICS {
            assert!((w.0[j] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn tune_weights_two_equal_spreads() {
        let mut map = BTreeMap::new();
        map.insert(FuzzerId::new("a"), MetricVector([1, 0, 5, 5, 5]));
        map.insert(FuzzerId::new("b"), MetricVector([3, 2, 5, 5, 5]));
        let w = tune_weights(&map);
        assert!((w.0[0] - 0.5).abs() < 1e-12);
        assert!((w.0[1] - 0.5).abs() < 1e-12);
        assert_eq!(&w.0[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn reward_values() {
        let m = MetricVector([1, 1, 0, 1, 2]);
        assert!((reward(&m, &WeightVector::uniform()) - 1.0).abs() < 1e-12);
        assert_eq!(reward(&MetricVector::default(), &WeightVector::qualitative()), 0.0);
        let unit = WeightVector([1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((reward(&MetricVector([2, 0, 0, 0, 0]), &unit) - 2.0).abs() < 1e-12);
        // Qualitative reward is the plain sum.
        assert!((reward(&m, &WeightVector::qualitative()) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn benefit_from_deep_edge_alone() {
        let deep: BTreeSet<EdgeId> = [EdgeId(2)].into_iter().collect();
        // Covers only known edge 2 (deep), via a path the snapshot already
        // knows, to isolate c3.
        let mut snap2 = snapshot_with(&[(1, 1)]);
        snap2.merge(&ExecutionResult::ok(cov(&[(2, 1)])));
        let r = ExecutionResult::ok(cov(&[(2, 1)]));
        let m = evaluate_pool(core::slice::from_ref(&r), &snap2, &deep);
        assert_eq!(m.new_edges(), 0);
        assert_eq!(m.new_paths(), 0);
        assert_eq!(m.deep_edges(), 1);
        assert!(is_beneficial(&r, &snap2, &deep));
    }
}
