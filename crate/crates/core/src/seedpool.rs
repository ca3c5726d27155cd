//! Global and per-fuzzer seed pools with round-boundary synchronization.
//!
//! At round start every scheduled fuzzer receives a full copy of the global
//! pool; at round end each harvested seed is judged qualitatively against
//! the round-start record snapshot and the beneficial ones are uploaded.
//! Instances running the same base fuzzer within a round form one group and
//! share a sync channel; the partition is computed here, the channel itself
//! (a shared directory or a shared in-memory pool) belongs to the runtime.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::hash::fnv128;
use crate::ids::{EdgeId, FuzzerId, SeedId, UnitId};
use crate::record::{ExecutionResult, FuzzRecord};
use crate::scheduler::Schedule;
use crate::seedeval::is_beneficial;

/// Where a seed came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SeedOrigin {
    /// Part of the initial corpus.
    Initial,
    /// Produced by a base fuzzer.
    Fuzzer(FuzzerId),
}

/// One seed: payload bytes plus provenance. The id is a pure function of
/// the payload, so byte-identical seeds share one identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub id: SeedId,
    pub payload: Vec<u8>,
    pub origin: SeedOrigin,
    pub round_found: u32,
}

impl Seed {
    pub fn new(payload: Vec<u8>, origin: SeedOrigin, round_found: u32) -> Self {
        let id = SeedId(fnv128(&payload));
        Seed {
            id,
            payload,
            origin,
            round_found,
        }
    }

    /// The empty-payload seed used when no initial corpus is given.
    pub fn empty() -> Self {
        Seed::new(Vec::new(), SeedOrigin::Initial, 0)
    }
}

/// A deduplicated set of seeds keyed by content id.
#[derive(Debug, Clone, Default)]
pub struct SeedPool {
    seeds: BTreeMap<SeedId, Seed>,
}

impl SeedPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a seed; returns false when the id was already present.
    pub fn insert(&mut self, seed: Seed) -> bool {
        match self.seeds.entry(seed.id) {
            alloc::collections::btree_map::Entry::Vacant(v) => {
                v.insert(seed);
                true
            }
            alloc::collections::btree_map::Entry::Occupied(_) => false,
        }
    }

    pub fn contains(&self, id: SeedId) -> bool {
        self.seeds.contains_key(&id)
    }

    pub fn get(&self, id: SeedId) -> Option<&Seed> {
        self.seeds.get(&id)
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Seed> {
        self.seeds.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = SeedId> + '_ {
        self.seeds.keys().copied()
    }
}

impl FromIterator<Seed> for SeedPool {
    fn from_iter<T: IntoIterator<Item = Seed>>(iter: T) -> Self {
        let mut pool = SeedPool::new();
        for s in iter {
            pool.insert(s);
        }
        pool
    }
}

/// Distribute the global pool: every fuzzer holding at least one unit in
/// the schedule receives a full copy as its round-start local pool.
pub fn init_locals(global: &SeedPool, schedule: &Schedule) -> BTreeMap<FuzzerId, SeedPool> {
    schedule
        .scheduled_fuzzers()
        .into_iter()
        .map(|f| (f, global.clone()))
        .collect()
}

/// Partition the schedule's resource units by assigned fuzzer; each
/// partition shares one sync channel for the round.
pub fn group_units(schedule: &Schedule) -> BTreeMap<FuzzerId, BTreeSet<UnitId>> {
    let mut groups: BTreeMap<FuzzerId, BTreeSet<UnitId>> = BTreeMap::new();
    for (&unit, fuzzer) in &schedule.assignment {
        groups.entry(fuzzer.clone()).or_default().insert(unit);
    }
    groups
}

/// Outcome counters from one round-boundary synchronization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SyncStats {
    /// Seeds inserted into the global pool (after id dedup).
    pub uploaded: usize,
    /// Executions merged into the record.
    pub merged: usize,
}

/// Round-boundary synchronization with a custom benefit predicate
/// `(result, round_start_snapshot, deep) -> bool`.
///
/// Every execution is merged into the record; only seeds whose execution
/// the predicate approves are uploaded to the global pool.
pub fn sync_up_with<F>(
    global: &mut SeedPool,
    record: &mut FuzzRecord,
    locals: &BTreeMap<FuzzerId, Vec<(Seed, ExecutionResult)>>,
    deep: &BTreeSet<EdgeId>,
    benefit: F,
) -> SyncStats
where
    F: Fn(&ExecutionResult, &FuzzRecord, &BTreeSet<EdgeId>) -> bool,
{
    let snapshot = record.clone();
    let mut stats = SyncStats::default();
    for results in locals.values() {
        for (seed, result) in results {
            if benefit(result, &snapshot, deep) && global.insert(seed.clone()) {
                stats.uploaded += 1;
            }
            record.merge(result);
            stats.merged += 1;
        }
    }
    stats
}

/// Round-boundary synchronization under the standard multidimensional
/// benefit predicate.
pub fn sync_up(
    global: &mut SeedPool,
    record: &mut FuzzRecord,
    locals: &BTreeMap<FuzzerId, Vec<(Seed, ExecutionResult)>>,
    deep: &BTreeSet<EdgeId>,
) -> SyncStats {
    sync_up_with(global, record, locals, deep, is_beneficial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::CoverageMap;
    use crate::scheduler::Schedule;
    use alloc::vec;

    fn fid(s: &str) -> FuzzerId {
        FuzzerId::new(s)
    }

    fn cov(pairs: &[(u64, u64)]) -> CoverageMap {
        pairs.iter().map(|&(e, c)| (EdgeId(e), c)).collect()
    }

    fn schedule(units: &[(u32, &str)]) -> Schedule {
        let mut s = Schedule::default();
        for &(u, f) in units {
            s.assignment.insert(UnitId(u), fid(f));
        }
        s
    }

    #[test]
    fn seed_id_is_content_digest() {
        let a = Seed::new(vec![1, 2, 3], SeedOrigin::Initial, 0);
        let b = Seed::new(vec![1, 2, 3], SeedOrigin::Fuzzer(fid("x")), 4);
        assert_eq!(a.id, b.id);
        let mut pool = SeedPool::new();
        assert!(pool.insert(a));
        assert!(!pool.insert(b));
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn init_locals_full_copy() {
        let global: SeedPool = [
            Seed::new(vec![1], SeedOrigin::Initial, 0),
            Seed::new(vec![2], SeedOrigin::Initial, 0),
        ]
        .into_iter()
        .collect();
        let s = schedule(&[(0, "f1"), (1, "f2")]);
        let locals = init_locals(&global, &s);
        assert_eq!(locals.len(), 2);
        for pool in locals.values() {
            assert_eq!(pool.len(), 2);
        }
        let empty_locals = init_locals(&SeedPool::new(), &s);
        assert!(empty_locals.values().all(SeedPool::is_empty));
    }

    #[test]
    fn group_partition() {
        let s = schedule(&[(0, "f1"), (1, "f1"), (2, "f2")]);
        let groups = group_units(&s);
        assert_eq!(groups.len(), 2);
        assert_eq!(
            groups[&fid("f1")],
            [UnitId(0), UnitId(1)].into_iter().collect()
        );
        assert_eq!(groups[&fid("f2")], [UnitId(2)].into_iter().collect());

        let solo = schedule(&[(0, "f"), (1, "f"), (2, "f")]);
        assert_eq!(group_units(&solo).len(), 1);
    }

    #[test]
    fn sync_uploads_only_beneficial_but_merges_all() {
        let mut global = SeedPool::new();
        let mut record = FuzzRecord::new();
        record.merge(&ExecutionResult::ok(cov(&[(1, 8)])));
        let baseline_paths = record.paths_known();

        // Beneficial: new edge. Non-beneficial: re-covers edge 1 with a
        // bucket-identical count and no other novelty.
        let good = Seed::new(vec![b'g'], SeedOrigin::Fuzzer(fid("f1")), 1);
        let dull = Seed::new(vec![b'd'], SeedOrigin::Fuzzer(fid("f1")), 1);
        let locals: BTreeMap<_, _> = [(
            fid("f1"),
            vec![
                (good, ExecutionResult::ok(cov(&[(2, 1)]))),
                (dull, ExecutionResult::ok(cov(&[(1, 8)]))),
            ],
        )]
        .into_iter()
        .collect();
        let stats = sync_up(&mut global, &mut record, &locals, &BTreeSet::new());
        assert_eq!(stats.uploaded, 1);
        assert_eq!(stats.merged, 2);
        assert_eq!(global.len(), 1);
        // Both executions landed in the record.
        assert_eq!(record.coverage().get(EdgeId(1)), 16);
        assert_eq!(record.coverage().get(EdgeId(2)), 1);
        assert!(record.paths_known() > baseline_paths);
    }

    #[test]
    fn sync_dedups_identical_uploads_across_fuzzers() {
        let mut global = SeedPool::new();
        let mut record = FuzzRecord::new();
        let payload = vec![0xAA];
        let locals: BTreeMap<_, _> = [
            (
                fid("f1"),
                vec![(
                    Seed::new(payload.clone(), SeedOrigin::Fuzzer(fid("f1")), 1),
                    ExecutionResult::ok(cov(&[(5, 1)])),
                )],
            ),
            (
                fid("f2"),
                vec![(
                    Seed::new(payload, SeedOrigin::Fuzzer(fid("f2")), 1),
                    ExecutionResult::ok(cov(&[(5, 1)])),
                )],
            ),
        ]
        .into_iter()
        .collect();
        let stats = sync_up(&mut global, &mut record, &locals, &BTreeSet::new());
        assert_eq!(global.len(), 1);
        assert_eq!(stats.uploaded, 1);
        assert_eq!(stats.merged, 2);
    }

    #[test]
    fn sync_with_no_beneficial_seeds_still_updates_record() {
        let mut record = FuzzRecord::new();
        record.merge(&ExecutionResult::ok(cov(&[(1, 4)])));
        let mut global = SeedPool::new();
        let locals: BTreeMap<_, _> = [(
            fid("f"),
            vec![(
                Seed::new(vec![1], SeedOrigin::Fuzzer(fid("f")), 2),
                ExecutionResult::ok(cov(&[(1, 4)])),
            )],
        )]
        .into_iter()
        .collect();
        let before = record.coverage().get(EdgeId(1));
        let stats = sync_up(&mut global, &mut record, &locals, &BTreeSet::new());
        assert_eq!(stats.uploaded, 0);
        assert!(global.is_empty());
        assert_eq!(record.coverage().get(EdgeId(1)), before + 4);
    }

    #[test]
    fn benefit_is_judged_against_round_start_snapshot() {
        // Two fuzzers upload distinct seeds covering the same new edge;
        // both are beneficial because both are judged against the
        // round-start snapshot, not the evolving record.
        let mut global = SeedPool::new();
        let mut record = FuzzRecord::new();
        let locals: BTreeMap<_, _> = [
            (
                fid("a"),
                vec![(
                    Seed::new(vec![1], SeedOrigin::Fuzzer(fid("a")), 1),
                    ExecutionResult::ok(cov(&[(9, 1)])),
                )],
            ),
            (
                fid("b"),
                vec![(
                    Seed::new(vec![2], SeedOrigin::Fuzzer(fid("b")), 1),
                    ExecutionResult::ok(cov(&[(9, 2)])),
                )],
            ),
        ]
        .into_iter()
        .collect();
        let stats = sync_up(&mut global, &mut record, &locals, &BTreeSet::new());
        assert_eq!(stats.uploaded, 2);
    }
}
