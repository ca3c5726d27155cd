//! Discrete-event simulation runtime over a scenario.
//!
//! Instances of a base fuzzer draw exponential first-discovery times for
//! every reachable, uncovered edge of the regions their profile can work;
//! covering the last edge of a region opens its dependents for everyone in
//! the same sync group from that instant. Churn events produce seeds that
//! re-cover the known part of a region. Scripted events fire at fixed
//! virtual times for exact fixtures.
//!
//! Determinism: every instance owns a counter-keyed ChaCha stream derived
//! from (scenario seed, campaign seed, round, unit, spawn generation), and
//! all iteration is over ordered maps, so identical inputs replay the exact
//! event sequence regardless of harvest call patterns.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::collections::binary_heap::BinaryHeap;

use anyhow::{anyhow, Result};
use ensemble_core::hash::Fnv128;
use ensemble_core::record::{CoverageMap, ExecutionResult, Frame};
use ensemble_core::seedpool::{Seed, SeedOrigin, SeedPool};
use ensemble_core::{EdgeId, FuzzerId, SeedId, UnitId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::campaign::Runtime;
use crate::report::ClockKind;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    Discover {
        unit: UnitId,
        generation: u32,
        region: usize,
        edge: EdgeId,
    },
    Churn {
        unit: UnitId,
        generation: u32,
        region: usize,
    },
    Scripted {
        unit: UnitId,
        generation: u32,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap via Reverse: earliest time first, then insertion order.
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
struct Instance {
    fuzzer: FuzzerId,
    generation: u32,
    spawned_at: f64,
    stopped_at: Option<f64>,
    rng: ChaCha12Rng,
    buffer: Vec<(Seed, ExecutionResult)>,
    produced: u64,
}

#[derive(Debug, Default)]
struct Group {
    covered: BTreeSet<EdgeId>,
    open: BTreeSet<usize>,
    members: BTreeSet<UnitId>,
    events: BinaryHeap<std::cmp::Reverse<Event>>,
    scripted_claimed: bool,
}

/// Simulated adapter runtime. One per campaign.
pub struct SimRuntime {
    scenario: Scenario,
    campaign_seed: u64,
    round: u32,
    groups: BTreeMap<FuzzerId, Group>,
    instances: BTreeMap<UnitId, Instance>,
    generations: BTreeMap<UnitId, u32>,
    /// Coverage of every seed this world ever produced, for rebuilding
    /// group views from distributed pools.
    seed_coverage: BTreeMap<SeedId, BTreeSet<EdgeId>>,
    event_seq: u64,
    /// (round, virtual time) of every harvest call; lets tests assert that
    /// no monitoring happens before half of the round.
    pub harvest_log: Vec<(u32, f64)>,
}

impl SimRuntime {
    pub fn new(scenario: Scenario, campaign_seed: u64) -> Self {
        SimRuntime {
            scenario,
            campaign_seed,
            round: 0,
            groups: BTreeMap::new(),
            instances: BTreeMap::new(),
            generations: BTreeMap::new(),
            seed_coverage: BTreeMap::new(),
            event_seq: 0,
            harvest_log: Vec::new(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn stream_seed(&self, unit: UnitId, generation: u32) -> u64 {
        let mut h = Fnv128::new();
        h.write(b"sim-instance");
        h.write(&self.scenario.seed.to_le_bytes());
        h.write(&self.campaign_seed.to_le_bytes());
        h.write(&self.round.to_le_bytes());
        h.write(&unit.0.to_le_bytes());
        h.write(&generation.to_le_bytes());
        h.finish() as u64
    }

    fn region_open(scenario: &Scenario, covered: &BTreeSet<EdgeId>, idx: usize) -> bool {
        match &scenario.regions[idx].prereq {
            None => true,
            Some(p) => scenario
                .region(p)
                .map(|r| r.edges.iter().all(|e| covered.contains(e)))
                .unwrap_or(false),
        }
    }

    fn exp_draw(rng: &mut ChaCha12Rng, rate: f64) -> f64 {
        let u: f64 = rng.random();
        -(1.0 - u).ln() / rate
    }

    /// Queue discovery draws for one instance over one open region, plus a
    /// churn arm, starting at `from`.
    fn arm_region(
        scenario: &Scenario,
        event_seq: &mut u64,
        group: &mut Group,
        instance: &mut Instance,
        unit: UnitId,
        region_idx: usize,
        from: f64,
    ) {
        let region = &scenario.regions[region_idx];
        let profile = &scenario.profiles[&instance.fuzzer];
        let rate = profile.rates.get(&region.gate).copied().unwrap_or(0.0);
        if rate <= 0.0 {
            return;
        }
        for &edge in &region.edges {
            if group.covered.contains(&edge) {
                continue;
            }
            let dt = Self::exp_draw(&mut instance.rng, rate);
            *event_seq += 1;
            group.events.push(std::cmp::Reverse(Event {
                time: from + dt,
                seq: *event_seq,
                kind: EventKind::Discover {
                    unit,
                    generation: instance.generation,
                    region: region_idx,
                    edge,
                },
            }));
        }
        if profile.churn > 0.0 {
            let dt = Self::exp_draw(&mut instance.rng, profile.churn);
            *event_seq += 1;
            group.events.push(std::cmp::Reverse(Event {
                time: from + dt,
                seq: *event_seq,
                kind: EventKind::Churn {
                    unit,
                    generation: instance.generation,
                    region: region_idx,
                },
            }));
        }
    }

    /// Process all events of one group up to and including `to`.
    fn advance(&mut self, fuzzer: &FuzzerId, to: f64) {
        loop {
            let group = match self.groups.get_mut(fuzzer) {
                Some(g) => g,
                None => return,
            };
            let due = matches!(group.events.peek(), Some(std::cmp::Reverse(e)) if e.time <= to);
            if !due {
                return;
            }
            let std::cmp::Reverse(event) = group.events.pop().unwrap();
            self.process_event(fuzzer, event);
        }
    }

    fn process_event(&mut self, fuzzer: &FuzzerId, event: Event) {
        let scenario = &self.scenario;
        let (unit, generation) = match &event.kind {
            EventKind::Discover {
                unit, generation, ..
            }
            | EventKind::Churn {
                unit, generation, ..
            }
            | EventKind::Scripted {
                unit, generation, ..
            } => (*unit, *generation),
        };
        {
            let instance = match self.instances.get(&unit) {
                Some(i) => i,
                None => return,
            };
            if instance.generation != generation || instance.stopped_at.is_some() {
                return; // stale event from a replaced or stopped instance
            }
        }

        let group = self.groups.get_mut(fuzzer).expect("group exists");
        let instance = self.instances.get_mut(&unit).expect("instance exists");

        let (edges, tag, rearm_churn, new_edge): (BTreeSet<EdgeId>, String, Option<usize>, bool) =
            match &event.kind {
                EventKind::Discover { region, edge, .. } => {
                    if group.covered.contains(edge) {
                        return; // a group mate got there first
                    }
                    let r = &scenario.regions[*region];
                    let mut edges: BTreeSet<EdgeId> = scenario
                        .chain_edges(r)
                        .into_iter()
                        .filter(|e| group.covered.contains(e))
                        .collect();
                    edges.extend(r.edges.iter().filter(|e| group.covered.contains(e)));
                    edges.insert(*edge);
                    (edges, format!("d{edge}"), None, true)
                }
                EventKind::Churn { region, .. } => {
                    // Churn works the region itself; the prerequisite chain
                    // is not re-traversed, so saturated stages stop looking
                    // beneficial once their hit counts even out.
                    let r = &scenario.regions[*region];
                    let edges: BTreeSet<EdgeId> = r
                        .edges
                        .iter()
                        .filter(|e| group.covered.contains(e))
                        .copied()
                        .collect();
                    (edges, format!("c{region}"), Some(*region), false)
                }
                EventKind::Scripted { index, .. } => {
                    let ev = &scenario.profiles[fuzzer].scripted[*index];
                    let edges: BTreeSet<EdgeId> = ev.edges.iter().map(|&e| EdgeId(e)).collect();
                    (edges, format!("s{index}"), None, true)
                }
            };

        // Churn over a region nothing has reached yet produces nothing.
        if !edges.is_empty() {
            let forced_crash = matches!(&event.kind, EventKind::Scripted { index, .. }
                if scenario.profiles[fuzzer].scripted[*index].crash);
            let mut crashed_at: Option<EdgeId> = None;
            if forced_crash {
                crashed_at = edges.iter().next().copied();
            } else {
                for (&site, &prob) in &scenario.crash_sites {
                    if edges.contains(&site) {
                        let u: f64 = instance.rng.random();
                        if u < prob {
                            crashed_at = Some(site);
                            break;
                        }
                    }
                }
            }
            instance.produced += 1;
            let payload = format!(
                "{}:r{}:u{}:g{}:{}:{}",
                fuzzer, self.round, unit.0, generation, tag, instance.produced
            );
            let seed = Seed::new(payload.into_bytes(), SeedOrigin::Fuzzer(fuzzer.clone()), self.round);
            let coverage: CoverageMap = edges.iter().map(|&e| (e, 1)).collect();
            let result = match crashed_at {
                Some(site) => {
                    let frames = vec![
                        Frame::new(format!("crash_site_{site}"), 0x10),
                        Frame::new(format!("guard_{site}"), 0x24),
                        Frame::new(format!("dispatch_{site}"), 0x38),
                        Frame::new(format!("variant_{}", instance.produced), 0x4c),
                    ];
                    ExecutionResult::crash(coverage, frames).expect("frames nonempty")
                }
                None => ExecutionResult::ok(coverage),
            };
            self.seed_coverage.insert(seed.id, edges.clone());
            instance.buffer.push((seed, result));

            if new_edge {
                let before_open = group.open.clone();
                group.covered.extend(edges.iter().copied());
                let newly_open: Vec<usize> = (0..scenario.regions.len())
                    .filter(|&i| {
                        !before_open.contains(&i)
                            && !group.open.contains(&i)
                            && Self::region_open(scenario, &group.covered, i)
                    })
                    .collect();
                for idx in newly_open {
                    group.open.insert(idx);
                    let members: Vec<UnitId> = group
                        .members
                        .iter()
                        .copied()
                        .filter(|u| {
                            self.instances
                                .get(u)
                                .map(|i| i.stopped_at.is_none())
                                .unwrap_or(false)
                        })
                        .collect();
                    for member in members {
                        let inst = self.instances.get_mut(&member).expect("live member");
                        Self::arm_region(
                            scenario,
                            &mut self.event_seq,
                            group,
                            inst,
                            member,
                            idx,
                            event.time,
                        );
                    }
                }
            }
        }

        if let Some(region) = rearm_churn {
            let instance = self.instances.get_mut(&unit).expect("instance exists");
            let group = self.groups.get_mut(fuzzer).expect("group exists");
            let churn = scenario.profiles[fuzzer].churn;
            if churn > 0.0 {
                let dt = Self::exp_draw(&mut instance.rng, churn);
                self.event_seq += 1;
                group.events.push(std::cmp::Reverse(Event {
                    time: event.time + dt,
                    seq: self.event_seq,
                    kind: EventKind::Churn {
                        unit,
                        generation,
                        region,
                    },
                }));
            }
        }
    }

    fn fuzzer_of(&self, unit: UnitId) -> Option<FuzzerId> {
        self.instances.get(&unit).map(|i| i.fuzzer.clone())
    }
}

impl Runtime for SimRuntime {
    fn begin_round(
        &mut self,
        round: u32,
        locals: &BTreeMap<FuzzerId, SeedPool>,
    ) -> Result<()> {
        self.round = round;
        self.groups.clear();
        self.instances.clear();
        self.generations.clear();
        for (fuzzer, pool) in locals {
            if !self.scenario.profiles.contains_key(fuzzer) {
                return Err(anyhow!("no profile for fuzzer {fuzzer} in scenario"));
            }
            let mut covered: BTreeSet<EdgeId> = BTreeSet::new();
            for id in pool.ids() {
                if let Some(edges) = self.seed_coverage.get(&id) {
                    covered.extend(edges.iter().copied());
                }
            }
            let open: BTreeSet<usize> = (0..self.scenario.regions.len())
                .filter(|&i| Self::region_open(&self.scenario, &covered, i))
                .collect();
            self.groups.insert(
                fuzzer.clone(),
                Group {
                    covered,
                    open,
                    members: BTreeSet::new(),
                    events: BinaryHeap::new(),
                    scripted_claimed: false,
                },
            );
        }
        Ok(())
    }

    fn spawn(&mut self, unit: UnitId, fuzzer: &FuzzerId, now: f64) -> Result<()> {
        if self
            .instances
            .get(&unit)
            .map(|i| i.stopped_at.is_none())
            .unwrap_or(false)
        {
            return Err(anyhow!("unit {unit} is occupied"));
        }
        if !self.groups.contains_key(fuzzer) {
            return Err(anyhow!("fuzzer {fuzzer} has no group this round"));
        }
        let generation = {
            let g = self.generations.entry(unit).or_insert(0);
            *g += 1;
            *g
        };
        let rng = ChaCha12Rng::seed_from_u64(self.stream_seed(unit, generation));
        let mut instance = Instance {
            fuzzer: fuzzer.clone(),
            generation,
            spawned_at: now,
            stopped_at: None,
            rng,
            buffer: Vec::new(),
            produced: 0,
        };
        let group = self.groups.get_mut(fuzzer).expect("checked above");
        group.members.insert(unit);
        let open: Vec<usize> = group.open.iter().copied().collect();
        for idx in open {
            Self::arm_region(
                &self.scenario,
                &mut self.event_seq,
                group,
                &mut instance,
                unit,
                idx,
                now,
            );
        }
        if !group.scripted_claimed {
            group.scripted_claimed = true;
            let profile = &self.scenario.profiles[fuzzer];
            for (index, ev) in profile.scripted.iter().enumerate() {
                if ev.round == self.round {
                    self.event_seq += 1;
                    group.events.push(std::cmp::Reverse(Event {
                        time: ev.at,
                        seq: self.event_seq,
                        kind: EventKind::Scripted {
                            unit,
                            generation,
                            index,
                        },
                    }));
                }
            }
        }
        self.instances.insert(unit, instance);
        Ok(())
    }

    fn alive(&mut self, unit: UnitId, _now: f64) -> bool {
        self.instances
            .get(&unit)
            .map(|i| i.stopped_at.is_none())
            .unwrap_or(false)
    }

    fn harvest(&mut self, unit: UnitId, now: f64) -> Result<Vec<(Seed, ExecutionResult)>> {
        self.harvest_log.push((self.round, now));
        if let Some(fuzzer) = self.fuzzer_of(unit) {
            self.advance(&fuzzer, now);
        }
        Ok(self
            .instances
            .get_mut(&unit)
            .map(|i| std::mem::take(&mut i.buffer))
            .unwrap_or_default())
    }

    fn stop(&mut self, unit: UnitId, now: f64) -> f64 {
        let fuzzer = match self.fuzzer_of(unit) {
            Some(f) => f,
            None => return 0.0,
        };
        if let Some(i) = self.instances.get(&unit) {
            if let Some(stopped) = i.stopped_at {
                return stopped - i.spawned_at;
            }
        }
        self.advance(&fuzzer, now);
        let instance = self.instances.get_mut(&unit).expect("instance exists");
        instance.stopped_at = Some(now);
        now - instance.spawned_at
    }

    fn end_round(&mut self) -> Result<()> {
        self.groups.clear();
        self.instances.clear();
        self.generations.clear();
        Ok(())
    }

    fn wait_until(&mut self, _now: f64) {}

    fn clock_kind(&self) -> ClockKind {
        ClockKind::Virtual
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::gen_handoff;

    fn pool_with(seeds: &[Seed]) -> SeedPool {
        seeds.iter().cloned().collect()
    }

    #[test]
    fn spawn_on_occupied_unit_errors() {
        let scenario = gen_handoff(3);
        let mut world = SimRuntime::new(scenario, 1);
        let gen = FuzzerId::new("gen");
        let locals: BTreeMap<_, _> = [(gen.clone(), pool_with(&[Seed::empty()]))]
            .into_iter()
            .collect();
        world.begin_round(1, &locals).unwrap();
        world.spawn(UnitId(0), &gen, 0.0).unwrap();
        assert!(world.spawn(UnitId(0), &gen, 0.0).is_err());
    }

    #[test]
    fn harvests_are_disjoint_and_deterministic() {
        let scenario = gen_handoff(3);
        let run = |campaign_seed: u64| {
            let mut world = SimRuntime::new(scenario.clone(), campaign_seed);
            let gen = FuzzerId::new("gen");
            let locals: BTreeMap<_, _> = [(gen.clone(), pool_with(&[Seed::empty()]))]
                .into_iter()
                .collect();
            world.begin_round(1, &locals).unwrap();
            world.spawn(UnitId(0), &gen, 0.0).unwrap();
            let h1 = world.harvest(UnitId(0), 300.0).unwrap();
            let h2 = world.harvest(UnitId(0), 300.0).unwrap();
            assert!(h2.is_empty(), "second harvest at same instant not empty");
            let h3 = world.harvest(UnitId(0), 600.0).unwrap();
            let held = world.stop(UnitId(0), 600.0);
            assert_eq!(held, 600.0);
            let residue = world.harvest(UnitId(0), 600.0).unwrap();
            assert!(residue.is_empty());
            let ids1: Vec<SeedId> = h1.iter().map(|(s, _)| s.id).collect();
            let ids3: Vec<SeedId> = h3.iter().map(|(s, _)| s.id).collect();
            for i in &ids1 {
                assert!(!ids3.contains(i), "seed returned twice");
            }
            (ids1, ids3)
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a, b, "identical inputs must replay identically");
        let c = run(8);
        assert_ne!(a, c, "different campaign seed should differ");
    }

    #[test]
    fn handoff_gating_locks_solver_until_format_done() {
        let scenario = gen_handoff(5);
        let sym = FuzzerId::new("sym");
        let mut world = SimRuntime::new(scenario, 2);
        let locals: BTreeMap<_, _> = [(sym.clone(), pool_with(&[Seed::empty()]))]
            .into_iter()
            .collect();
        world.begin_round(1, &locals).unwrap();
        world.spawn(UnitId(0), &sym, 0.0).unwrap();
        // Solver fuzzer alone: the format chain never opens, so nothing
        // is ever produced no matter how long it runs.
        let h = world.harvest(UnitId(0), 1e7).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn double_stop_is_idempotent() {
        let scenario = gen_handoff(3);
        let gen = FuzzerId::new("gen");
        let mut world = SimRuntime::new(scenario, 1);
        let locals: BTreeMap<_, _> = [(gen.clone(), pool_with(&[Seed::empty()]))]
            .into_iter()
            .collect();
        world.begin_round(1, &locals).unwrap();
        world.spawn(UnitId(0), &gen, 0.0).unwrap();
        let a = world.stop(UnitId(0), 300.0);
        let b = world.stop(UnitId(0), 600.0);
        assert_eq!(a, 300.0);
        assert_eq!(b, 300.0);
    }

    #[test]
    fn group_mates_share_discoveries() {
        // Two instances of the same fuzzer: an edge found by one is never
        // "re-discovered" by the other (its pending draw goes stale), so
        // their harvests never repeat an edge as a new discovery.
        let scenario = gen_handoff(11);
        let gen = FuzzerId::new("gen");
        let mut world = SimRuntime::new(scenario, 4);
        let locals: BTreeMap<_, _> = [(gen.clone(), pool_with(&[Seed::empty()]))]
            .into_iter()
            .collect();
        world.begin_round(1, &locals).unwrap();
        world.spawn(UnitId(0), &gen, 0.0).unwrap();
        world.spawn(UnitId(1), &gen, 0.0).unwrap();
        let mut seen_discoveries: BTreeSet<String> = BTreeSet::new();
        for unit in [UnitId(0), UnitId(1)] {
            for (seed, _) in world.harvest(unit, 6000.0).unwrap() {
                let payload = String::from_utf8(seed.payload).unwrap();
                if let Some(idx) = payload.find(":d") {
                    let tag: String = payload[idx + 1..]
                        .chars()
                        .take_while(|c| *c != ':')
                        .collect();
                    assert!(
                        seen_discoveries.insert(tag.clone()),
                        "edge discovered twice in one group: {tag}"
                    );
                }
            }
        }
        assert!(!seen_discoveries.is_empty());
    }
}
