//! The campaign coordinator: initialization, the round loop with mid-round
//! monitoring and fine-tuning, feedback, synchronization, and the final
//! report.
//!
//! One round proceeds as: build the schedule (per policy), distribute the
//! global pool to the scheduled fuzzers' groups, spawn per unit, then — for
//! fine-tuning policies — harvest at half of the round and every
//! monitor interval after that. An instance that produced nothing
//! beneficial in the last window is stopped and its unit respawned for the
//! fuzzer with the highest qualitative reward so far this round; when no
//! fuzzer is still producing, the round terminates early. Pull counts are
//! time-weighted by the fraction of the round each unit was held.
//!
//! The coordinator owns all state transitions; the runtime only runs
//! instances and reports what they produced.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::Result;
use ensemble_core::record::{crash_id, CrashId, ExecutionResult, FuzzRecord};
use ensemble_core::scheduler::{self, Reassignment, Schedule, SchedulerState};
use ensemble_core::seedeval::{self, MetricVector, PoolEvaluator, WeightVector};
use ensemble_core::seedpool::{self, Seed, SeedPool};
use ensemble_core::{EdgeId, FuzzerId, UnitId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::config::CampaignParams;
use crate::policy::{EvalStrategy, Policy};
use crate::report::{
    CampaignReport, ClockKind, ConfigEcho, CrashBucket, FuzzerSummary, LogRecord, ReportSink,
    RoundFuzzerLog, RoundLog, RoundStats, Totals, SCHEMA_VERSION,
};

/// Fraction of the round spent profiling under the prep/focus policy.
pub const PREP_FRACTION: f64 = 0.5;

/// What the campaign loop needs from an adapter runtime.
///
/// `now` is seconds since the start of the current round. Virtual-clock
/// runtimes make `wait_until` a no-op; wall-clock runtimes sleep.
pub trait Runtime {
    fn begin_round(&mut self, round: u32, locals: &BTreeMap<FuzzerId, SeedPool>) -> Result<()>;
    fn spawn(&mut self, unit: UnitId, fuzzer: &FuzzerId, now: f64) -> Result<()>;
    fn alive(&mut self, unit: UnitId, now: f64) -> bool;
    fn harvest(&mut self, unit: UnitId, now: f64) -> Result<Vec<(Seed, ExecutionResult)>>;
    /// Stop the unit's instance; returns seconds held. Idempotent.
    fn stop(&mut self, unit: UnitId, now: f64) -> f64;
    fn end_round(&mut self) -> Result<()>;
    fn wait_until(&mut self, now: f64);
    fn clock_kind(&self) -> ClockKind;
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
    #[error("report sink: {0}")]
    Sink(#[from] crate::report::ReportError),
    #[error("scheduler: {0}")]
    Scheduler(#[from] scheduler::SchedulerError),
}

/// Everything a campaign needs besides the runtime.
#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub params: CampaignParams,
    pub policy: Policy,
    pub fuzzers: Vec<FuzzerId>,
    pub deep: BTreeSet<EdgeId>,
    /// Initial corpus; when empty, the single empty-payload seed stands in.
    pub initial: SeedPool,
    /// Scenario seed echoed into the report (simulation mode).
    pub scenario_seed: Option<u64>,
}

/// Run a full campaign and build the consolidated report.
pub fn run_campaign<R: Runtime>(
    setup: &CampaignSetup,
    runtime: &mut R,
    sink: &mut dyn ReportSink,
) -> Result<CampaignReport, CampaignError> {
    setup
        .params
        .validate()
        .map_err(|e| CampaignError::Setup(e.to_string()))?;
    if setup.fuzzers.is_empty() {
        return Err(CampaignError::Setup("no fuzzers".into()));
    }
    let params = setup.params;
    let strategy = setup.policy.eval_strategy();

    let mut global = setup.initial.clone();
    if global.is_empty() {
        global.insert(Seed::empty());
    }
    let mut record = FuzzRecord::new();
    let mut state = SchedulerState::new(setup.fuzzers.iter().cloned());
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut logs: Vec<RoundLog> = Vec::new();
    let mut buckets: BTreeMap<CrashId, CrashBucket> = BTreeMap::new();
    let mut pulls_total: BTreeMap<FuzzerId, f64> = BTreeMap::new();
    let mut duration_total = 0.0;

    let echo = ConfigEcho {
        policy: setup.policy.name().to_string(),
        seed: params.seed,
        scenario_seed: setup.scenario_seed,
        units: params.units,
        rounds: params.rounds,
        round_time: params.round_time,
        monitor_time: params.monitor_time,
        rho: params.rho,
        fuzzers: setup.fuzzers.clone(),
        deep_edges: setup.deep.len(),
    };
    sink.record(&LogRecord::Config {
        schema_version: SCHEMA_VERSION,
        clock: runtime.clock_kind(),
        config: echo.clone(),
    })?;

    for round in 1..=params.rounds {
        let schedule = build_schedule(setup, &mut state, &mut rng, round)?;
        let locals = seedpool::init_locals(&global, &schedule);
        runtime.begin_round(round, &locals)?;
        let outcome = run_round(setup, runtime, &schedule, &record, round)?;
        runtime.end_round()?;
        duration_total += outcome.duration;

        // Per-fuzzer metric vectors against the round-start snapshot;
        // fuzzers that ran but produced nothing score the zero vector.
        let mut metrics = BTreeMap::new();
        for fuzzer in outcome.pulls.keys() {
            metrics.insert(
                fuzzer.clone(),
                outcome.metrics.get(fuzzer).copied().unwrap_or_default(),
            );
        }
        let theta = strategy.reward_weights(seedeval::tune_weights(&metrics));
        let mut gamma_new: BTreeMap<FuzzerId, f64> = BTreeMap::new();
        for (fuzzer, m) in &metrics {
            gamma_new.insert(fuzzer.clone(), seedeval::reward(m, &theta));
        }
        if setup.policy.uses_feedback() {
            scheduler::feedback(&mut state, &metrics, &theta, &outcome.pulls)?;
        }

        // Crash buckets, before the harvests move into sync.
        for results in outcome.harvests.values() {
            for (seed, result) in results {
                if !result.crashed {
                    continue;
                }
                if let Ok(cid) = crash_id(&result.stack_frames) {
                    let bucket = buckets.entry(cid).or_insert_with(|| CrashBucket {
                        id: cid,
                        frames: result.stack_frames.iter().take(3).cloned().collect(),
                        representatives: BTreeSet::new(),
                        events: 0,
                        first_round: round,
                    });
                    bucket.events += 1;
                    bucket.representatives.insert(seed.id);
                }
            }
        }

        // Upload beneficial seeds and fold every execution into M.
        seedpool::sync_up_with(
            &mut global,
            &mut record,
            &outcome.harvests,
            &setup.deep,
            |r, m, d| strategy.is_beneficial(r, m, d),
        );

        for (fuzzer, &pull) in &outcome.pulls {
            *pulls_total.entry(fuzzer.clone()).or_insert(0.0) += pull;
        }

        let mut fuzzer_logs = BTreeMap::new();
        for (fuzzer, &pull) in &outcome.pulls {
            fuzzer_logs.insert(
                fuzzer.clone(),
                RoundFuzzerLog {
                    c: metrics.get(fuzzer).copied().unwrap_or_default(),
                    gamma_new: gamma_new.get(fuzzer).copied().unwrap_or(0.0),
                    pulls: pull,
                    units_held: schedule.units_of(fuzzer).len() as u32,
                },
            );
        }
        let log = RoundLog {
            round,
            assignment: schedule.assignment.clone(),
            primed_units: schedule.primed_units.clone(),
            reassignments: outcome.reassignments,
            theta,
            fuzzers: fuzzer_logs,
            stats: RoundStats {
                edges: record.edges_covered(),
                paths: record.paths_known(),
                unique_crashes: record.unique_crashes(),
                crash_events: record.crash_total(),
                global_seeds: global.len(),
            },
            early_termination: outcome.early_termination,
            duration: outcome.duration,
        };
        sink.record(&LogRecord::Round {
            round: Box::new(log.clone()),
        })?;
        logs.push(log);
    }

    let totals = Totals {
        edges: record.edges_covered(),
        paths: record.paths_known(),
        unique_crashes: record.unique_crashes(),
        crash_events: record.crash_total(),
        global_seeds: global.len(),
    };
    let budget = params.units as f64 * params.rounds as f64;
    let fuzzer_summary: BTreeMap<FuzzerId, FuzzerSummary> = pulls_total
        .iter()
        .map(|(f, &p)| {
            (
                f.clone(),
                FuzzerSummary {
                    pulls_total: p,
                    share: p / budget,
                },
            )
        })
        .collect();
    let crashes: Vec<CrashBucket> = buckets.into_values().collect();
    sink.record(&LogRecord::Final {
        duration_seconds: duration_total,
        totals,
        fuzzer_summary: fuzzer_summary.clone(),
        crashes: crashes.clone(),
    })?;

    Ok(CampaignReport {
        schema_version: SCHEMA_VERSION,
        config: echo,
        clock: runtime.clock_kind(),
        duration_seconds: duration_total,
        totals,
        fuzzer_summary,
        rounds: logs,
        crashes,
    })
}

fn build_schedule(
    setup: &CampaignSetup,
    state: &mut SchedulerState,
    rng: &mut ChaCha12Rng,
    _round: u32,
) -> Result<Schedule, CampaignError> {
    let units = setup.params.units;
    let fuzzers = &setup.fuzzers;
    let schedule = match setup.policy {
        Policy::Legion | Policy::Cov => scheduler::schedule_round(state, units, rng)?,
        Policy::Ns => {
            let mut s = Schedule::default();
            for unit in 0..units {
                let pick = rng.random_range(0..fuzzers.len());
                s.assignment.insert(UnitId(unit), fuzzers[pick].clone());
            }
            s
        }
        Policy::Fixed => {
            let mut s = Schedule::default();
            let n = fuzzers.len() as u32;
            let per = units / n;
            let rem = (units % n) as usize;
            let mut unit = 0;
            for (idx, fuzzer) in fuzzers.iter().enumerate() {
                let mine = per + if idx < rem { 1 } else { 0 };
                for _ in 0..mine {
                    s.assignment.insert(UnitId(unit), fuzzer.clone());
                    unit += 1;
                }
            }
            if s.assignment.is_empty() {
                return Err(CampaignError::Setup(
                    "fixed policy needs at least one unit per fuzzer or fewer fuzzers".into(),
                ));
            }
            s
        }
        Policy::PrepFocus => {
            let mut s = Schedule::default();
            for unit in 0..units {
                let fuzzer = &fuzzers[(unit as usize) % fuzzers.len()];
                s.assignment.insert(UnitId(unit), fuzzer.clone());
            }
            s
        }
    };
    Ok(schedule)
}

/// Stop every live unit at `t` and collect the flush residue, attributing
/// it to the instance's holder at stop time.
fn final_collect<R: Runtime>(driver: &mut RoundDriver<'_, R>, t: f64) {
    let units: Vec<UnitId> = driver.units.keys().copied().collect();
    for unit in units {
        let holder = driver.units.get(&unit).map(|(f, _)| f.clone());
        driver.stop(unit, t);
        let batch = match driver.runtime.harvest(unit, t) {
            Ok(b) => b,
            Err(err) => {
                eprintln!("warn: final harvest of unit {unit} failed: {err:#}");
                Vec::new()
            }
        };
        if let (Some(holder), false) = (holder, batch.is_empty()) {
            driver.harvests.entry(holder).or_default().extend(batch);
        }
    }
}

struct RoundOutcome {
    /// Per fuzzer: everything its instances produced this round.
    harvests: BTreeMap<FuzzerId, Vec<(Seed, ExecutionResult)>>,
    /// Metric vectors of the round pools against the round-start snapshot.
    metrics: BTreeMap<FuzzerId, MetricVector>,
    /// Time-weighted pulls of every fuzzer that held a unit.
    pulls: BTreeMap<FuzzerId, f64>,
    reassignments: Vec<Reassignment>,
    early_termination: bool,
    duration: f64,
}

struct RoundDriver<'s, R: Runtime> {
    runtime: &'s mut R,
    round_time: f64,
    snapshot: &'s FuzzRecord,
    deep: &'s BTreeSet<EdgeId>,
    strategy: EvalStrategy,
    /// Current holder and its spawn time, per live unit.
    units: BTreeMap<UnitId, (FuzzerId, f64)>,
    harvests: BTreeMap<FuzzerId, Vec<(Seed, ExecutionResult)>>,
    /// Incremental per-fuzzer pool metrics, kept in lockstep with
    /// `harvests` so mid-round reward queries stay cheap.
    evaluators: BTreeMap<FuzzerId, PoolEvaluator<'s>>,
    pulls: BTreeMap<FuzzerId, f64>,
    reassignments: Vec<Reassignment>,
}

impl<'s, R: Runtime> RoundDriver<'s, R> {
    fn spawn(&mut self, unit: UnitId, fuzzer: &FuzzerId, now: f64) {
        match self.runtime.spawn(unit, fuzzer, now) {
            Ok(()) => {
                self.units.insert(unit, (fuzzer.clone(), now));
            }
            Err(err) => {
                // A failed launch degrades to an instance that produces
                // nothing; the campaign must not abort.
                eprintln!("warn: spawn {fuzzer} on unit {unit} failed: {err:#}");
            }
        }
    }

    fn absorb(&mut self, fuzzer: &FuzzerId, batch: &[(Seed, ExecutionResult)]) {
        if batch.is_empty() {
            return;
        }
        let evaluator = self
            .evaluators
            .entry(fuzzer.clone())
            .or_insert_with(|| PoolEvaluator::new(self.snapshot, self.deep));
        for (_, result) in batch {
            evaluator.add(result);
        }
        self.harvests
            .entry(fuzzer.clone())
            .or_default()
            .extend(batch.iter().cloned());
    }

    /// Harvest one unit, appending to the fuzzer's pool; returns the fresh
    /// batch.
    fn harvest(&mut self, unit: UnitId, now: f64) -> Vec<(Seed, ExecutionResult)> {
        let fuzzer = match self.units.get(&unit) {
            Some((f, _)) => f.clone(),
            None => return Vec::new(),
        };
        let batch = match self.runtime.harvest(unit, now) {
            Ok(b) => b,
            Err(err) => {
                eprintln!("warn: harvest of unit {unit} failed: {err:#}");
                Vec::new()
            }
        };
        self.absorb(&fuzzer, &batch);
        batch
    }

    /// Stop a unit's instance, crediting its held time.
    fn stop(&mut self, unit: UnitId, now: f64) {
        if let Some((fuzzer, _)) = self.units.remove(&unit) {
            let held = self.runtime.stop(unit, now);
            *self.pulls.entry(fuzzer).or_insert(0.0) += held / self.round_time;
        }
    }

    fn held_units(&self) -> BTreeMap<FuzzerId, u32> {
        let mut held: BTreeMap<FuzzerId, u32> = BTreeMap::new();
        for (fuzzer, _) in self.units.values() {
            *held.entry(fuzzer.clone()).or_insert(0) += 1;
        }
        held
    }

    fn metrics(&self) -> BTreeMap<FuzzerId, MetricVector> {
        self.evaluators
            .iter()
            .map(|(f, e)| (f.clone(), e.metrics()))
            .collect()
    }

    /// Qualitative per-fuzzer rewards accumulated so far this round.
    fn round_rewards(&self) -> BTreeMap<FuzzerId, f64> {
        self.evaluators
            .iter()
            .map(|(f, e)| {
                let m = e.metrics();
                let reward = match self.strategy {
                    EvalStrategy::Multidimensional => {
                        seedeval::reward(&m, &WeightVector::qualitative())
                    }
                    EvalStrategy::PathOnly => m.new_paths() as f64,
                };
                (f.clone(), reward)
            })
            .collect()
    }
}

fn run_round<R: Runtime>(
    setup: &CampaignSetup,
    runtime: &mut R,
    schedule: &Schedule,
    snapshot: &FuzzRecord,
    _round: u32,
) -> Result<RoundOutcome, CampaignError> {
    let params = setup.params;
    let strategy = setup.policy.eval_strategy();
    let round_time = params.round_time;
    let mut driver = RoundDriver {
        runtime,
        round_time,
        snapshot,
        deep: &setup.deep,
        strategy,
        units: BTreeMap::new(),
        harvests: BTreeMap::new(),
        evaluators: BTreeMap::new(),
        pulls: BTreeMap::new(),
        reassignments: Vec::new(),
    };

    for (&unit, fuzzer) in &schedule.assignment {
        driver.spawn(unit, fuzzer, 0.0);
    }

    let mut early_termination = false;
    let mut duration = round_time;

    match setup.policy {
        Policy::PrepFocus => {
            // Profile everyone for the prep phase, then hand every unit to
            // the phase winner.
            let switch = PREP_FRACTION * round_time;
            driver.runtime.wait_until(switch);
            let units: Vec<UnitId> = driver.units.keys().copied().collect();
            for unit in &units {
                driver.harvest(*unit, switch);
            }
            let rewards = driver.round_rewards();
            let running: BTreeSet<FuzzerId> =
                driver.units.values().map(|(f, _)| f.clone()).collect();
            let held = driver.held_units();
            let winner = scheduler::retarget(&rewards, &running, &held);
            if let Some(winner) = winner {
                for unit in units {
                    let from = driver.units.get(&unit).map(|(f, _)| f.clone());
                    driver.stop(unit, switch);
                    if let Some(from) = from {
                        if from != winner {
                            driver.reassignments.push(Reassignment {
                                time_frac: switch / round_time,
                                unit,
                                from,
                                to: winner.clone(),
                            });
                        }
                    }
                    driver.spawn(unit, &winner, switch);
                }
            }
        }
        Policy::Legion | Policy::Cov => {
            // Monitoring starts at half of the round (bootstrap window) and
            // checks every monitor interval after that.
            let half = round_time / 2.0;
            let mut tick_index = 0u32;
            loop {
                let tick = half + tick_index as f64 * params.monitor_time;
                if tick >= round_time {
                    break;
                }
                driver.runtime.wait_until(tick);
                let units: Vec<UnitId> = driver.units.keys().copied().collect();
                let mut window: BTreeMap<UnitId, Vec<(Seed, ExecutionResult)>> = BTreeMap::new();
                for &unit in &units {
                    let batch = driver.harvest(unit, tick);
                    window.insert(unit, batch);
                }
                if tick_index == 0 {
                    // First look covers everything since spawn; dryness is
                    // judged from the next full window on.
                    tick_index += 1;
                    continue;
                }
                let mut dry: Vec<UnitId> = Vec::new();
                for &unit in &units {
                    let produced_benefit = window[&unit].iter().any(|(_, r)| {
                        strategy.is_beneficial(r, snapshot, &setup.deep)
                    });
                    let live = driver.runtime.alive(unit, tick);
                    if !produced_benefit || !live {
                        dry.push(unit);
                    }
                }
                if !dry.is_empty() {
                    let dry_set: BTreeSet<UnitId> = dry.iter().copied().collect();
                    let running: BTreeSet<FuzzerId> = driver
                        .units
                        .iter()
                        .filter(|(u, _)| !dry_set.contains(u))
                        .map(|(_, (f, _))| f.clone())
                        .collect();
                    let rewards = driver.round_rewards();
                    let mut terminated = false;
                    for unit in dry {
                        let held = driver.held_units();
                        let target = scheduler::retarget(&rewards, &running, &held);
                        match target {
                            None => {
                                terminated = true;
                                break;
                            }
                            Some(to) => {
                                let from =
                                    driver.units.get(&unit).map(|(f, _)| f.clone());
                                driver.stop(unit, tick);
                                if let Some(from) = from {
                                    driver.reassignments.push(Reassignment {
                                        time_frac: tick / round_time,
                                        unit,
                                        from,
                                        to: to.clone(),
                                    });
                                }
                                driver.spawn(unit, &to, tick);
                            }
                        }
                    }
                    if terminated {
                        // Nobody is producing: stop everything, end early.
                        early_termination = true;
                        duration = tick;
                        final_collect(&mut driver, tick);
                        break;
                    }
                }
                tick_index += 1;
            }
        }
        Policy::Ns | Policy::Fixed => {}
    }

    if !early_termination {
        driver.runtime.wait_until(round_time);
        final_collect(&mut driver, round_time);
    }

    let metrics = driver.metrics();
    Ok(RoundOutcome {
        harvests: driver.harvests,
        metrics,
        pulls: driver.pulls,
        reassignments: driver.reassignments,
        early_termination,
        duration,
    })
}
