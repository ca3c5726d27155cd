//! Per-round resource scheduling over base fuzzers, modeled as a modified
//! multi-armed bandit.
//!
//! Each base fuzzer carries a tuple ⟨f, γ, t⟩ of accumulated reward and the
//! pull count of its most recent active round. A round assigns every
//! resource unit either by priming (fuzzers that have never run get one
//! deterministic unit each, realizing u_init = ∞) or by a soft-max draw over
//!
//! ```text
//! q = γ / (γ + t)            average reward, in [0, 1)
//! u = sqrt(2 ln N / t)       upper confidence bound (ln clamped at 0)
//! Prob(f) = exp(q + u) / Σ exp(q' + u')
//! ```
//!
//! where N accumulates the total pull count across rounds, bumped once per
//! round. Using the previous round's pulls instead of lifetime pulls keeps
//! the exploration term responsive to recent behavior; rewards here are not
//! stationary, so classical UCB regret bounds are out of scope.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{FuzzerId, UnitId};
use crate::math;
use crate::seedeval::{reward, MetricVector, WeightVector};

/// Initial average reward for a never-run fuzzer.
pub const Q_INIT: f64 = 1.0;

/// The bandit tuple ⟨f, γ, t⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzerEval {
    pub fuzzer: FuzzerId,
    /// Accumulated reward γ.
    pub gamma: f64,
    /// Pull count of the most recent round in which the fuzzer ran;
    /// 0 iff the fuzzer has never been assigned resources.
    pub t: f64,
}

/// Finite scores for one candidate. Unprimed fuzzers never appear here;
/// their infinite confidence bound is realized by the priming queue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub fuzzer: FuzzerId,
    pub q: f64,
    pub u: f64,
}

impl CandidateScore {
    pub fn score(&self) -> f64 {
        self.q + self.u
    }
}

/// One mid-round reassignment, recorded for the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reassignment {
    /// Fraction of the round at which the unit moved, in [0.5, 1.0].
    pub time_frac: f64,
    pub unit: UnitId,
    pub from: FuzzerId,
    pub to: FuzzerId,
}

/// The per-round resource schedule φ: units → fuzzers, plus its history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub assignment: BTreeMap<UnitId, FuzzerId>,
    /// Units whose assignment came from the priming queue rather than a
    /// soft-max draw.
    pub primed_units: BTreeSet<UnitId>,
    pub reassignments: Vec<Reassignment>,
}

impl Schedule {
    /// Units grouped by their initially assigned fuzzer.
    pub fn units_of(&self, fuzzer: &FuzzerId) -> BTreeSet<UnitId> {
        self.assignment
            .iter()
            .filter(|(_, f)| *f == fuzzer)
            .map(|(&u, _)| u)
            .collect()
    }

    /// The set of fuzzers holding at least one unit.
    pub fn scheduled_fuzzers(&self) -> BTreeSet<FuzzerId> {
        self.assignment.values().cloned().collect()
    }
}

/// Scheduler errors.
#[derive(Debug, Clone, PartialEq)]
pub enum SchedulerError {
    /// soft-max over an empty candidate list.
    NoCandidates,
    /// A pull count of zero or less was reported for a fuzzer that ran.
    NonPositivePull { fuzzer: FuzzerId },
    /// schedule_round needs at least one unit and one fuzzer.
    InvalidArguments,
}

impl fmt::Display for SchedulerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerError::NoCandidates => f.write_str("soft-max over empty candidate list"),
            SchedulerError::NonPositivePull { fuzzer } => {
                write!(f, "non-positive pull count for fuzzer {fuzzer}")
            }
            SchedulerError::InvalidArguments => {
                f.write_str("schedule_round requires units >= 1 and a nonempty fuzzer set")
            }
        }
    }
}

impl core::error::Error for SchedulerError {}

/// Scheduler state: the evaluation tuples Q and the accumulated pull
/// count N.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    evals: BTreeMap<FuzzerId, FuzzerEval>,
    n_total: f64,
    /// Fuzzers assigned a priming unit whose feedback has not yet arrived;
    /// they are off the candidate list until feedback restores them.
    pending: BTreeSet<FuzzerId>,
}

impl SchedulerState {
    /// Initialize ⟨f, γ=0, t=0⟩ for every base fuzzer.
    pub fn new<I: IntoIterator<Item = FuzzerId>>(fuzzers: I) -> Self {
        SchedulerState {
            evals: fuzzers
                .into_iter()
                .map(|f| {
                    (
                        f.clone(),
                        FuzzerEval {
                            fuzzer: f,
                            gamma: 0.0,
                            t: 0.0,
                        },
                    )
                })
                .collect(),
            n_total: 0.0,
            pending: BTreeSet::new(),
        }
    }

    pub fn eval(&self, fuzzer: &FuzzerId) -> Option<&FuzzerEval> {
        self.evals.get(fuzzer)
    }

    pub fn evals(&self) -> impl Iterator<Item = &FuzzerEval> {
        self.evals.values()
    }

    pub fn fuzzers(&self) -> impl Iterator<Item = &FuzzerId> {
        self.evals.keys()
    }

    pub fn n_total(&self) -> f64 {
        self.n_total
    }

    /// Fuzzers that have never run and are not holding a priming unit.
    pub fn unprimed(&self) -> impl Iterator<Item = &FuzzerId> {
        self.evals
            .values()
            .filter(|e| e.t == 0.0 && !self.pending.contains(&e.fuzzer))
            .map(|e| &e.fuzzer)
    }

    fn scored_candidates(&self) -> Vec<CandidateScore> {
        self.evals
            .values()
            .filter(|e| e.t > 0.0)
            .map(|e| CandidateScore {
                fuzzer: e.fuzzer.clone(),
                q: e.gamma / (e.gamma + e.t),
                u: math::sqrt(2.0 * math::ln(self.n_total).max(0.0) / e.t),
            })
            .collect()
    }
}

/// The finite candidate scores as the next `schedule_round` call would see
/// them: (N after the once-per-round bump, scores of every fuzzer with
/// t > 0). Pure preview; does not mutate the state.
pub fn round_scores(state: &SchedulerState) -> (f64, Vec<CandidateScore>) {
    let n_after = state.n_total + state.evals.values().map(|e| e.t).sum::<f64>();
    let preview = SchedulerState {
        evals: state.evals.clone(),
        n_total: n_after,
        pending: state.pending.clone(),
    };
    (n_after, preview.scored_candidates())
}

/// Selection probabilities for a candidate list, in list order.
/// Computed with max-subtraction; invariant under a common score shift.
pub fn selection_probabilities(scores: &[CandidateScore]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores
        .iter()
        .map(CandidateScore::score)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores
        .iter()
        .map(|s| math::exp(s.score() - max))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Draw one fuzzer according to the soft-max distribution, consuming one
/// uniform variate from `rng`.
pub fn softmax_select<'a, R: Rng + ?Sized>(
    scores: &'a [CandidateScore],
    rng: &mut R,
) -> Result<&'a FuzzerId, SchedulerError> {
    if scores.is_empty() {
        return Err(SchedulerError::NoCandidates);
    }
    let probs = selection_probabilities(scores);
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (candidate, p) in scores.iter().zip(probs) {
        acc += p;
        if draw < acc {
            return Ok(&candidate.fuzzer);
        }
    }
    // Float dust: the draw fell into the residue past the last boundary.
    Ok(&scores.last().unwrap().fuzzer)
}

/// Build the round's resource schedule.
///
/// N is bumped once by Σt over the current evals. Each unit then goes to
/// the lowest-named unprimed fuzzer while any remain (removing it from the
/// candidate list until feedback restores it); otherwise to a soft-max draw
/// over the finite-score candidates. If every fuzzer is still awaiting its
/// first feedback, the spare units are drawn uniformly (all candidates at
/// q_init with the infinite bound spent).
pub fn schedule_round<R: Rng + ?Sized>(
    state: &mut SchedulerState,
    units: u32,
    rng: &mut R,
) -> Result<Schedule, SchedulerError> {
    if units == 0 || state.evals.is_empty() {
        return Err(SchedulerError::InvalidArguments);
    }
    state.n_total += state.evals.values().map(|e| e.t).sum::<f64>();
    let mut schedule = Schedule::default();
    for unit in 0..units {
        let unit = UnitId(unit);
        let unprimed = state.unprimed().next().cloned();
        if let Some(fuzzer) = unprimed {
            state.pending.insert(fuzzer.clone());
            schedule.primed_units.insert(unit);
            schedule.assignment.insert(unit, fuzzer);
            continue;
        }
        let scores = state.scored_candidates();
        let chosen = if scores.is_empty() {
            // Everyone is primed-pending: uniform draw among them.
            let pending: Vec<CandidateScore> = state
                .pending
                .iter()
                .map(|f| CandidateScore {
                    fuzzer: f.clone(),
                    q: Q_INIT,
                    u: 0.0,
                })
                .collect();
            softmax_select(&pending, rng)?.clone()
        } else {
            softmax_select(&scores, rng)?.clone()
        };
        schedule.assignment.insert(unit, chosen);
    }
    Ok(schedule)
}

/// Fold one round's outcomes into the scheduler state.
///
/// `pulls` must contain exactly the fuzzers that ran this round, with their
/// time-weighted pull counts. For each: γ += reward(metric, θ) and t is
/// replaced by the new pull count. Fuzzers absent from `pulls` keep their
/// tuple unchanged; unknown fuzzers get a fresh tuple.
pub fn feedback(
    state: &mut SchedulerState,
    round_metrics: &BTreeMap<FuzzerId, MetricVector>,
    theta: &WeightVector,
    pulls: &BTreeMap<FuzzerId, f64>,
) -> Result<(), SchedulerError> {
    for (fuzzer, &pull) in pulls {
        if pull <= 0.0 {
            return Err(SchedulerError::NonPositivePull {
                fuzzer: fuzzer.clone(),
            });
        }
        let metric = round_metrics.get(fuzzer).copied().unwrap_or_default();
        let gamma_new = reward(&metric, theta);
        let entry = state
            .evals
            .entry(fuzzer.clone())
            .or_insert_with(|| FuzzerEval {
                fuzzer: fuzzer.clone(),
                gamma: 0.0,
                t: 0.0,
            });
        entry.gamma += gamma_new;
        entry.t = pull;
        state.pending.remove(fuzzer);
    }
    Ok(())
}

/// Pick the fuzzer to inherit a stopped unit: the argmax of the current
/// round's qualitative reward among fuzzers still producing. Ties break
/// toward fewer currently-held units, then the lowest name. `None` signals
/// early round termination.
pub fn retarget(
    round_rewards: &BTreeMap<FuzzerId, f64>,
    running: &BTreeSet<FuzzerId>,
    held_units: &BTreeMap<FuzzerId, u32>,
) -> Option<FuzzerId> {
    running
        .iter()
        .map(|f| {
            let reward = round_rewards.get(f).copied().unwrap_or(0.0);
            let held = held_units.get(f).copied().unwrap_or(0);
            (f, reward, held)
        })
        // max by reward, then by fewest held units, then lowest name; the
        // comparison prefers later elements only when strictly better, so
        // iterate in reverse name order to make the lowest name win ties.
        .fold(None::<(&FuzzerId, f64, u32)>, |best, cand| match best {
            None => Some(cand),
            Some(b) => {
                let better = cand.1 > b.1
                    || (cand.1 == b.1 && (cand.2 < b.2 || (cand.2 == b.2 && cand.0 < b.0)));
                if better {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        })
        .map(|(f, _, _)| f.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn fid(s: &str) -> FuzzerId {
        FuzzerId::new(s)
    }

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn primed_state(entries: &[(&str, f64, f64)]) -> SchedulerState {
        let mut state = SchedulerState::new(entries.iter().map(|(f, _, _)| fid(f)));
        let metrics = BTreeMap::new();
        let theta = WeightVector::qualitative();
        // Install γ and t directly through feedback with synthetic pulls,
        // then overwrite gamma via a second feedback pass of zero metrics.
        let pulls: BTreeMap<FuzzerId, f64> =
            entries.iter().map(|(f, _, t)| (fid(f), *t)).collect();
        feedback(&mut state, &metrics, &theta, &pulls).unwrap();
        for (f, gamma, _) in entries {
            let e = state.evals.get_mut(&fid(f)).unwrap();
            e.gamma = *gamma;
        }
        state
    }

    #[test]
    fn priming_round_deploys_every_fuzzer_once() {
        let mut state = SchedulerState::new(["f1", "f2", "f3"].map(fid));
        let schedule = schedule_round(&mut state, 3, &mut rng(1)).unwrap();
        let assigned: BTreeSet<_> = schedule.assignment.values().cloned().collect();
        assert_eq!(assigned.len(), 3);
        assert_eq!(schedule.primed_units.len(), 3);
    }

    #[test]
    fn priming_with_fewer_units_resumes_next_round() {
        let mut state = SchedulerState::new(["f1", "f2", "f3"].map(fid));
        let schedule = schedule_round(&mut state, 2, &mut rng(1)).unwrap();
        let first: Vec<_> = schedule.assignment.values().cloned().collect();
        assert_eq!(first, vec![fid("f1"), fid("f2")]);
        // Feedback for the two that ran.
        let pulls: BTreeMap<_, _> = [(fid("f1"), 1.0), (fid("f2"), 1.0)].into_iter().collect();
        feedback(
            &mut state,
            &BTreeMap::new(),
            &WeightVector::qualitative(),
            &pulls,
        )
        .unwrap();
        // f3 must take the first unit of round 2 before any draw.
        let schedule2 = schedule_round(&mut state, 2, &mut rng(2)).unwrap();
        assert_eq!(schedule2.assignment[&UnitId(0)], fid("f3"));
        assert!(schedule2.primed_units.contains(&UnitId(0)));
        assert!(!schedule2.primed_units.contains(&UnitId(1)));
    }

    #[test]
    fn spare_units_in_priming_round_are_uniform_draws() {
        let mut state = SchedulerState::new(["a", "b"].map(fid));
        let schedule = schedule_round(&mut state, 6, &mut rng(7)).unwrap();
        assert_eq!(schedule.primed_units.len(), 2);
        assert_eq!(schedule.assignment.len(), 6);
        // All six units are assigned to one of the two fuzzers.
        for f in schedule.assignment.values() {
            assert!(*f == fid("a") || *f == fid("b"));
        }
    }

    #[test]
    fn worked_fixture_scores_and_probabilities() {
        // Post-priming: γ=(3,1,0), t=(1,1,1); N goes 0 → 3.
        let state = primed_state(&[("f1", 3.0, 1.0), ("f2", 1.0, 1.0), ("f3", 0.0, 1.0)]);
        let (n, scores) = round_scores(&state);
        assert_eq!(n, 3.0);
        assert_eq!(scores.len(), 3);
        let by_name: BTreeMap<_, _> = scores.iter().map(|s| (s.fuzzer.clone(), s)).collect();
        assert!((by_name[&fid("f1")].q - 0.75).abs() < 1e-12);
        assert!((by_name[&fid("f2")].q - 0.5).abs() < 1e-12);
        assert!((by_name[&fid("f3")].q - 0.0).abs() < 1e-12);
        for s in &scores {
            assert!((s.u - 1.4823).abs() < 1e-4);
        }
        let probs = selection_probabilities(&scores);
        let expect = [0.4442, 0.3460, 0.2098];
        for (p, e) in probs.iter().zip(expect) {
            assert!((p - e).abs() < 1e-4, "{p} vs {e}");
        }
    }

    #[test]
    fn softmax_single_candidate_certain() {
        let scores = vec![CandidateScore {
            fuzzer: fid("only"),
            q: 0.3,
            u: 0.2,
        }];
        for seed in 0..20 {
            assert_eq!(softmax_select(&scores, &mut rng(seed)).unwrap(), &fid("only"));
        }
    }

    #[test]
    fn softmax_symmetric_pair_is_half() {
        let scores = vec![
            CandidateScore {
                fuzzer: fid("a"),
                q: 0.4,
                u: 1.0,
            },
            CandidateScore {
                fuzzer: fid("b"),
                q: 0.4,
                u: 1.0,
            },
        ];
        let probs = selection_probabilities(&scores);
        assert!((probs[0] - 0.5).abs() < 1e-9);
        assert!((probs[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn softmax_empty_errors() {
        assert!(matches!(
            softmax_select(&[], &mut rng(0)),
            Err(SchedulerError::NoCandidates)
        ));
    }

    #[test]
    fn feedback_applies_rewards_and_replaces_pulls() {
        let mut state = SchedulerState::new(["f1", "f2", "f3"].map(fid));
        let s1 = schedule_round(&mut state, 3, &mut rng(3)).unwrap();
        assert_eq!(s1.primed_units.len(), 3);
        let metrics: BTreeMap<_, _> = [
            (fid("f1"), MetricVector([3, 0, 0, 0, 0])),
            (fid("f2"), MetricVector([1, 0, 0, 0, 0])),
            (fid("f3"), MetricVector([0, 0, 0, 0, 0])),
        ]
        .into_iter()
        .collect();
        let pulls: BTreeMap<_, _> = [
            (fid("f1"), 1.0),
            (fid("f2"), 1.0),
            (fid("f3"), 1.0),
        ]
        .into_iter()
        .collect();
        let unit = WeightVector([1.0, 0.0, 0.0, 0.0, 0.0]);
        feedback(&mut state, &metrics, &unit, &pulls).unwrap();
        assert_eq!(state.eval(&fid("f1")).unwrap().gamma, 3.0);
        assert_eq!(state.eval(&fid("f2")).unwrap().gamma, 1.0);
        assert_eq!(state.eval(&fid("f3")).unwrap().gamma, 0.0);
        for f in ["f1", "f2", "f3"] {
            assert_eq!(state.eval(&fid(f)).unwrap().t, 1.0);
        }
    }

    #[test]
    fn idle_fuzzer_keeps_its_tuple() {
        let mut state = primed_state(&[("busy", 1.0, 1.0), ("idle", 5.0, 2.0)]);
        let pulls: BTreeMap<_, _> = [(fid("busy"), 2.0)].into_iter().collect();
        let metrics: BTreeMap<_, _> =
            [(fid("busy"), MetricVector([1, 0, 0, 0, 0]))].into_iter().collect();
        feedback(&mut state, &metrics, &WeightVector::qualitative(), &pulls).unwrap();
        let idle = state.eval(&fid("idle")).unwrap();
        assert_eq!(idle.gamma, 5.0);
        assert_eq!(idle.t, 2.0);
        let busy = state.eval(&fid("busy")).unwrap();
        assert_eq!(busy.gamma, 2.0);
        assert_eq!(busy.t, 2.0);
    }

    #[test]
    fn feedback_time_weighted_pull() {
        let mut state = primed_state(&[("f", 0.0, 1.0)]);
        let pulls: BTreeMap<_, _> = [(fid("f"), 1.5)].into_iter().collect();
        feedback(
            &mut state,
            &BTreeMap::new(),
            &WeightVector::qualitative(),
            &pulls,
        )
        .unwrap();
        assert_eq!(state.eval(&fid("f")).unwrap().t, 1.5);
    }

    #[test]
    fn feedback_rejects_nonpositive_pull() {
        let mut state = SchedulerState::new(["f"].map(fid));
        let pulls: BTreeMap<_, _> = [(fid("f"), 0.0)].into_iter().collect();
        assert!(matches!(
            feedback(
                &mut state,
                &BTreeMap::new(),
                &WeightVector::qualitative(),
                &pulls
            ),
            Err(SchedulerError::NonPositivePull { .. })
        ));
    }

    #[test]
    fn retarget_rules() {
        let rewards: BTreeMap<_, _> =
            [(fid("f1"), 4.0), (fid("f2"), 7.0)].into_iter().collect();
        let running: BTreeSet<_> = [fid("f1"), fid("f2")].into_iter().collect();
        let held: BTreeMap<_, _> = [(fid("f1"), 1), (fid("f2"), 1)].into_iter().collect();
        assert_eq!(retarget(&rewards, &running, &held), Some(fid("f2")));

        let tied: BTreeMap<_, _> = [(fid("f1"), 3.0), (fid("f2"), 3.0)].into_iter().collect();
        let held: BTreeMap<_, _> = [(fid("f1"), 2), (fid("f2"), 1)].into_iter().collect();
        assert_eq!(retarget(&tied, &running, &held), Some(fid("f2")));

        let held_eq: BTreeMap<_, _> = [(fid("f1"), 1), (fid("f2"), 1)].into_iter().collect();
        assert_eq!(retarget(&tied, &running, &held_eq), Some(fid("f1")));

        assert_eq!(retarget(&rewards, &BTreeSet::new(), &held), None);
    }

    #[test]
    fn q_stays_in_unit_interval_after_priming() {
        let mut state = SchedulerState::new(["a", "b", "c"].map(fid));
        let mut r = rng(11);
        for round in 0..20 {
            let schedule = schedule_round(&mut state, 4, &mut r).unwrap();
            let mut pulls = BTreeMap::new();
            for f in schedule.assignment.values() {
                *pulls.entry(f.clone()).or_insert(0.0) += 1.0;
            }
            let metrics: BTreeMap<_, _> = pulls
                .keys()
                .map(|f| (f.clone(), MetricVector([round as u64 % 3, 0, 0, 0, 0])))
                .collect();
            feedback(&mut state, &metrics, &WeightVector::qualitative(), &pulls).unwrap();
            let (_, scores) = round_scores(&state);
            for s in &scores {
                assert!(s.q >= 0.0 && s.q < 1.0, "q out of range: {}", s.q);
                assert!(s.u.is_finite());
            }
        }
        // After everyone ran, nothing is pending or unprimed.
        assert_eq!(state.unprimed().count(), 0);
    }
}
