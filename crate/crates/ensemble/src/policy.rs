//! Scheduling policies.
//!
//! `legion` is the full machinery: bandit scheduling, multidimensional
//! evaluation, mid-round fine-tuning, and early termination. The others are
//! the baseline/ablation policies used for comparison studies:
//!
//! * `ns` assigns units uniformly at random each round and ignores feedback,
//!   with no fine-tuning or early termination;
//! * `cov` keeps the bandit but judges seeds by path novelty alone, both for
//!   rewards and for synchronization;
//! * `fixed` splits units evenly at startup and never changes the schedule;
//! * `prep-focus` profiles all fuzzers for the first half of each round and
//!   gives every unit to the round's best performer for the second half.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ensemble_core::record::{path_id, ExecutionResult, FuzzRecord};
use ensemble_core::seedeval::{self, MetricVector, WeightVector};
use ensemble_core::EdgeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Legion,
    Ns,
    Cov,
    Fixed,
    PrepFocus,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Legion,
        Policy::Ns,
        Policy::Cov,
        Policy::Fixed,
        Policy::PrepFocus,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Legion => "legion",
            Policy::Ns => "ns",
            Policy::Cov => "cov",
            Policy::Fixed => "fixed",
            Policy::PrepFocus => "prep-focus",
        }
    }

    /// Whether the bandit scheduler drives per-round assignment.
    pub fn uses_bandit(&self) -> bool {
        matches!(self, Policy::Legion | Policy::Cov)
    }

    /// Whether round results update the scheduler state.
    pub fn uses_feedback(&self) -> bool {
        matches!(self, Policy::Legion | Policy::Cov)
    }

    /// Whether mid-round monitoring may stop dry instances and reassign
    /// their units (and terminate the round early when everyone is dry).
    pub fn fine_tunes(&self) -> bool {
        matches!(self, Policy::Legion | Policy::Cov)
    }

    /// How seeds are judged and rewarded under this policy.
    pub fn eval_strategy(&self) -> EvalStrategy {
        match self {
            Policy::Cov => EvalStrategy::PathOnly,
            _ => EvalStrategy::Multidimensional,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "legion" => Ok(Policy::Legion),
            "ns" => Ok(Policy::Ns),
            "cov" => Ok(Policy::Cov),
            "fixed" => Ok(Policy::Fixed),
            "prep-focus" | "prep_focus" | "prepfocus" => Ok(Policy::PrepFocus),
            other => Err(format!(
                "unknown policy `{other}` (expected legion, ns, cov, fixed, or prep-focus)"
            )),
        }
    }
}

/// Seed evaluation strategy: the full five-metric evaluation, or the
/// path-novelty-only baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStrategy {
    Multidimensional,
    PathOnly,
}

impl EvalStrategy {
    /// Qualitative benefit of a single seed against the round-start
    /// snapshot.
    pub fn is_beneficial(
        &self,
        result: &ExecutionResult,
        snapshot: &FuzzRecord,
        deep: &BTreeSet<EdgeId>,
    ) -> bool {
        match self {
            EvalStrategy::Multidimensional => seedeval::is_beneficial(result, snapshot, deep),
            EvalStrategy::PathOnly => !snapshot.knows_path(path_id(&result.coverage)),
        }
    }

    /// The weight vector applied to a round's metric vectors when
    /// computing scheduler rewards.
    pub fn reward_weights(&self, metrics_theta: WeightVector) -> WeightVector {
        match self {
            EvalStrategy::Multidimensional => metrics_theta,
            // Path novelty only: γ_new degenerates to c1.
            EvalStrategy::PathOnly => WeightVector([0.0, 1.0, 0.0, 0.0, 0.0]),
        }
    }

    /// The round's qualitative reward for fine-tuning decisions.
    pub fn qualitative_reward(
        &self,
        pool: &[ExecutionResult],
        snapshot: &FuzzRecord,
        deep: &BTreeSet<EdgeId>,
    ) -> f64 {
        let m = seedeval::evaluate_pool(pool, snapshot, deep);
        match self {
            EvalStrategy::Multidimensional => {
                seedeval::reward(&m, &WeightVector::qualitative())
            }
            EvalStrategy::PathOnly => m.new_paths() as f64,
        }
    }

    /// The metric vector for feedback and logging (strategy-independent;
    /// the strategy decides how it is weighted).
    pub fn metrics(
        &self,
        pool: &[ExecutionResult],
        snapshot: &FuzzRecord,
        deep: &BTreeSet<EdgeId>,
    ) -> MetricVector {
        seedeval::evaluate_pool(pool, snapshot, deep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ensemble_core::record::CoverageMap;

    #[test]
    fn parse_names() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>().unwrap(), p);
        }
        assert!("bogus".parse::<Policy>().is_err());
    }

    #[test]
    fn path_only_benefit_ignores_deep_edges() {
        let mut snapshot = FuzzRecord::new();
        let cov: CoverageMap = [(EdgeId(1), 1)].into_iter().collect();
        snapshot.merge(&ExecutionResult::ok(cov.clone()));
        let deep: BTreeSet<EdgeId> = [EdgeId(1)].into_iter().collect();
        let r = ExecutionResult::ok(cov);
        // Known path covering a deep edge: beneficial multidimensionally,
        // not under path-only.
        assert!(EvalStrategy::Multidimensional.is_beneficial(&r, &snapshot, &deep));
        assert!(!EvalStrategy::PathOnly.is_beneficial(&r, &snapshot, &deep));
    }
}
