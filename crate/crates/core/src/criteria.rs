//! Pass/fail readings of the analysis and agent reports.

use serde::{Deserialize, Serialize};

use crate::agent::{Algorithm, ExperimentReport};
use crate::behaviors::BehaviorKind;
use crate::bonus::BonusKind;
use crate::evalharness::{instance_means, AnalysisReport, OrderingRow, Relation};
use crate::rng;
use crate::stats::{self, Interval};

/// Mean bonus a standing-still trajectory must stay under once its first
/// steps are over, under the count bonus.
pub const STANDING_STILL_LIMIT: f64 = 0.1;
pub const STANDING_STILL_SKIP: usize = 10;
pub const RETURN_THRESHOLD: f64 = 50.0;
/// Fraction of final episodes over which convergence to the lazy policy is read.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn row(report: &AnalysisReport, bonus: BonusKind, other: BehaviorKind) -> Option<&OrderingRow> {
    report
        .orderings
        .iter()
        .find(|r| r.bonus == bonus && r.behavior_b == other)
}

fn fmt_ci(ci: &Interval) -> String {
    format!("{:.4} [{:.4}, {:.4}]", ci.estimate, ci.lo, ci.hi)
}

fn greater(report: &AnalysisReport, bonus: BonusKind, other: BehaviorKind) -> Check {
    let name = format!("{bonus}: demonstrator > {other}");
    match row(report, bonus, other) {
        Some(r) => Check::new(name, r.relation == Relation::Greater, format!("difference {}", fmt_ci(&r.difference))),
        None => Check::new(name, false, "comparison missing"),
    }
}

fn mean_intervals(report: &AnalysisReport, bonus: BonusKind, behaviors: &[BehaviorKind], seed: u64) -> Vec<Interval> {
    behaviors
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let units = instance_means(&report.cells, b, bonus);
            stats::bootstrap_mean(&units, stats::BOOTSTRAP_RESAMPLES, &mut rng::stream(seed, bonus.name(), i as u64))
        })
        .collect()
}

/// Every pair of per-behavior mean intervals overlaps.
fn similar(report: &AnalysisReport, bonus: BonusKind, behaviors: &[BehaviorKind], seed: u64) -> Check {
    let names: Vec<&str> = behaviors.iter().map(|b| b.name()).collect();
    let name = format!("{bonus}: {} similar", names.join(" ~ "));
    let cis = mean_intervals(report, bonus, behaviors, seed);
    let mut disjoint = Vec::new();
    for i in 0..cis.len() {
        for j in i + 1..cis.len() {
            if !cis[i].overlaps(&cis[j]) {
                disjoint.push(format!("{} vs {}", names[i], names[j]));
            }
        }
    }
    let means: Vec<String> = names.iter().zip(&cis).map(|(n, ci)| format!("{n} {}", fmt_ci(ci))).collect();
    let detail = if disjoint.is_empty() {
        format!("all mean intervals overlap; {}", means.join("; "))
    } else {
        format!("disjoint: {}; {}", disjoint.join(", "), means.join("; "))
    };
    Check::new(name, disjoint.is_empty(), detail)
}

pub fn ordering_checks(report: &AnalysisReport, seed: u64) -> Vec<Check> {
    use BehaviorKind::*;
    let mut checks: Vec<Check> = [
        Random,
        DemonstratorInverse,
        DemonstratorRandomOrder,
        DummyDemonstrator,
        StandingStill,
        WaitingDemonstrator,
        UnsafeDemonstrator,
    ]
    .into_iter()
    .map(|b| greater(report, BonusKind::Smtw, b))
    .collect();

    checks.push(greater(report, BonusKind::Count, Random));
    checks.push(similar(
        report,
        BonusKind::Count,
        &[
            Demonstrator,
            DemonstratorInverse,
            DemonstratorRandomOrder,
            DummyDemonstrator,
            WaitingDemonstrator,
            UnsafeDemonstrator,
        ],
        seed,
    ));
    let late: Vec<f64> = report
        .cells
        .iter()
        .filter(|c| c.behavior == StandingStill)
        .flat_map(|c| c.values_of(BonusKind::Count).iter().skip(STANDING_STILL_SKIP).copied())
        .collect();
    let late_mean = stats::mean(&late);
    checks.push(Check::new(
        format!("count: standing_still mean after {STANDING_STILL_SKIP} steps < {STANDING_STILL_LIMIT}"),
        late_mean < STANDING_STILL_LIMIT,
        format!("mean {late_mean:.5} over {} values", late.len()),
    ));

    let rnd_random = match row(report, BonusKind::Rnd, Random) {
        Some(r) => Check::new(
            "rnd: random > demonstrator",
            r.relation == Relation::Less,
            format!("demonstrator - random {}", fmt_ci(&r.difference)),
        ),
        None => Check::new("rnd: random > demonstrator", false, "comparison missing"),
    };
    checks.push(rnd_random);
    checks.push(similar(
        report,
        BonusKind::Rnd,
        &[Demonstrator, DemonstratorInverse, DemonstratorRandomOrder],
        seed,
    ));
    checks
}

pub fn agent_checks(report: &ExperimentReport) -> Vec<Check> {
    let mut checks = Vec::new();
    let describe = |a: Algorithm| {
        report
            .summary(a)
            .map(|s| (s.best_lr, s.returns.first_median_above(RETURN_THRESHOLD), s))
    };
    match describe(Algorithm::EpsilonGreedy) {
        Some((lr, _, s)) => {
            let len = s.returns.median.len();
            let tail = ((len as f64 * TAIL_FRACTION).ceil() as usize).max(1).min(len);
            let tail_values = &s.returns.median[len - tail..];
            let converged = !tail_values.is_empty() && tail_values.iter().all(|&m| m == 0.0);
            checks.push(Check::new(
                "agent: epsilon-greedy median return converges to 0",
                converged,
                format!(
                    "best lr {lr}; median over the last {tail} episodes in [{:.2}, {:.2}]",
                    tail_values.iter().copied().fold(f64::INFINITY, f64::min),
                    tail_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                ),
            ));
        }
        None => checks.push(Check::new("agent: epsilon-greedy median return converges to 0", false, "missing")),
    }
    let smtw = describe(Algorithm::Smtw);
    let count = describe(Algorithm::Count);
    let when = |x: Option<usize>| x.map_or("never".to_string(), |e| format!("episode {e}"));
    match (smtw, count) {
        (Some((slr, s_first, _)), Some((clr, c_first, _))) => {
            let faster = match (s_first, c_first) {
                (Some(s), Some(c)) => s < c,
                (Some(_), None) => true,
                _ => false,
            };
            checks.push(Check::new(
                format!("agent: smtw median return > {RETURN_THRESHOLD} sooner than count"),
                faster,
                format!("smtw (lr {slr}) {}, count (lr {clr}) {}", when(s_first), when(c_first)),
            ));
            checks.push(Check::new(
                format!("agent: count median return eventually > {RETURN_THRESHOLD}"),
                c_first.is_some(),
                format!("count (lr {clr}) {}", when(c_first)),
            ));
        }
        _ => checks.push(Check::new("agent: smtw and count summaries", false, "missing")),
    }
    checks
}
