//! Bonus analysis over controlled behaviors on held-out instances. Every
//! bonus is shown the very same recorded trajectories.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{CountTable, RndPair};
use crate::behaviors::{run_behavior, BehaviorKind, Episode};
use crate::bonus::{BonusKind, BonusModel, StepInput};
use crate::error::{Error, Result};
use crate::gridworld::EnvInstance;
use crate::rng;
use crate::smtw::{BonusNet, SmtwBonus};
use crate::stats::{self, Interval, Summary, BOOTSTRAP_RESAMPLES};

pub const HISTOGRAM_BINS: usize = 40;

/// One value per step, the history restarting at the episode's first frame.
pub fn score_trajectory(bonus: &mut dyn BonusModel, episode: &Episode) -> Result<Vec<f64>> {
    bonus.begin_episode();
    episode
        .transitions()
        .map(|t| {
            bonus.score(&StepInput {
                observation: t.observation,
                ground_truth_state: t.ground_truth_state,
                action: t.action,
            })
        })
        .collect()
}

/// Identifies a training instance for the disjointness check.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub seed: u64,
    pub fingerprint: String,
}

impl InstanceId {
    pub fn of(instance: &EnvInstance) -> Self {
        Self {
            seed: instance.seed,
            fingerprint: instance.fingerprint(),
        }
    }
}

/// Fails when any test instance shares a seed or a layout with a training one.
pub fn check_disjoint(train: &[InstanceId], test: &[EnvInstance]) -> Result<()> {
    let seeds: HashSet<u64> = train.iter().map(|i| i.seed).collect();
    let prints: HashSet<&str> = train.iter().map(|i| i.fingerprint.as_str()).collect();
    let clashes: Vec<u64> = test
        .iter()
        .filter(|t| seeds.contains(&t.seed) || prints.contains(t.fingerprint().as_str()))
        .map(|t| t.seed)
        .collect();
    if clashes.is_empty() {
        Ok(())
    } else {
        Err(Error::InstanceOverlap(format!(
            "{} test instance(s) also used for training, seeds {:?}",
            clashes.len(),
            clashes
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub instance_seed: u64,
    pub behavior: BehaviorKind,
    pub episode_len: usize,
    /// Values per bonus kind, in `BonusKind::ALL` order.
    pub values: Vec<Vec<f64>>,
}

impl CellScores {
    pub fn values_of(&self, bonus: BonusKind) -> &[f64] {
        &self.values[bonus_index(bonus)]
    }
}

fn bonus_index(bonus: BonusKind) -> usize {
    BonusKind::ALL.iter().position(|&b| b == bonus).expect("listed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Greater,
    Less,
    Indistinct,
}

/// `behavior_a` versus `behavior_b` under one bonus. The unit is the test
/// instance: each instance contributes its per-behavior mean bonus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingRow {
    pub bonus: BonusKind,
    pub behavior_a: BehaviorKind,
    pub behavior_b: BehaviorKind,
    /// Paired interval of `mean(a) - mean(b)`.
    pub difference: Interval,
    pub mean_a: Interval,
    pub mean_b: Interval,
    pub relation: Relation,
    /// The per-behavior intervals overlap.
    pub overlapping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub cells: Vec<CellScores>,
    pub orderings: Vec<OrderingRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub seed: u64,
    pub resamples: usize,
}

impl AnalysisConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            resamples: BOOTSTRAP_RESAMPLES,
        }
    }
}

/// Scores one trajectory per (instance, behavior) with all three bonuses.
/// The count table and the RND pair are fresh for every cell; within an
/// instance every behavior meets the same RND initialization.
pub fn run_analysis(
    model: &BonusNet,
    train: &[InstanceId],
    test: &[EnvInstance],
    behaviors: &[BehaviorKind],
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport> {
    check_disjoint(train, test)?;
    if test.is_empty() || behaviors.is_empty() {
        return Err(Error::InvalidConfig("analysis needs test instances and behaviors".into()));
    }
    let mut cells = Vec::with_capacity(test.len() * behaviors.len());
    for (i, inst) in test.iter().enumerate() {
        if inst.n * inst.n * crate::gridworld::NUM_CHANNELS != model.input_width() {
            return Err(Error::Shape(format!("instance of size {} does not match the bonus network", inst.n)));
        }
        for &behavior in behaviors {
            let b = BehaviorKind::ALL.iter().position(|&k| k == behavior).expect("listed");
            let mut behavior_rng = rng::stream(cfg.seed, "analysis-behavior", (i * BehaviorKind::ALL.len() + b) as u64);
            let episode = run_behavior(behavior, inst, &mut behavior_rng)?;
            let mut smtw = SmtwBonus::new(model);
            let mut count = CountTable::new();
            let mut rnd = RndPair::new(inst.n, &mut rng::stream(cfg.seed, "analysis-rnd", i as u64))?;
            let values = BonusKind::ALL
                .iter()
                .map(|kind| {
                    let scorer: &mut dyn BonusModel = match kind {
                        BonusKind::Smtw => &mut smtw,
                        BonusKind::Count => &mut count,
                        BonusKind::Rnd => &mut rnd,
                    };
                    score_trajectory(scorer, &episode)
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(CellScores {
                instance_seed: inst.seed,
                behavior,
                episode_len: episode.len(),
                values,
            });
        }
    }
    let orderings = orderings(&cells, behaviors, cfg)?;
    Ok(AnalysisReport { cells, orderings })
}

/// Per-instance mean bonus of `behavior`, in instance order.
pub fn instance_means(cells: &[CellScores], behavior: BehaviorKind, bonus: BonusKind) -> Vec<f64> {
    cells
        .iter()
        .filter(|c| c.behavior == behavior)
        .map(|c| stats::mean(c.values_of(bonus)))
        .collect()
}

/// The demonstrator against every other behavior, for every bonus kind.
fn orderings(cells: &[CellScores], behaviors: &[BehaviorKind], cfg: &AnalysisConfig) -> Result<Vec<OrderingRow>> {
    let reference = BehaviorKind::Demonstrator;
    if !behaviors.contains(&reference) {
        return Ok(Vec::new());
    }
    let mut rows = Vec::new();
    for (bi, &bonus) in BonusKind::ALL.iter().enumerate() {
        let a = instance_means(cells, reference, bonus);
        for (oi, &other) in behaviors.iter().filter(|&&b| b != reference).enumerate() {
            let b = instance_means(cells, other, bonus);
            let index = (bi * BehaviorKind::ALL.len() + oi) as u64;
            let difference =
                stats::bootstrap_paired_difference(&a, &b, cfg.resamples, &mut rng::stream(cfg.seed, "ordering-diff", index));
            let mean_a = stats::bootstrap_mean(&a, cfg.resamples, &mut rng::stream(cfg.seed, "ordering-a", index));
            let mean_b = stats::bootstrap_mean(&b, cfg.resamples, &mut rng::stream(cfg.seed, "ordering-b", index));
            let relation = if difference.lo > 0.0 {
                Relation::Greater
            } else if difference.hi < 0.0 {
                Relation::Less
            } else {
                Relation::Indistinct
            };
            rows.push(OrderingRow {
                bonus,
                behavior_a: reference,
                behavior_b: other,
                difference,
                mean_a,
                mean_b,
                relation,
                overlapping: mean_a.overlaps(&mean_b),
            });
        }
    }
    Ok(rows)
}

/// All values of one behavior under one bonus, pooled over instances.
pub fn pooled(cells: &[CellScores], behavior: BehaviorKind, bonus: BonusKind) -> Vec<f64> {
    cells
        .iter()
        .filter(|c| c.behavior == behavior)
        .flat_map(|c| c.values_of(bonus).iter().copied())
        .collect()
}

pub fn raw_values_csv(report: &AnalysisReport) -> String {
    let mut out = String::from("instance_seed,behavior,bonus,step,value\n");
    for c in &report.cells {
        for bonus in BonusKind::ALL {
            for (t, v) in c.values_of(bonus).iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", c.instance_seed, c.behavior, bonus, t, v).expect("string write");
            }
        }
    }
    out
}

fn behaviors_in(report: &AnalysisReport) -> Vec<BehaviorKind> {
    let mut seen = Vec::new();
    for c in &report.cells {
        if !seen.contains(&c.behavior) {
            seen.push(c.behavior);
        }
    }
    seen
}

pub fn summary_csv(report: &AnalysisReport) -> String {
    let mut out = String::from("behavior,bonus,count,mean,min,q1,median,q3,max\n");
    for behavior in behaviors_in(report) {
        for bonus in BonusKind::ALL {
            let s = Summary::of(&pooled(&report.cells, behavior, bonus));
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                behavior, bonus, s.count, s.mean, s.min, s.q1, s.median, s.q3, s.max
            )
            .expect("string write");
        }
    }
    out
}

pub fn orderings_csv(report: &AnalysisReport) -> String {
    let mut out = String::from(
        "bonus,behavior_a,behavior_b,mean_difference,ci_low,ci_high,relation,mean_a,mean_a_low,mean_a_high,mean_b,mean_b_low,mean_b_high,overlapping\n",
    );
    for r in &report.orderings {
        let relation = match r.relation {
            Relation::Greater => "greater",
            Relation::Less => "less",
            Relation::Indistinct => "indistinct",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.bonus,
            r.behavior_a,
            r.behavior_b,
            r.difference.estimate,
            r.difference.lo,
            r.difference.hi,
            relation,
            r.mean_a.estimate,
            r.mean_a.lo,
            r.mean_a.hi,
            r.mean_b.estimate,
            r.mean_b.lo,
            r.mean_b.hi,
            r.overlapping
        )
        .expect("string write");
    }
    out
}

/// Shared `[lo, hi]` per bonus kind over every behavior.
pub fn bonus_ranges(report: &AnalysisReport) -> BTreeMap<BonusKind, (f64, f64)> {
    BonusKind::ALL
        .into_iter()
        .map(|bonus| {
            let (lo, hi) = report
                .cells
                .iter()
                .flat_map(|c| c.values_of(bonus).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
            let hi = if hi > lo { hi } else { lo + 1.0 };
            (bonus, (lo, hi))
        })
        .collect()
}

pub fn histogram_svg(title: &str, counts: &[usize], lo: f64, hi: f64) -> String {
    let (width, height, margin) = (480.0, 240.0, 30.0);
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = plot_w / counts.len().max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(svg, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    for (i, &c) in counts.iter().enumerate() {
        let h = plot_h * c as f64 / peak;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
            margin + i as f64 * bar_w,
            margin + plot_h - h,
            bar_w,
            h
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{margin}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>",
        y = margin + plot_h,
        x2 = margin + plot_w
    );
    let _ = writeln!(svg, "<text x=\"{margin}\" y=\"{}\" font-size=\"11\">{}</text>", height - 8.0, fmt_tick(lo));
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
        margin + plot_w,
        height - 8.0,
        fmt_tick(hi)
    );
    let _ = writeln!(svg, "<text x=\"{margin}\" y=\"18\" font-size=\"13\">{}</text>", escape(title));
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.3}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes raw_values.csv, summary.csv, orderings.csv and
/// histograms/<behavior>_<bonus>.svg under `dir`; returns the written paths.
pub fn emit_report(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("histograms"))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<()> {
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put(dir.join("raw_values.csv"), raw_values_csv(report))?;
    put(dir.join("summary.csv"), summary_csv(report))?;
    put(dir.join("orderings.csv"), orderings_csv(report))?;
    let ranges = bonus_ranges(report);
    for behavior in behaviors_in(report) {
        for bonus in BonusKind::ALL {
            let (lo, hi) = ranges[&bonus];
            let counts = stats::histogram(&pooled(&report.cells, behavior, bonus), lo, hi, HISTOGRAM_BINS);
            let title = format!("{bonus} bonus, {behavior} behavior");
            put(
                dir.join("histograms").join(format!("{behavior}_{bonus}.svg")),
                histogram_svg(&title, &counts, lo, hi),
            )?;
        }
    }
    Ok(written)
}
