//! End-to-end acceptance run. Prints one line per criterion (with its
//! sub-checks indented beneath) and exits non-zero if any criterion fails.
//!
//! The full default configuration is used unless `ACCEPTANCE_CONFIG` names a
//! JSON configuration file; the configuration used is recorded in the manifest
//! written under the target temp directory.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use explore_bonus::baselines::CountTable;
use explore_bonus::behaviors::{run_behavior, BehaviorKind};
use explore_bonus::criteria::{self, Check};
use explore_bonus::evalharness::{self, InstanceId};
use explore_bonus::gridworld::{Action, EnvConfig, EnvInstance, NUM_ACTIONS};
use explore_bonus::io;
use explore_bonus::neural::{softmax_cross_entropy, Checkpoint, SequenceNet};
use explore_bonus::rng;
use explore_bonus::runner::{self, ExperimentConfig, FileRecord, Manifest, Role};
use explore_bonus::smtw::{bellman_targets, BonusNet, PolicyNet, GAMMA};

const SMTW_BUDGET: Duration = Duration::from_secs(2 * 3600);
const AGENT_BUDGET: Duration = Duration::from_secs(3600);
const BC_THRESHOLD: f64 = 0.90;

struct Criterion {
    name: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    fn print(&self) {
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        println!(
            "[{}] {} ({} of {} checks passed)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checks.len() - failed,
            self.checks.len()
        );
        for c in &self.checks {
            println!("    {}", c.line());
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn formulas() -> Vec<Check> {
    let mut table = CountTable::new();
    let seq: Vec<f64> = (0..50).map(|_| table.count_bonus(7, Action::Take)).collect();
    let count_ok = seq.iter().enumerate().all(|(i, &b)| close(b, 1.0 / ((i + 1) as f64).sqrt(), 1e-12))
        && close(seq[0], 1.0, 1e-12)
        && close(seq[3], 0.5, 1e-12);
    let (ce, _) = softmax_cross_entropy(&[0.3; NUM_ACTIONS], 4);
    let ce_ok = close(ce, 7f64.ln(), 1e-12);

    // constant logits c: y_t = c - gamma c - r_t, and c - r_t on the goal transition
    let mut target_ok = true;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = EnvInstance::from_config(&EnvConfig {
            n: 5,
            episode_cap: 2000,
            seed,
        })
        .expect("valid");
        let ep = run_behavior(BehaviorKind::Demonstrator, &inst, &mut rng::from_seed(seed)).expect("demonstrator");
        let c = -2.5 + seed as f64 * 0.37;
        let y = bellman_targets(&vec![vec![c; NUM_ACTIONS]; ep.len() + 1], &ep, GAMMA);
        for (t, &r) in ep.rewards.iter().enumerate() {
            let goal = t + 1 == ep.len() && ep.terminal && !ep.truncated;
            let want = if goal { c - r } else { c - GAMMA * c - r };
            worst = worst.max((y[t] - want).abs());
            target_ok &= close(y[t], want, 1e-12);
        }
    }
    vec![
        Check::new("count bonus 1, 1/sqrt 2, 1/sqrt 3, 0.5, ...", count_ok, format!("first four {:?}", &seq[..4])),
        Check::new("regression target for constant logits", target_ok, format!("worst deviation {worst:e}")),
        Check::new("cross-entropy of uniform logits is ln 7", ce_ok, format!("{ce} vs {}", 7f64.ln())),
    ]
}

fn numerical_core() -> Vec<Check> {
    use common::gradient::{problem, worst_relative_error, TOLERANCE};
    let mut checks = Vec::new();
    for (classifier, label) in [(true, "classifier head"), (false, "action-conditioned regression head")] {
        let (worst, seed, name) = (0..100)
            .map(|s| {
                let (e, n) = worst_relative_error(s, classifier);
                (e, s, n)
            })
            .fold((0.0, 0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
        checks.push(Check::new(
            format!("gradients of lstm, dense and {label} over 100 seeds"),
            worst <= TOLERANCE,
            format!("worst relative error {worst:.2e} (`{name}`, seed {seed})"),
        ));
    }

    let (net, p) = problem(11, true);
    let full = net.forward_recurrent(&p.inputs).expect("shapes");
    let mut perturbed = p.inputs.clone();
    for x in perturbed.iter_mut().skip(3) {
        x.iter_mut().for_each(|v| *v = 0.7 - 3.0 * *v);
    }
    let other = net.forward_recurrent(&perturbed).expect("shapes");
    let causal = (0..3).all(|t| full[t].iter().zip(&other[t]).all(|(a, b)| a.to_bits() == b.to_bits()));
    checks.push(Check::new("outputs depend only on the past", causal, "perturbing steps 3.. leaves steps 0..2 bit-identical"));

    let bits = |v: &[Vec<f64>]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    let round = |c: &Checkpoint| -> Checkpoint { serde_json::from_str(&serde_json::to_string(c).expect("ser")).expect("de") };
    let (mut net, p) = problem(5, false);
    let mut back = SequenceNet::from_checkpoint(&round(&net.to_checkpoint())).expect("restore");
    let same_net = bits(&net.forward(&p.inputs, &p.queries).expect("fwd")) == bits(&back.forward(&p.inputs, &p.queries).expect("fwd"));
    let inst = EnvInstance::from_config(&EnvConfig::default()).expect("valid");
    let ep = run_behavior(BehaviorKind::Random, &inst, &mut rng::from_seed(3)).expect("random");
    let policy = PolicyNet::new(5, &mut rng::from_seed(1)).expect("policy");
    let policy_back = PolicyNet::from_checkpoint(&round(&policy.to_checkpoint())).expect("restore");
    let bonus = BonusNet::new(5, &mut rng::from_seed(2)).expect("bonus");
    let bonus_back = BonusNet::from_checkpoint(&round(&bonus.to_checkpoint())).expect("restore");
    let obs = &ep.observations[..50];
    let same_policy = bits(&policy.logits(obs).expect("logits")) == bits(&policy_back.logits(obs).expect("logits"));
    let table = |b: &BonusNet| b.bonus_table(obs).expect("table").iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let same_bonus = bits(&table(&bonus)) == bits(&table(&bonus_back));
    checks.push(Check::new(
        "checkpoint round trip is bit-exact",
        same_net && same_policy && same_bonus,
        format!("network {same_net}, policy {same_policy}, bonus {same_bonus}"),
    ));
    checks
}

fn oracle() -> Vec<Check> {
    let (mut states, mut transitions, mut mismatches) = (0, 0, Vec::new());
    for i in 0..20 {
        let inst = EnvInstance::from_config(&EnvConfig {
            n: 3,
            episode_cap: 1000,
            seed: rng::derive_seed(21, "acceptance-oracle", i),
        })
        .expect("valid");
        let out = common::oracle::bfs_compare(&inst);
        states += out.states;
        transitions += out.transitions;
        mismatches.extend(out.mismatches);
    }
    vec![Check::new(
        "n = 3 breadth-first enumeration matches the reference rules on 20 instances",
        mismatches.is_empty(),
        format!(
            "{states} states, {transitions} transitions, {} mismatches{}",
            mismatches.len(),
            mismatches.first().map_or(String::new(), |m| format!(", first: {m}"))
        ),
    )]
}

fn threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var("SMTW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .map_or(available, |c| c.min(available))
}

fn run() -> explore_bonus::error::Result<Vec<Criterion>> {
    let cfg = match std::env::var_os("ACCEPTANCE_CONFIG") {
        Some(path) => {
            println!("acceptance: configuration from {}", PathBuf::from(&path).display());
            ExperimentConfig::load(&PathBuf::from(path))?
        }
        None => {
            println!("acceptance: default configuration");
            ExperimentConfig::default()
        }
    };
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out_dir)?;
    eprintln!("acceptance: writing outputs to {}", out_dir.display());

    let mut criteria = vec![
        Criterion {
            name: "closed-form values",
            checks: formulas(),
        },
        Criterion {
            name: "numerical core",
            checks: numerical_core(),
        },
        Criterion {
            name: "environment oracle",
            checks: oracle(),
        },
    ];

    let train = cfg.instances(Role::Train)?;
    let test_analysis = cfg.instances(Role::TestAnalysis)?;
    let test_agent = cfg.instances(Role::TestAgent)?;
    let train_ids: Vec<InstanceId> = train.iter().map(InstanceId::of).collect();
    let demos = runner::demonstrations(&cfg, &train)?;
    eprintln!("acceptance: training on {} demonstrations", demos.len());
    let started = Instant::now();
    let art = runner::train_smtw(&cfg, &demos)?;
    let smtw_time = started.elapsed();
    eprintln!(
        "acceptance: trained in {:.0}s (bc accuracy {:.4}, rms {:.3}/{:.3})",
        smtw_time.as_secs_f64(),
        art.bc.final_accuracy,
        art.regression.rms_demonstrated,
        art.regression.rms_contrast
    );
    let policy_path = out_dir.join("policy.ckpt.json");
    let bonus_path = out_dir.join("bonus.ckpt.json");
    io::write_checkpoint(&policy_path, &art.policy.to_checkpoint())?;
    io::write_checkpoint(&bonus_path, &art.bonus.to_checkpoint())?;

    let analysis = runner::analysis(&cfg, &art.bonus, &train_ids, &test_analysis)?;
    let mut written = evalharness::emit_report(&analysis, &out_dir)?;
    let mut ordering = criteria::ordering_checks(&analysis, rng::derive_seed(cfg.master_seed, "report", 0));
    ordering.push(Check::new(
        "learned bonus trains within 2 h single-threaded",
        smtw_time <= SMTW_BUDGET,
        format!("{:.0}s for {} train envs x {} demos", smtw_time.as_secs_f64(), cfg.dataset.train_envs, cfg.dataset.demos_per_env),
    ));

    let started = Instant::now();
    let agent = runner::agent_experiment(&cfg, &art.bonus, &train_ids, &test_agent, threads())?;
    let agent_time = started.elapsed();
    let curves = out_dir.join("curves.csv");
    std::fs::write(&curves, agent.curves_csv())?;
    written.push(curves);
    let mut agent_checks = criteria::agent_checks(&agent);
    agent_checks.push(Check::new(
        "agent sweep within 1 h",
        agent_time <= AGENT_BUDGET,
        format!("{:.0}s on {} thread(s)", agent_time.as_secs_f64(), threads()),
    ));

    let heldout_seed = rng::derive_seed(cfg.master_seed, "heldout", 0);
    let accuracy = runner::heldout_accuracy(&art.policy, &test_analysis, heldout_seed)?;
    let bc = vec![Check::new(
        format!("held-out demonstrator action accuracy >= {BC_THRESHOLD}"),
        accuracy >= BC_THRESHOLD,
        format!(
            "{accuracy:.4} on exploration episodes of {} unseen instances (training-set accuracy {:.4})",
            test_analysis.len(),
            art.bc.final_accuracy
        ),
    )];

    criteria.insert(0, Criterion {
        name: "ordering suite",
        checks: ordering,
    });
    criteria.insert(1, Criterion {
        name: "agent suite",
        checks: agent_checks,
    });
    criteria.push(Criterion {
        name: "behavioral cloning accuracy",
        checks: bc,
    });

    let mut manifest = Manifest::new("acceptance", &cfg);
    manifest.outputs = [policy_path, bonus_path]
        .iter()
        .chain(&written)
        .map(|p| FileRecord::of(p))
        .collect::<explore_bonus::error::Result<_>>()?;
    manifest.results = serde_json::json!({
        "scaled": cfg != ExperimentConfig::default(),
        "smtw_seconds": smtw_time.as_secs_f64(),
        "agent_seconds": agent_time.as_secs_f64(),
        "bc": art.bc,
        "regression": art.regression,
        "heldout_accuracy": accuracy,
        "criteria": criteria.iter().map(|c| serde_json::json!({"name": c.name, "passed": c.passed(), "checks": c.checks})).collect::<Vec<_>>(),
    });
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(criteria)
}

fn main() -> ExitCode {
    match run() {
        Ok(criteria) => {
            for c in &criteria {
                c.print();
            }
            let failed = criteria.iter().filter(|c| !c.passed()).count();
            println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            println!("[FAIL] acceptance run aborted: {e}");
            ExitCode::FAILURE
        }
    }
}
