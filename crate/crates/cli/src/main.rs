use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use explore_bonus::agent::ExperimentReport;
use explore_bonus::criteria::{self, Check};
use explore_bonus::error::Error;
use explore_bonus::evalharness::{self, AnalysisReport, InstanceId};
use explore_bonus::io;
use explore_bonus::rng;
use explore_bonus::runner::{self, ExperimentConfig, FileRecord, Manifest, Role};
use explore_bonus::smtw::BonusNet;
use explore_bonus::verify;

const POLICY_FILE: &str = "policy.ckpt.json";
const BONUS_FILE: &str = "bonus.ckpt.json";
const MANIFEST_FILE: &str = "manifest.json";
const ANALYSIS_FILE: &str = "analysis.json";
const AGENT_FILE: &str = "agent_summary.json";

/// Exploration bonuses learned from demonstrations, with count and RND baselines.
#[derive(Debug, Parser)]
#[command(name = "smtw", version)]
struct Cli {
    /// Experiment configuration (JSON). Missing fields take their defaults;
    /// flags override fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `master_seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate environment instances (instances.jsonl).
    GenEnvs(GenEnvs),
    /// Run the demonstrator on instances (demos.jsonl).
    GenDemos(GenDemos),
    /// Behavioral cloning then bonus regression; writes both checkpoints.
    TrainSmtw(TrainSmtw),
    /// Score every behavior under every bonus on held-out instances.
    EvalBonus(EvalBonus),
    /// Tabular Q-learning sweep with and without bonuses.
    TrainAgent(TrainAgent),
    /// Read the analysis and agent outputs against the expected results.
    Report(Report),
    /// Run the invariant suite.
    Verify,
}

#[derive(Debug, Args)]
struct GenEnvs {
    /// Grid side length.
    #[arg(long)]
    n: Option<usize>,
    /// Number of instances; defaults to the role's count in the configuration.
    #[arg(long)]
    count: Option<usize>,
    /// Seed stream: train, test-analysis or test-agent.
    #[arg(long, default_value = "train")]
    role: Role,
    #[arg(long, default_value = "instances.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenDemos {
    #[arg(long)]
    instances: PathBuf,
    /// Demonstrations per instance.
    #[arg(long)]
    per_env: Option<usize>,
    #[arg(long, default_value = "demos.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainSmtw {
    /// Training instances; their ids are recorded so evaluation can refuse overlap.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    policy_epochs: Option<usize>,
    #[arg(long)]
    bonus_epochs: Option<usize>,
    /// Output directory for checkpoints and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalBonus {
    /// Directory written by train-smtw.
    #[arg(long)]
    model: PathBuf,
    /// Held-out instances.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainAgent {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    instances: PathBuf,
    /// Worker threads; SMTW_THREADS caps this.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Report {
    /// Directory written by eval-bonus.
    #[arg(long)]
    analysis: Option<PathBuf>,
    /// Directory written by train-agent.
    #[arg(long)]
    agent: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Missing(String),
    Lib(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Missing(e.to_string()),
            e => Failure::Lib(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Missing(_) => 3,
            Failure::Lib(Error::FormatVersion { .. }) => 4,
            Failure::Lib(Error::Format(_) | Error::Json(_)) => 5,
            Failure::Lib(Error::InstanceOverlap(_)) => 6,
            Failure::Lib(Error::InvalidConfig(_)) => 7,
            Failure::Checks(_) => 8,
            Failure::Lib(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Missing(m) => format!("missing input: {m}"),
            Failure::Lib(e) => e.to_string(),
            Failure::Checks(n) => format!("{n} check(s) failed"),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn require(path: &Path) -> std::result::Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Missing(path.display().to_string()))
    }
}

fn load_config(cli: &Cli) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require(path)?;
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn threads(requested: Option<usize>) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("SMTW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    let n = requested.unwrap_or(available);
    cap.map_or(n, |c| n.min(c)).max(1)
}

fn records(paths: &[PathBuf]) -> std::result::Result<Vec<FileRecord>, Failure> {
    Ok(paths.iter().map(|p| FileRecord::of(p)).collect::<explore_bonus::error::Result<_>>()?)
}

/// Manifest path for commands that write a single file.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|f| f.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_model(dir: &Path) -> std::result::Result<(BonusNet, Vec<InstanceId>), Failure> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let ckpt_path = dir.join(BONUS_FILE);
    require(&manifest_path)?;
    require(&ckpt_path)?;
    let manifest = Manifest::read(&manifest_path)?;
    let train_ids: Vec<InstanceId> = serde_json::from_value(manifest.results["train_ids"].clone())
        .map_err(|e| Error::Format(format!("train_ids in {}: {e}", manifest_path.display())))?;
    let model = BonusNet::from_checkpoint(&io::read_checkpoint(&ckpt_path)?)?;
    Ok((model, train_ids))
}

fn gen_envs(cfg: &mut ExperimentConfig, args: &GenEnvs) -> Outcome {
    if let Some(n) = args.n {
        cfg.env.n = n;
    }
    if let Some(count) = args.count {
        match args.role {
            Role::Train => cfg.dataset.train_envs = count,
            Role::TestAnalysis => cfg.dataset.test_envs_analysis = count,
            Role::TestAgent => cfg.dataset.test_envs_agent = count,
        }
    }
    cfg.validate()?;
    let instances = cfg.instances(args.role)?;
    io::write_instances(&args.out, &instances)?;
    let mut manifest = Manifest::new("gen-envs", cfg);
    manifest.seeds = json!({ "master_seed": cfg.master_seed, "role": args.role.name() });
    manifest.outputs = records(std::slice::from_ref(&args.out))?;
    manifest.results = json!({ "count": instances.len() });
    manifest.write(&sidecar(&args.out))?;
    println!("wrote {} instances to {}", instances.len(), args.out.display());
    Ok(())
}

fn gen_demos(cfg: &mut ExperimentConfig, args: &GenDemos) -> Outcome {
    if let Some(per) = args.per_env {
        cfg.dataset.demos_per_env = per;
    }
    cfg.validate()?;
    require(&args.instances)?;
    let instances = io::read_instances(&args.instances)?;
    let demos = runner::demonstrations(cfg, &instances)?;
    io::write_demos(&args.out, &demos)?;
    let mut manifest = Manifest::new("gen-demos", cfg);
    manifest.seeds = json!({ "master_seed": cfg.master_seed, "demos": rng::derive_seed(cfg.master_seed, "demos", 0) });
    manifest.inputs = records(std::slice::from_ref(&args.instances))?;
    manifest.outputs = records(std::slice::from_ref(&args.out))?;
    manifest.results = json!({ "demonstrations": demos.len() });
    manifest.write(&sidecar(&args.out))?;
    println!("wrote {} demonstrations to {}", demos.len(), args.out.display());
    Ok(())
}

fn train_smtw(cfg: &mut ExperimentConfig, args: &TrainSmtw) -> Outcome {
    if let Some(e) = args.policy_epochs {
        cfg.smtw.policy_epochs = e;
    }
    if let Some(e) = args.bonus_epochs {
        cfg.smtw.bonus_epochs = e;
    }
    cfg.validate()?;
    require(&args.instances)?;
    require(&args.demos)?;
    let instances = io::read_instances(&args.instances)?;
    let demos = io::read_demos(&args.demos)?;
    let seeds: std::collections::HashSet<u64> = instances.iter().map(|i| i.seed).collect();
    if let Some(d) = demos.iter().find(|d| !seeds.contains(&d.exploration_episode.instance_ref)) {
        return Err(Error::Format(format!(
            "demonstration on instance {} is not in {}",
            d.exploration_episode.instance_ref,
            args.instances.display()
        ))
        .into());
    }
    let art = runner::train_smtw(cfg, &demos)?;
    fs::create_dir_all(&args.out)?;
    let policy_path = args.out.join(POLICY_FILE);
    let bonus_path = args.out.join(BONUS_FILE);
    io::write_checkpoint(&policy_path, &art.policy.to_checkpoint())?;
    io::write_checkpoint(&bonus_path, &art.bonus.to_checkpoint())?;
    let train_ids: Vec<InstanceId> = instances.iter().map(InstanceId::of).collect();
    let policy_cfg = cfg.policy_training();
    let bonus_cfg = cfg.bonus_training();
    let mut manifest = Manifest::new("train-smtw", cfg);
    manifest.seeds = json!({
        "master_seed": cfg.master_seed,
        "bc": policy_cfg.seed,
        "bonus": bonus_cfg.seed,
        "contrast": rng::derive_seed(cfg.master_seed, "contrast", 0),
    });
    manifest.inputs = records(&[args.instances.clone(), args.demos.clone()])?;
    manifest.outputs = records(&[policy_path, bonus_path])?;
    manifest.results = json!({
        "train_ids": train_ids,
        "demonstrations": demos.len(),
        "bc": art.bc,
        "regression": art.regression,
        "regression_samples": art.regression_samples,
    });
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    println!(
        "bc accuracy {:.4}; bonus rms demonstrated {:.3}, contrast {:.3}; b_min {:.3}",
        art.bc.final_accuracy, art.regression.rms_demonstrated, art.regression.rms_contrast, art.regression.b_min
    );
    Ok(())
}

fn eval_bonus(cfg: &mut ExperimentConfig, args: &EvalBonus) -> Outcome {
    cfg.validate()?;
    require(&args.instances)?;
    let (model, train_ids) = load_model(&args.model)?;
    let test = io::read_instances(&args.instances)?;
    evalharness::check_disjoint(&train_ids, &test)?;
    let report = runner::analysis(cfg, &model, &train_ids, &test)?;
    fs::create_dir_all(&args.out)?;
    let mut written = evalharness::emit_report(&report, &args.out)?;
    let report_path = args.out.join(ANALYSIS_FILE);
    io::write_json(&report_path, &report)?;
    written.push(report_path);
    let mut manifest = Manifest::new("eval-bonus", cfg);
    manifest.seeds = json!({ "master_seed": cfg.master_seed, "analysis": rng::derive_seed(cfg.master_seed, "analysis", 0) });
    manifest.inputs = records(&[args.model.join(BONUS_FILE), args.model.join(MANIFEST_FILE), args.instances.clone()])?;
    manifest.outputs = records(&written)?;
    manifest.results = json!({ "cells": report.cells.len(), "orderings": report.orderings.len() });
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    for row in &report.orderings {
        println!(
            "{:<6} {} vs {}: {:?} ({:.4} [{:.4}, {:.4}])",
            row.bonus.name(),
            row.behavior_a,
            row.behavior_b,
            row.relation,
            row.difference.estimate,
            row.difference.lo,
            row.difference.hi
        );
    }
    Ok(())
}

fn train_agent(cfg: &mut ExperimentConfig, args: &TrainAgent) -> Outcome {
    if let Some(e) = args.episodes {
        cfg.agent.episodes = e;
    }
    if let Some(lrs) = &args.lrs {
        cfg.agent.lrs = lrs.clone();
    }
    cfg.validate()?;
    require(&args.instances)?;
    let (model, train_ids) = load_model(&args.model)?;
    let test = io::read_instances(&args.instances)?;
    let report = runner::agent_experiment(cfg, &model, &train_ids, &test, threads(args.threads))?;
    fs::create_dir_all(&args.out)?;
    let curves = args.out.join("curves.csv");
    let summary = args.out.join(AGENT_FILE);
    fs::write(&curves, report.curves_csv())?;
    io::write_json(&summary, &report)?;
    let mut manifest = Manifest::new("train-agent", cfg);
    manifest.seeds = json!({ "master_seed": cfg.master_seed, "agent": report.config.seed });
    manifest.inputs = records(&[args.model.join(BONUS_FILE), args.model.join(MANIFEST_FILE), args.instances.clone()])?;
    manifest.outputs = records(&[curves, summary])?;
    manifest.results = json!({
        "runs": report.runs.len(),
        "best_lr": report.summaries.iter().map(|s| (s.algorithm.name(), s.best_lr)).collect::<Vec<_>>(),
    });
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    for s in &report.summaries {
        println!(
            "{:<15} best lr {:<5} first median > {}: {}",
            s.algorithm.name(),
            s.best_lr,
            criteria::RETURN_THRESHOLD,
            s.returns
                .first_median_above(criteria::RETURN_THRESHOLD)
                .map_or("never".to_string(), |e| format!("episode {e}"))
        );
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn markdown(checks: &[Check]) -> String {
    let mut out = String::from("# Results\n\n| | check | detail |\n|---|---|---|\n");
    for c in checks {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail.replace('|', "/")
        ));
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    out.push_str(&format!("\n{passed} of {} checks passed.\n", checks.len()));
    out
}

fn report(cfg: &mut ExperimentConfig, args: &Report) -> Outcome {
    if args.analysis.is_none() && args.agent.is_none() {
        return Err(Error::InvalidConfig("report needs --analysis, --agent or both".into()).into());
    }
    let mut checks = Vec::new();
    let mut inputs = Vec::new();
    if let Some(dir) = &args.analysis {
        let path = dir.join(ANALYSIS_FILE);
        let analysis: AnalysisReport = read_json(&path)?;
        checks.extend(criteria::ordering_checks(&analysis, rng::derive_seed(cfg.master_seed, "report", 0)));
        inputs.push(path);
    }
    if let Some(dir) = &args.agent {
        let path = dir.join(AGENT_FILE);
        let agent: ExperimentReport = read_json(&path)?;
        checks.extend(criteria::agent_checks(&agent));
        inputs.push(path);
    }
    fs::create_dir_all(&args.out)?;
    let md = args.out.join("report.md");
    let js = args.out.join("report.json");
    fs::write(&md, markdown(&checks))?;
    io::write_json(&js, &json!({ "format_version": io::FORMAT_VERSION, "checks": checks }))?;
    let mut manifest = Manifest::new("report", cfg);
    manifest.inputs = records(&inputs)?;
    manifest.outputs = records(&[md, js])?;
    manifest.results = json!({ "passed": checks.iter().filter(|c| c.passed).count(), "total": checks.len() });
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    for c in &checks {
        println!("{}", c.line());
    }
    Ok(())
}

fn run_verify(cfg: &ExperimentConfig) -> Outcome {
    let checks = verify::run_suite(cfg.master_seed);
    for c in &checks {
        println!("{}", c.line());
    }
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}

fn run(cli: &Cli) -> Outcome {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::GenEnvs(a) => gen_envs(&mut cfg, a),
        Command::GenDemos(a) => gen_demos(&mut cfg, a),
        Command::TrainSmtw(a) => train_smtw(&mut cfg, a),
        Command::EvalBonus(a) => eval_bonus(&mut cfg, a),
        Command::TrainAgent(a) => train_agent(&mut cfg, a),
        Command::Report(a) => report(&mut cfg, a),
        Command::Verify => run_verify(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
