//! Configuration, seeding and the pipeline stages shared by the command line
//! and the acceptance run.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{self, ExperimentConfig as AgentExperiment, ExperimentReport};
use crate::behaviors::{generate_demonstrations, BehaviorKind, Demonstration};
use crate::error::{Error, Result};
use crate::evalharness::{self, AnalysisConfig, AnalysisReport, InstanceId};
use crate::gridworld::{EnvConfig, EnvInstance};
use crate::io::{self, FORMAT_VERSION};
use crate::rng;
use crate::smtw::{self, BcReport, BonusNet, BonusReport, PolicyNet, TrainConfig};

/// Which instance set a seed belongs to; each role has its own seed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Train,
    TestAnalysis,
    TestAgent,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Train, Role::TestAnalysis, Role::TestAgent];

    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::TestAnalysis => "test-analysis",
            Role::TestAgent => "test-agent",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub n: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { n: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_envs: usize,
    pub demos_per_env: usize,
    pub test_envs_analysis: usize,
    pub test_envs_agent: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_envs: 200,
            demos_per_env: 10,
            test_envs_analysis: 20,
            test_envs_agent: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmtwSection {
    pub gamma: f64,
    pub policy_lr: f64,
    pub bonus_lr: f64,
    pub policy_epochs: usize,
    pub bonus_epochs: usize,
    /// Overrides the minimum regression target as the contrast target.
    pub b_min: Option<f64>,
}

impl Default for SmtwSection {
    fn default() -> Self {
        Self {
            gamma: smtw::GAMMA,
            policy_lr: smtw::POLICY_LR,
            bonus_lr: smtw::BONUS_LR,
            policy_epochs: smtw::DEFAULT_EPOCHS,
            bonus_epochs: smtw::DEFAULT_EPOCHS,
            b_min: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub lrs: Vec<f64>,
    pub repeats: usize,
    pub episodes: usize,
    pub episode_cap: usize,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            lrs: agent::LR_SWEEP.to_vec(),
            repeats: agent::REPEATS,
            episodes: agent::EPISODES,
            episode_cap: agent::EPISODE_CAP,
            epsilon: agent::EPSILON,
            gamma: agent::GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub env: EnvSection,
    pub dataset: DatasetSection,
    pub smtw: SmtwSection,
    pub agent: AgentSection,
}


impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        let counts = [
            ("dataset.train_envs", d.train_envs),
            ("dataset.demos_per_env", d.demos_per_env),
            ("dataset.test_envs_analysis", d.test_envs_analysis),
            ("dataset.test_envs_agent", d.test_envs_agent),
            ("smtw.policy_epochs", self.smtw.policy_epochs),
            ("smtw.bonus_epochs", self.smtw.bonus_epochs),
            ("agent.repeats", self.agent.repeats),
            ("agent.episodes", self.agent.episodes),
            ("agent.episode_cap", self.agent.episode_cap),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("`{name}` must be positive")));
        }
        EnvConfig {
            n: self.env.n,
            ..EnvConfig::default()
        }
        .validate()?;
        let lrs_ok = self.smtw.policy_lr > 0.0 && self.smtw.bonus_lr > 0.0;
        if !lrs_ok || !(0.0..=1.0).contains(&self.smtw.gamma) {
            return Err(Error::InvalidConfig("smtw learning rates must be positive and gamma in [0, 1]".into()));
        }
        if self.agent.lrs.is_empty() || self.agent.lrs.iter().any(|&lr| !(lr > 0.0 && lr <= 1.0)) {
            return Err(Error::InvalidConfig("agent.lrs must be a nonempty list in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.agent.epsilon) {
            return Err(Error::InvalidConfig("agent.epsilon must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn count(&self, role: Role) -> usize {
        match role {
            Role::Train => self.dataset.train_envs,
            Role::TestAnalysis => self.dataset.test_envs_analysis,
            Role::TestAgent => self.dataset.test_envs_agent,
        }
    }

    pub fn instances(&self, role: Role) -> Result<Vec<EnvInstance>> {
        instance_set(self.env.n, self.count(role), self.master_seed, role)
    }

    pub fn policy_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.smtw.policy_epochs,
            lr: self.smtw.policy_lr,
            seed: rng::derive_seed(self.master_seed, "bc", 0),
        }
    }

    pub fn bonus_training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.smtw.bonus_epochs,
            lr: self.smtw.bonus_lr,
            seed: rng::derive_seed(self.master_seed, "bonus", 0),
        }
    }

    pub fn agent_experiment(&self) -> AgentExperiment {
        AgentExperiment {
            lrs: self.agent.lrs.clone(),
            repeats: self.agent.repeats,
            episodes: self.agent.episodes,
            episode_cap: self.agent.episode_cap,
            epsilon: self.agent.epsilon,
            gamma: self.agent.gamma,
            seed: rng::derive_seed(self.master_seed, "agent", 0),
        }
    }

    pub fn sha256(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// `count` instances whose seeds come from the `role` stream of `master`.
/// Seeds are unique within the set.
pub fn instance_set(n: usize, count: usize, master: u64, role: Role) -> Result<Vec<EnvInstance>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        let seed = rng::derive_seed(master, role.name(), index);
        index += 1;
        if seen.insert(seed) {
            out.push(EnvInstance::from_config(&EnvConfig {
                n,
                episode_cap: crate::behaviors::DEMONSTRATOR_CAP,
                seed,
            })?);
        }
    }
    Ok(out)
}

/// Demonstrations for `instances`, drawn from the master seed's demo stream.
pub fn demonstrations(cfg: &ExperimentConfig, instances: &[EnvInstance]) -> Result<Vec<Demonstration>> {
    let mut r = rng::stream(cfg.master_seed, "demos", 0);
    generate_demonstrations(instances, cfg.dataset.demos_per_env, &mut r)
}

#[derive(Debug, Clone)]
pub struct SmtwArtifacts {
    pub policy: PolicyNet,
    pub bonus: BonusNet,
    pub bc: BcReport,
    pub regression: BonusReport,
    pub regression_samples: usize,
}

/// Behavioral cloning, then targets from the frozen classifier, then bonus regression.
pub fn train_smtw(cfg: &ExperimentConfig, demos: &[Demonstration]) -> Result<SmtwArtifacts> {
    let (policy, bc) = smtw::train_bc(demos, &cfg.policy_training())?;
    let mut contrast_rng = rng::stream(cfg.master_seed, "contrast", 0);
    let set = smtw::make_regression_targets(&policy, demos, cfg.smtw.gamma, cfg.smtw.b_min, &mut contrast_rng)?;
    let (bonus, regression) = smtw::train_bonus(&set, &cfg.bonus_training())?;
    Ok(SmtwArtifacts {
        policy,
        bonus,
        bc,
        regression,
        regression_samples: set.len(),
    })
}

pub fn analysis(cfg: &ExperimentConfig, model: &BonusNet, train: &[InstanceId], test: &[EnvInstance]) -> Result<AnalysisReport> {
    let acfg = AnalysisConfig::new(rng::derive_seed(cfg.master_seed, "analysis", 0));
    evalharness::run_analysis(model, train, test, &BehaviorKind::ALL, &acfg)
}

pub fn agent_experiment(
    cfg: &ExperimentConfig,
    model: &BonusNet,
    train: &[InstanceId],
    test: &[EnvInstance],
    threads: usize,
) -> Result<ExperimentReport> {
    evalharness::check_disjoint(train, test)?;
    agent::run_experiment(&cfg.agent_experiment(), test, Some(model), threads)
}

/// Per-step accuracy of the classifier on the exploration episodes of fresh
/// demonstrations.
pub fn heldout_accuracy(policy: &PolicyNet, instances: &[EnvInstance], seed: u64) -> Result<f64> {
    let demos = generate_demonstrations(instances, 1, &mut rng::stream(seed, "heldout-demos", 0))?;
    let (mut hits, mut steps) = (0.0, 0usize);
    for d in &demos {
        let ep = &d.exploration_episode;
        hits += policy.accuracy(ep)? * ep.len() as f64;
        steps += ep.len();
    }
    Ok(hits / steps.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    /// SHA-256 over `blob <len>\0<content>`, the git object addressing scheme.
    pub content_address: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut blob = format!("blob {}\0", bytes.len()).into_bytes();
        blob.extend_from_slice(&bytes);
        Ok(Self {
            name: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: io::sha256_hex(&bytes),
            content_address: io::sha256_hex(&blob),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seeds: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config: config.clone(),
            config_sha256: config.sha256(),
            seeds: serde_json::json!({ "master_seed": config.master_seed }),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(&text)?;
        io::check_version(v.format_version)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}
