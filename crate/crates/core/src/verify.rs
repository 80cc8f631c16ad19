//! A self-contained invariant suite, runnable from the command line.

use rand::Rng as _;

use crate::baselines::CountTable;
use crate::behaviors::{canonical_trials, run_behavior, BehaviorKind};
use crate::criteria::Check;
use crate::gridworld::{
    Action, EnvConfig, EnvInstance, AGENT_CHANNEL, DOOR_CHANNEL, KEY_CHANNEL, NUM_ACTIONS,
};
use crate::neural::{softmax_cross_entropy, Architecture, HeadQuery, SequenceNet};
use crate::rng;
use crate::smtw::{bellman_targets, BonusNet, GAMMA};

fn lit(obs: &crate::gridworld::Observation, n: usize, channel: usize) -> usize {
    (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .filter(|&(r, c)| obs.is_lit(r, c, channel))
        .count()
}

fn environment(seed: u64) -> Check {
    let mut r = rng::stream(seed, "verify-env", 0);
    let mut failures = Vec::new();
    for i in 0..500 {
        let n = 2 + i % 6;
        let inst = match EnvInstance::from_config(&EnvConfig {
            n,
            episode_cap: 200,
            seed: rng::derive_seed(seed, "verify-instance", i as u64),
        }) {
            Ok(inst) => inst,
            Err(e) => {
                failures.push(format!("generation: {e}"));
                continue;
            }
        };
        if let Err(e) = inst.validate() {
            failures.push(format!("instance invariants: {e}"));
        }
        let (mut state, obs) = inst.reset();
        if lit(&obs, n, KEY_CHANNEL) != n || lit(&obs, n, DOOR_CHANNEL) != n || lit(&obs, n, AGENT_CHANNEL) != 1 {
            failures.push(format!("reset render of instance {}", inst.seed));
        }
        while !state.terminal {
            let a = Action::ALL[r.gen_range(0..NUM_ACTIONS)];
            let step = match inst.step(&state, a, 200) {
                Ok(s) => s,
                Err(e) => {
                    failures.push(format!("step: {e}"));
                    break;
                }
            };
            let code = inst.ground_truth_state(&step.state);
            if code >= inst.num_ground_truth_states() || step.observation != inst.render(&step.state) {
                failures.push(format!("state code or render of instance {}", inst.seed));
            }
            if lit(&step.observation, n, AGENT_CHANNEL) != 1 {
                failures.push("agent channel".into());
            }
            state = step.state;
        }
        if inst.step(&state, Action::Wait, 200).is_ok() {
            failures.push("step after termination accepted".into());
        }
    }
    outcome("environment invariants", failures)
}

fn behaviors(seed: u64) -> Check {
    let mut failures = Vec::new();
    for i in 0..100u64 {
        let inst = EnvInstance::from_config(&EnvConfig {
            n: 5,
            episode_cap: 2000,
            seed: rng::derive_seed(seed, "verify-behaviors", i),
        })
        .expect("n = 5 is valid");
        let mut r = rng::stream(seed, "verify-behavior-rng", i);
        match run_behavior(BehaviorKind::Demonstrator, &inst, &mut r) {
            Ok(ep) if ep.terminal && ep.count(Action::Open) == canonical_trials(&inst) => {}
            Ok(_) => failures.push(format!("demonstrator trial count on {}", inst.seed)),
            Err(e) => failures.push(e.to_string()),
        }
        for kind in BehaviorKind::ALL {
            match run_behavior(kind, &inst, &mut r) {
                Ok(ep) if ep.len() <= kind.cap() && ep.validate().is_ok() => {}
                Ok(_) => failures.push(format!("{kind} episode malformed on {}", inst.seed)),
                Err(e) => failures.push(format!("{kind}: {e}")),
            }
        }
    }
    outcome("behavior scripts", failures)
}

fn formulas() -> Check {
    let mut failures = Vec::new();
    let mut table = CountTable::new();
    for k in 1..=100u64 {
        let b = table.count_bonus(3, Action::Left);
        if (b - 1.0 / (k as f64).sqrt()).abs() > 1e-12 {
            failures.push(format!("count bonus at visit {k}"));
        }
    }
    let (ce, _) = softmax_cross_entropy(&[0.0; NUM_ACTIONS], 0);
    if (ce - (NUM_ACTIONS as f64).ln()).abs() > 1e-12 {
        failures.push("uniform cross-entropy".into());
    }
    let inst = EnvInstance::from_config(&EnvConfig::default()).expect("default config is valid");
    let ep = run_behavior(BehaviorKind::Demonstrator, &inst, &mut rng::from_seed(0)).expect("demonstrator succeeds");
    let c = 1.7;
    let y = bellman_targets(&vec![vec![c; NUM_ACTIONS]; ep.len() + 1], &ep, GAMMA);
    for (t, tr) in ep.transitions().enumerate() {
        let expected = if tr.terminal { c - tr.reward } else { (1.0 - GAMMA) * c - tr.reward };
        if (y[t] - expected).abs() > 1e-12 {
            failures.push(format!("regression target at step {t}"));
        }
    }
    outcome("closed-form bonus, loss and target values", failures)
}

fn network(seed: u64) -> Check {
    let mut failures = Vec::new();
    let mut r = rng::stream(seed, "verify-net", 0);
    let arch = Architecture {
        input: 6,
        recurrent: 4,
        hidden: 8,
        aux: 2,
        output: 3,
    };
    let mut net = SequenceNet::new(arch, &mut r).expect("valid architecture");
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let queries: Vec<HeadQuery> = (0..4)
        .map(|step| HeadQuery {
            step,
            aux: vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
        })
        .collect();
    let loss = |net: &mut SequenceNet| -> f64 {
        net.forward(&inputs, &queries)
            .expect("shapes agree")
            .iter()
            .map(|o| softmax_cross_entropy(o, 1).0)
            .sum()
    };
    net.zero_grad();
    let outs = net.forward(&inputs, &queries).expect("shapes agree");
    let grads: Vec<Vec<f64>> = outs.iter().map(|o| softmax_cross_entropy(o, 1).1).collect();
    net.backward(&grads).expect("cached forward");
    let eps = 1e-5;
    for pi in 0..net.store.params().len() {
        let analytic = net.store.params()[pi].grad.clone();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for (k, &g) in analytic.iter().enumerate() {
            let orig = net.store.params()[pi].value[k];
            net.store.params_mut()[pi].value[k] = orig + eps;
            let plus = loss(&mut net);
            net.store.params_mut()[pi].value[k] = orig - eps;
            let minus = loss(&mut net);
            net.store.params_mut()[pi].value[k] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            diff += (g - fd).powi(2);
            norm += g.abs().max(fd.abs()).powi(2);
        }
        if norm > 0.0 && (diff / norm).sqrt() > 1e-3 {
            failures.push(format!("gradient of `{}`", net.store.params()[pi].name));
        }
    }
    let ckpt = net.to_checkpoint();
    match serde_json::to_string(&ckpt).map(|s| serde_json::from_str::<crate::neural::Checkpoint>(&s)) {
        Ok(Ok(back)) if back == ckpt => {}
        _ => failures.push("checkpoint round trip".into()),
    }

    let model = BonusNet::new(3, &mut r).expect("valid architecture");
    let inst = EnvInstance::from_config(&EnvConfig {
        n: 3,
        episode_cap: 1000,
        seed,
    })
    .expect("n = 3 is valid");
    let ep = run_behavior(BehaviorKind::Random, &inst, &mut r).expect("random walk runs");
    let mut tracker = model.tracker();
    for t in 0..ep.len().min(30) {
        let incremental = tracker.push(&ep.observations[t]).and_then(|_| tracker.query(ep.actions[t]));
        let scratch = model.bonus(&ep.observations[..=t], ep.actions[t]);
        match (incremental, scratch) {
            (Ok(a), Ok(b)) if a.to_bits() == b.to_bits() => {}
            _ => failures.push(format!("incremental bonus at step {t}")),
        }
    }
    outcome("network gradients, checkpoints and incremental evaluation", failures)
}

fn outcome(name: &str, failures: Vec<String>) -> Check {
    let passed = failures.is_empty();
    let detail = if passed {
        "ok".to_string()
    } else {
        let shown: Vec<&str> = failures.iter().take(5).map(String::as_str).collect();
        format!("{} failure(s): {}", failures.len(), shown.join("; "))
    };
    Check::new(name, passed, detail)
}

pub fn run_suite(seed: u64) -> Vec<Check> {
    vec![environment(seed), behaviors(seed), formulas(), network(seed)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for check in run_suite(11) {
            assert!(check.passed, "{}", check.line());
        }
    }
}
