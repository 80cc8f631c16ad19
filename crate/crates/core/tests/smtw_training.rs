use explore_bonus::behaviors::{run_behavior, BehaviorKind, Demonstration};
use explore_bonus::gridworld::{EnvConfig, EnvInstance};
use explore_bonus::rng;
use explore_bonus::smtw::{
    draw_contrast, train_bc, train_bonus, PolicyNet, RegressionEpisode, RegressionSample, RegressionSet, TrainConfig,
};

fn instance(n: usize, seed: u64) -> EnvInstance {
    EnvInstance::from_config(&EnvConfig {
        n,
        episode_cap: 2000,
        seed,
    })
    .unwrap()
}

fn synthetic_set(episodes: usize, target: impl Fn(usize, usize) -> f64, b_min: f64) -> RegressionSet {
    let mut r = rng::from_seed(17);
    let episodes = (0..episodes)
        .map(|i| {
            let inst = instance(3, i as u64);
            let ep = run_behavior(BehaviorKind::Demonstrator, &inst, &mut r).unwrap();
            let samples = ep
                .transitions()
                .enumerate()
                .map(|(t, tr)| RegressionSample {
                    action: tr.action,
                    reward: tr.reward,
                    target: target(i, t),
                    contrast: draw_contrast(tr.action, &mut r),
                    terminal: tr.terminal,
                })
                .collect();
            RegressionEpisode {
                observations: ep.observations.clone(),
                samples,
            }
        })
        .collect();
    RegressionSet {
        episodes,
        b_min,
        gamma: 0.99,
    }
}

#[test]
fn bc_memorizes_one_exploration_episode() {
    let inst = instance(3, 4);
    let ep = run_behavior(BehaviorKind::Demonstrator, &inst, &mut rng::from_seed(0)).unwrap();
    let demo = Demonstration {
        exploration_episode: ep.clone(),
        exploit_episodes: Vec::new(),
    };
    let (policy, report) = train_bc(
        &[demo],
        &TrainConfig {
            epochs: 300,
            lr: 3e-3,
            seed: 1,
        },
    )
    .unwrap();
    let acc = policy.accuracy(&ep).unwrap();
    assert!(acc >= 0.99, "accuracy {acc}");
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    let again = PolicyNet::from_checkpoint(&policy.to_checkpoint()).unwrap();
    assert_eq!(again.accuracy(&ep).unwrap(), acc);
}

#[test]
fn bc_is_reproducible_from_its_seed() {
    let inst = instance(3, 9);
    let ep = run_behavior(BehaviorKind::Demonstrator, &inst, &mut rng::from_seed(0)).unwrap();
    let demo = Demonstration {
        exploration_episode: ep,
        exploit_episodes: Vec::new(),
    };
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e-3,
        seed: 5,
    };
    let (a, ra) = train_bc(std::slice::from_ref(&demo), &cfg).unwrap();
    let (b, rb) = train_bc(std::slice::from_ref(&demo), &cfg).unwrap();
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());
    assert_eq!(ra, rb);
}

#[test]
fn bonus_regression_fits_a_constant() {
    let set = synthetic_set(4, |_, _| 3.0, 3.0);
    let (model, report) = train_bonus(
        &set,
        &TrainConfig {
            epochs: 400,
            lr: 1e-3,
            seed: 2,
        },
    )
    .unwrap();
    assert!(report.rms_demonstrated < 1e-2, "{report:?}");
    assert!(report.rms_contrast < 1e-2, "{report:?}");
    let ep = &set.episodes[0];
    let b = model.bonus(&ep.observations[..1], ep.samples[0].action).unwrap();
    assert!((b - 3.0).abs() < 5e-2, "bonus {b}");
}

#[test]
fn contrast_actions_settle_at_b_min() {
    let b_min = -4.0;
    let set = synthetic_set(6, |_, t| 1.0 + 0.1 * (t % 3) as f64, b_min);
    let (model, _) = train_bonus(
        &set,
        &TrainConfig {
            epochs: 400,
            lr: 1e-3,
            seed: 3,
        },
    )
    .unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for ep in &set.episodes {
        let table = model.bonus_table(&ep.observations[..ep.samples.len()]).unwrap();
        for (row, s) in table.iter().zip(&ep.samples) {
            sum += row[s.contrast.index()];
            count += 1;
        }
    }
    let mean = sum / count as f64;
    assert!((mean - b_min).abs() <= 0.1, "mean contrast bonus {mean}");
}
