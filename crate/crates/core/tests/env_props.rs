use explore_bonus::gridworld::{
    Action, EnvConfig, EnvInstance, AGENT_CHANNEL, DOOR_CHANNEL, GOAL_REWARD, KEY_CHANNEL, NUM_ACTIONS, STEP_REWARD,
    WAIT_REWARD,
};
use proptest::prelude::*;

fn instance(n: usize, seed: u64) -> EnvInstance {
    EnvInstance::from_config(&EnvConfig {
        n,
        episode_cap: 1000,
        seed,
    })
    .unwrap()
}

proptest! {
    #[test]
    fn layout_invariants(n in 2usize..9, seed in any::<u64>()) {
        let inst = instance(n, seed);
        prop_assert!(inst.validate().is_ok());
        for c in 0..n {
            prop_assert_ne!(inst.key_cells[c], inst.door_cells[c]);
        }
        prop_assert_eq!(&inst, &instance(n, seed));
    }

    #[test]
    fn random_walks_keep_invariants(
        n in 2usize..8,
        seed in any::<u64>(),
        actions in prop::collection::vec(0usize..NUM_ACTIONS, 1..300),
        cap in 1usize..400,
    ) {
        let inst = instance(n, seed);
        let (mut state, obs) = inst.reset();
        prop_assert_eq!(obs.channel_count(KEY_CHANNEL), n);
        let mut steps = 0;
        for &code in &actions {
            if state.terminal {
                prop_assert!(inst.step(&state, Action::Wait, cap).is_err());
                break;
            }
            let a = Action::from_index(code).unwrap();
            let before = state;
            let step = inst.step(&state, a, cap).unwrap();
            steps += 1;
            prop_assert_eq!(step.state.step_count, steps);

            // rewards come from a closed set, and the goal needs the right key at the right door
            let goal = step.reward == GOAL_REWARD;
            prop_assert!(goal || step.reward == STEP_REWARD || step.reward == WAIT_REWARD);
            prop_assert_eq!(step.reward == WAIT_REWARD, a == Action::Wait);
            if goal {
                prop_assert_eq!(a, Action::Open);
                prop_assert_eq!(before.held_key, Some(inst.correct_key));
                prop_assert_eq!(inst.door_at(before.agent), Some(inst.correct_door));
                prop_assert!(step.terminal && !step.state.truncated);
            }
            // truncation exactly at the cap
            prop_assert_eq!(step.state.truncated, !goal && steps >= cap);
            prop_assert_eq!(step.terminal, goal || steps >= cap);

            // moves change position by at most one cell; other actions never move
            let (dr, dc) = (
                step.state.agent.0.abs_diff(before.agent.0),
                step.state.agent.1.abs_diff(before.agent.1),
            );
            prop_assert!(dr + dc <= usize::from(a.is_movement()));
            if a.is_movement() || a == Action::Wait {
                prop_assert_eq!(step.state.held_key, before.held_key);
            }
            if a == Action::Open && !goal {
                prop_assert_eq!(step.state.held_key, None);
            }

            // rendering
            let o = &step.observation;
            prop_assert_eq!(o, &inst.render(&step.state));
            prop_assert_eq!(o.channel_count(AGENT_CHANNEL), 1);
            prop_assert!(o.is_lit(step.state.agent.0, step.state.agent.1, AGENT_CHANNEL));
            prop_assert_eq!(o.channel_count(DOOR_CHANNEL), n);
            let keys = o.channel_count(KEY_CHANNEL);
            // a held key lit under the agent may coincide with another key's home cell
            prop_assert!(keys == n || (keys == n - 1 && step.state.held_key.is_some()));
            prop_assert!(o.normalized().iter().all(|&v| v == 0.0 || v == 1.0));

            let code = inst.ground_truth_state(&step.state);
            prop_assert!(code < inst.num_ground_truth_states());
            state = step.state;
        }
    }

    #[test]
    fn ground_truth_code_is_injective(n in 2usize..7, seed in any::<u64>()) {
        let inst = instance(n, seed);
        let mut seen = std::collections::HashSet::new();
        for r in 0..n {
            for c in 0..n {
                for held in std::iter::once(None).chain((0..n).map(Some)) {
                    let mut s = inst.initial_state();
                    s.agent = (r, c);
                    s.held_key = held;
                    prop_assert!(seen.insert(inst.ground_truth_state(&s)));
                }
            }
        }
        prop_assert_eq!(seen.len() as u64, inst.num_ground_truth_states());
    }
}
