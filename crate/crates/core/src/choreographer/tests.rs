use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::behaviours::BehaviourNet;
use crate::nn::{Graph, LstmState};
use crate::world::{Behaviour, Phase, WorldState};

fn net() -> (BehaviourNet, ChoreographerNet) {
    let b = BehaviourNet::new(11).unwrap();
    let c = ChoreographerNet::new(&b, 12).unwrap();
    (b, c)
}

fn obs(seed: u64) -> Vec<f64> {
    let s = WorldState::reset(seed);
    s.observe(&s).as_slice().to_vec()
}

#[test]
fn probabilities_are_normalised() {
    let (_, c) = net();
    let mut state = c.initial_state();
    for seed in 0..20 {
        let out = c.step(&obs(seed), &state).unwrap();
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.probs.iter().all(|p| *p > 0.0));
        state = out.state;
    }
}

#[test]
fn categorical_sampling_follows_cumulative_mass() {
    assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.1), 0);
    assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.45), 1);
    assert_eq!(sample_categorical(&[0.2, 0.3, 0.5], 0.99), 2);
    let dominant = [10.0f64, -10.0, -10.0].map(f64::exp);
    let total: f64 = dominant.iter().sum();
    assert!(dominant[0] / total > 0.9999);
}

#[test]
fn selection_is_deterministic_for_a_fixed_rng() {
    let (_, c) = net();
    let o = obs(3);
    let a = c.select_behaviour(&o, &c.initial_state(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = c.select_behaviour(&o, &c.initial_state(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert!(a.log_prob <= 0.0);
}

#[test]
fn wrong_observation_length_is_rejected() {
    let (_, c) = net();
    assert!(c.step(&[0.0; 5], &c.initial_state()).is_err());
}

#[test]
fn dense_reward_rules() {
    assert_eq!(reward_dense(Phase::Approach, Behaviour::Approach, Phase::Approach), 1.0);
    assert_eq!(reward_dense(Phase::Approach, Behaviour::Retract, Phase::Approach), -1.0);
    assert_eq!(reward_dense(Phase::Retract, Behaviour::Retract, Phase::Done), 11.0);
}

#[test]
fn sparse_reward_rules() {
    let mut s = WorldState::reset(4);
    assert_eq!(reward_sparse(&s), 0.0);
    s.gripper_pos = s.target_pos;
    s.block_pos = s.target_pos;
    s.attached = true;
    assert_eq!(reward_sparse(&s), 10.0);
}

#[test]
fn failed_sparse_episode_has_zero_rewards() {
    let (b, c) = net();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (rollout, success) = choreographer_rollout(&c, &b, RewardMode::Sparse, 1, &mut rng).unwrap();
    assert!(!success);
    assert_eq!(rollout.len(), crate::world::EPISODE_STEPS);
    assert!(rollout.rewards().iter().all(|r| *r == 0.0));
}

#[test]
fn empty_rollout_is_rejected() {
    let (_, mut c) = net();
    assert!(matches!(
        c.a2c_update(&Rollout::default(), &A2cConfig::default()),
        Err(crate::Error::EmptyRollout)
    ));
}

fn synthetic_rollout(c: &ChoreographerNet, rewards: &[f64]) -> Rollout {
    let mut state = c.initial_state();
    let mut steps = Vec::new();
    for (t, &reward) in rewards.iter().enumerate() {
        let o = obs(t as u64);
        let out = c.step(&o, &state).unwrap();
        let b = Behaviour::from_index(t % 3).unwrap();
        steps.push(RolloutStep {
            observation: o,
            state: state.clone(),
            behaviour: b,
            log_prob: out.log_probs[b.index()],
            value: out.value,
            reward,
            terminal: t + 1 == rewards.len(),
        });
        state = out.state;
    }
    Rollout {
        steps,
        bootstrap_value: 0.0,
    }
}

#[test]
fn update_leaves_features_untouched() {
    let (_, mut c) = net();
    let before = c.store.checkpoint_bytes("features");
    let lstm_before = c.store.checkpoint_bytes("lstm");
    let r = synthetic_rollout(&c, &[1.0, -1.0, 10.0]);
    c.a2c_update(&r, &A2cConfig::default()).unwrap();
    assert_eq!(c.store.checkpoint_bytes("features"), before);
    assert_ne!(c.store.checkpoint_bytes("lstm"), lstm_before);
}

#[test]
fn zero_advantages_give_zero_policy_loss() {
    let (_, c) = net();
    // equal rewards with a constant-advantage rollout normalise to zero
    let mut r = synthetic_rollout(&c, &[0.0]);
    r.steps[0].reward = 3.0;
    let mut g = Graph::new(&c.store);
    let loss = c.a2c_loss(&mut g, &r, &A2cConfig::default()).unwrap();
    assert_eq!(g.value(loss.policy).item(), 0.0);
}

#[test]
fn positive_advantage_raises_log_probability() {
    let (_, mut c) = net();
    let o = obs(0);
    let state = c.initial_state();
    let before = c.step(&o, &state).unwrap().log_probs;
    let mut r = synthetic_rollout(&c, &[0.0, 0.0]);
    // step 0 takes behaviour 0 and is rewarded, step 1 is not
    r.steps[0].observation = o.clone();
    r.steps[0].state = state.clone();
    r.steps[0].reward = 1.0;
    let cfg = A2cConfig {
        lr: 1e-3,
        entropy_coef: 0.0,
        value_coef: 0.0,
        ..A2cConfig::default()
    };
    c.a2c_update(&r, &cfg).unwrap();
    let after = c.step(&o, &state).unwrap().log_probs;
    assert!(after[0] > before[0], "{before:?} -> {after:?}");
}

#[test]
fn lstm_memory_affects_later_logits() {
    let (_, c) = net();
    let seq: Vec<Vec<f64>> = (0..4).map(obs).collect();
    let run = |order: &[usize]| {
        let mut state: LstmState = c.initial_state();
        let mut last = None;
        for &i in order {
            let out = c.step(&seq[i], &state).unwrap();
            state = out.state;
            last = Some(out.log_probs);
        }
        last.unwrap()
    };
    let a = run(&[0, 1, 2, 3]);
    let b = run(&[2, 1, 0, 3]);
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn zero_budget_leaves_parameters_unchanged() {
    let (b, mut c) = net();
    let before = c.store.checkpoint_bytes("");
    let log = train_choreographer(
        &mut c,
        &b,
        RewardMode::Dense,
        0,
        &ChoreographerConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert!(log.episodes.is_empty());
    assert_eq!(c.store.checkpoint_bytes(""), before);
}

#[test]
fn reward_mode_parses() {
    assert_eq!("dense".parse::<RewardMode>().unwrap(), RewardMode::Dense);
    assert_eq!("Sparse".parse::<RewardMode>().unwrap(), RewardMode::Sparse);
    assert!("medium".parse::<RewardMode>().is_err());
}
