use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::net::{A2cConfig, ChoreographerNet, LossComponents, Rollout, RolloutStep};
use crate::behaviours::{BehaviourNet, HeadKind};
use crate::curve::{CurvePoint, PhaseLabel, SuccessWindow, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::nn::LstmState;
use crate::world::{Behaviour, Phase, WorldState, EPISODE_STEPS};

pub const SUCCESS_BONUS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardMode {
    Dense,
    Sparse,
}

impl RewardMode {
    pub const ALL: [RewardMode; 2] = [RewardMode::Dense, RewardMode::Sparse];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Dense => "dense",
            RewardMode::Sparse => "sparse",
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dense" => Ok(RewardMode::Dense),
            "sparse" => Ok(RewardMode::Sparse),
            other => Err(Error::Config(format!("unknown reward mode `{other}`"))),
        }
    }
}

/// +1 for choosing the behaviour the task currently requires, -1 otherwise,
/// plus the success bonus when the step finishes the task.
pub fn reward_dense(phase_before: Phase, chosen: Behaviour, phase_after: Phase) -> f64 {
    let shaping = if phase_before.behaviour() == Some(chosen) {
        1.0
    } else {
        -1.0
    };
    let bonus = if phase_after == Phase::Done { SUCCESS_BONUS } else { 0.0 };
    shaping + bonus
}

pub fn reward_sparse(state_after: &WorldState) -> f64 {
    if state_after.task_success() {
        SUCCESS_BONUS
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoreographerConfig {
    pub a2c: A2cConfig,
    pub window: usize,
    /// Steps per update; the episode is cut into segments of this length,
    /// each bootstrapped from the value of the state it ends in.
    pub rollout_steps: usize,
}

impl Default for ChoreographerConfig {
    fn default() -> Self {
        Self {
            a2c: A2cConfig::default(),
            window: DEFAULT_WINDOW,
            rollout_steps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChoreographerEpisode {
    pub success: bool,
    pub steps: usize,
    pub total_reward: f64,
    pub window_success: f64,
    pub losses: LossComponents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoreographerLog {
    pub mode: RewardMode,
    pub episodes: Vec<ChoreographerEpisode>,
    pub converged: bool,
}

impl ChoreographerLog {
    pub fn curve(&self, first_episode: usize) -> Vec<CurvePoint> {
        self.episodes
            .iter()
            .enumerate()
            .map(|(i, e)| CurvePoint {
                episode: first_episode + i,
                window_success: e.window_success,
                phase: PhaseLabel::Choreographer,
            })
            .collect()
    }
}

/// Plays one episode with the choreographer picking a behaviour every step
/// and the chosen head producing the (mean) low-level action. No learning.
pub fn choreographer_rollout<R: Rng + ?Sized>(
    net: &ChoreographerNet,
    behaviours: &BehaviourNet,
    mode: RewardMode,
    seed: u64,
    rng: &mut R,
) -> Result<(Rollout, bool)> {
    let mut episode = Episode::new(net, seed);
    let mut rollout = Rollout::default();
    while !episode.finished() {
        rollout.steps.push(episode.step(net, behaviours, mode, rng)?);
    }
    if !episode.success {
        rollout.bootstrap_value = episode.value(net)?;
    }
    Ok((rollout, episode.success))
}

struct Episode {
    state: WorldState,
    prev: WorldState,
    phase: Phase,
    lstm: LstmState,
    steps: usize,
    success: bool,
}

impl Episode {
    fn new(net: &ChoreographerNet, seed: u64) -> Self {
        let state = WorldState::reset(seed);
        Self {
            state,
            prev: state,
            phase: Phase::Approach,
            lstm: net.initial_state(),
            steps: 0,
            success: false,
        }
    }

    fn finished(&self) -> bool {
        self.success || self.steps == EPISODE_STEPS
    }

    fn step<R: Rng + ?Sized>(
        &mut self,
        net: &ChoreographerNet,
        behaviours: &BehaviourNet,
        mode: RewardMode,
        rng: &mut R,
    ) -> Result<RolloutStep> {
        let obs = self.state.observe(&self.prev);
        let sel = net.select_behaviour(obs.as_slice(), &self.lstm, rng)?;
        let kind = HeadKind::from(sel.behaviour);
        let out = behaviours.act(kind, obs.as_slice(), None)?;
        let next = self.state.step(&kind.denormalize(&out, &self.state))?;
        let phase_after = self.phase.advance(&next);
        let reward = match mode {
            RewardMode::Dense => reward_dense(self.phase, sel.behaviour, phase_after),
            RewardMode::Sparse => reward_sparse(&next),
        };
        let terminal = phase_after == Phase::Done;
        let record = RolloutStep {
            observation: obs.as_slice().to_vec(),
            state: std::mem::replace(&mut self.lstm, sel.state),
            behaviour: sel.behaviour,
            log_prob: sel.log_prob,
            value: sel.value,
            reward,
            terminal,
        };
        self.prev = self.state;
        self.state = next;
        self.phase = phase_after;
        self.steps += 1;
        self.success = terminal;
        Ok(record)
    }

    /// Critic estimate for the current state, used to bootstrap a cut rollout.
    fn value(&self, net: &ChoreographerNet) -> Result<f64> {
        Ok(net.step(self.state.observe(&self.prev).as_slice(), &self.lstm)?.value)
    }
}

/// One training episode with an update after every `rollout_steps` steps
/// and at the end. Returns the episode summary.
fn training_episode<R: Rng + ?Sized>(
    net: &mut ChoreographerNet,
    behaviours: &BehaviourNet,
    mode: RewardMode,
    seed: u64,
    cfg: &ChoreographerConfig,
    rng: &mut R,
) -> Result<(bool, usize, f64, LossComponents)> {
    let mut episode = Episode::new(net, seed);
    let mut total_reward = 0.0;
    let mut losses = LossComponents::default();
    while !episode.finished() {
        let mut rollout = Rollout::default();
        while rollout.len() < cfg.rollout_steps.max(1) && !episode.finished() {
            let step = episode.step(net, behaviours, mode, rng)?;
            total_reward += step.reward;
            rollout.steps.push(step);
        }
        if !episode.success {
            rollout.bootstrap_value = episode.value(net)?;
        }
        let l = net.a2c_update(&rollout, &cfg.a2c)?;
        losses.policy += l.policy;
        losses.value += l.value;
        losses.entropy += l.entropy;
        losses.total += l.total;
    }
    Ok((episode.success, episode.steps, total_reward, losses))
}

/// Synchronous actor-critic training until the success window reaches 1.0
/// or `budget` episodes are spent.
pub fn train_choreographer<R: Rng + ?Sized>(
    net: &mut ChoreographerNet,
    behaviours: &BehaviourNet,
    mode: RewardMode,
    budget: usize,
    cfg: &ChoreographerConfig,
    rng: &mut R,
) -> Result<ChoreographerLog> {
    let mut log = ChoreographerLog {
        mode,
        episodes: Vec::new(),
        converged: false,
    };
    train_choreographer_into(net, behaviours, mode, budget, cfg, rng, &mut log)?;
    Ok(log)
}

/// As [`train_choreographer`], appending to `log` so a partial log survives an error.
pub fn train_choreographer_into<R: Rng + ?Sized>(
    net: &mut ChoreographerNet,
    behaviours: &BehaviourNet,
    mode: RewardMode,
    budget: usize,
    cfg: &ChoreographerConfig,
    rng: &mut R,
    log: &mut ChoreographerLog,
) -> Result<()> {
    let mut window = SuccessWindow::new(cfg.window);
    for _ in 0..budget {
        let seed = rng.gen();
        let (success, steps, total_reward, losses) = training_episode(net, behaviours, mode, seed, cfg, rng)?;
        let rate = window.push(success);
        log.episodes.push(ChoreographerEpisode {
            success,
            steps,
            total_reward,
            window_success: rate,
            losses,
        });
        if rate >= 1.0 {
            log.converged = true;
            break;
        }
    }
    Ok(())
}
