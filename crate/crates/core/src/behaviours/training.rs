use rand::Rng;
use rand_distr::StandardNormal;

use super::net::{BehaviourNet, HeadKind};
use crate::curve::{CurvePoint, PhaseLabel, SuccessWindow, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::experts::{expert_action, ExpertGains};
use crate::world::{Action, Behaviour, Phase, WorldState, EPISODE_STEPS, SEGMENT_STEPS};

/// Who drives the gripper during a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerSource {
    Expert,
    Network,
}

impl ControllerSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerSource::Expert => "expert",
            ControllerSource::Network => "network",
        }
    }
}

/// Controllers for the phases that are not being trained, indexed by behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scaffold(pub [ControllerSource; 3]);

impl Scaffold {
    pub const EXPERTS: Scaffold = Scaffold([ControllerSource::Expert; 3]);

    pub fn source(&self, b: Behaviour) -> ControllerSource {
        self.0[b.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcConfig {
    pub lr: f64,
    pub window: usize,
    /// Stop a phase when the best window rate has not improved for this many episodes.
    pub patience: usize,
    pub gains: ExpertGains,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            window: DEFAULT_WINDOW,
            patience: 1000,
            gains: ExpertGains::default(),
        }
    }
}

/// Per-episode record of behaviour training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub success: bool,
    pub window_success: f64,
    /// BC updates issued during the episode.
    pub updates: usize,
    pub mean_loss: f64,
    /// Controllers that actually drove each phase this episode (None if the phase was not reached).
    pub drivers: [Option<ControllerSource>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub behaviour: Option<Behaviour>,
    pub episodes: Vec<EpisodeRecord>,
    /// Window success reached 1.0.
    pub converged: bool,
}

impl TrainingLog {
    pub fn final_window(&self) -> f64 {
        self.episodes.last().map_or(0.0, |e| e.window_success)
    }

    pub fn curve(&self, first_episode: usize, phase: PhaseLabel) -> Vec<CurvePoint> {
        self.episodes
            .iter()
            .enumerate()
            .map(|(i, e)| CurvePoint {
                episode: first_episode + i,
                window_success: e.window_success,
                phase,
            })
            .collect()
    }
}

fn noise<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

fn drive<R: Rng + ?Sized>(
    net: &BehaviourNet,
    source: ControllerSource,
    b: Behaviour,
    state: &WorldState,
    prev: &WorldState,
    gains: &ExpertGains,
    rng: &mut R,
) -> Result<Action> {
    match source {
        // An expert standing in for a behaviour gets the same actuators as its head.
        ControllerSource::Expert => Ok(HeadKind::from(b).restrict(&expert_action(b, state, gains), state)),
        ControllerSource::Network => {
            let kind = HeadKind::from(b);
            let n = noise(rng, kind.action_dim());
            let out = net.act(kind, state.observe(prev).as_slice(), Some(&n))?;
            Ok(kind.denormalize(&out, state))
        }
    }
}

/// One behaviour-training episode. Earlier phases run under the scaffold;
/// the trained behaviour gets one BC update per step of its segment.
fn bc_episode<R: Rng + ?Sized>(
    net: &mut BehaviourNet,
    target: Behaviour,
    scaffold: &Scaffold,
    seed: u64,
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<(bool, usize, f64, [Option<ControllerSource>; 3])> {
    let mut state = WorldState::reset(seed);
    let mut prev = state;
    let mut drivers = [None; 3];
    let mut loss_sum = 0.0;
    let mut updates = 0;
    for b in Behaviour::ALL {
        let training = b == target;
        let source = if training {
            ControllerSource::Network
        } else {
            scaffold.source(b)
        };
        drivers[b.index()] = Some(source);
        let mut steps = 0;
        while !b.done(&state) && steps < SEGMENT_STEPS {
            let action = if training {
                let kind = HeadKind::from(b);
                let obs = state.observe(&prev);
                let expert = expert_action(b, &state, &cfg.gains);
                let n = noise(rng, kind.action_dim());
                let (loss, sample) = net.bc_step(kind, obs.as_slice(), &kind.normalize(&expert), &n, cfg.lr)?;
                loss_sum += loss;
                updates += 1;
                kind.denormalize(&sample, &state)
            } else {
                drive(net, source, b, &state, &prev, &cfg.gains, rng)?
            };
            prev = state;
            state = state.step(&action)?;
            steps += 1;
        }
        if !b.done(&state) {
            return Ok((false, updates, mean(loss_sum, updates), drivers));
        }
        if training {
            return Ok((true, updates, mean(loss_sum, updates), drivers));
        }
    }
    unreachable!("the target behaviour is one of Behaviour::ALL")
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Stop rule shared by the BC phases and the end-to-end baseline.
#[derive(Debug, Clone)]
pub(crate) struct Progress {
    window: SuccessWindow,
    best: f64,
    since_best: usize,
    patience: usize,
}

impl Progress {
    pub(crate) fn new(window: usize, patience: usize) -> Self {
        Self {
            window: SuccessWindow::new(window),
            best: 0.0,
            since_best: 0,
            patience,
        }
    }

    pub(crate) fn push(&mut self, success: bool) -> f64 {
        let rate = self.window.push(success);
        if rate > self.best {
            self.best = rate;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        rate
    }

    pub(crate) fn converged(&self) -> bool {
        self.window.rate() >= 1.0
    }

    pub(crate) fn should_stop(&self) -> bool {
        self.converged() || self.since_best >= self.patience
    }
}

/// Behaviour cloning of one behaviour until its window success reaches 1.0,
/// the patience runs out, or `max_episodes` are spent.
pub fn train_behaviour<R: Rng + ?Sized>(
    net: &mut BehaviourNet,
    behaviour: Behaviour,
    scaffold: &Scaffold,
    max_episodes: usize,
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<TrainingLog> {
    let mut log = TrainingLog {
        behaviour: Some(behaviour),
        episodes: Vec::new(),
        converged: false,
    };
    train_behaviour_into(net, behaviour, scaffold, max_episodes, cfg, rng, &mut log)?;
    Ok(log)
}

/// As [`train_behaviour`], appending to `log` so a partial log survives an error.
pub fn train_behaviour_into<R: Rng + ?Sized>(
    net: &mut BehaviourNet,
    behaviour: Behaviour,
    scaffold: &Scaffold,
    max_episodes: usize,
    cfg: &BcConfig,
    rng: &mut R,
    log: &mut TrainingLog,
) -> Result<()> {
    let mut progress = Progress::new(cfg.window, cfg.patience);
    for _ in 0..max_episodes {
        let seed = rng.gen();
        let (success, updates, mean_loss, drivers) = bc_episode(net, behaviour, scaffold, seed, cfg, rng)?;
        let window_success = progress.push(success);
        log.episodes.push(EpisodeRecord {
            success,
            window_success,
            updates,
            mean_loss,
            drivers,
        });
        if progress.should_stop() {
            break;
        }
    }
    log.converged = progress.converged();
    Ok(())
}

/// One end-to-end episode over the full task with a BC update at every
/// step, labelled by the expert of the currently required phase.
pub(crate) fn end_to_end_episode<R: Rng + ?Sized>(
    net: &mut BehaviourNet,
    seed: u64,
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<(bool, usize, f64)> {
    let kind = HeadKind::EndToEnd;
    let mut state = WorldState::reset(seed);
    let mut prev = state;
    let mut phase = Phase::Approach;
    let mut loss_sum = 0.0;
    let mut steps = 0;
    while steps < EPISODE_STEPS {
        let Some(b) = phase.behaviour() else { break };
        let obs = state.observe(&prev);
        let expert = expert_action(b, &state, &cfg.gains);
        let n = noise(rng, kind.action_dim());
        let (loss, sample) = net.bc_step(kind, obs.as_slice(), &kind.normalize(&expert), &n, cfg.lr)?;
        loss_sum += loss;
        prev = state;
        state = state.step(&kind.denormalize(&sample, &state))?;
        steps += 1;
        phase = phase.advance(&state);
    }
    Ok((phase == Phase::Done, steps, mean(loss_sum, steps)))
}

/// Drives one full episode with behaviour controllers, switching on the
/// phase predicates. Each phase gets [`SEGMENT_STEPS`] steps.
pub fn run_combined_episode(
    seed: u64,
    mut controller: impl FnMut(Behaviour, &WorldState, &WorldState) -> Result<Action>,
) -> Result<bool> {
    let mut state = WorldState::reset(seed);
    let mut prev = state;
    let mut phase = Phase::Approach;
    let mut segment = 0;
    let mut steps = 0;
    while let Some(b) = phase.behaviour() {
        if segment == SEGMENT_STEPS || steps == EPISODE_STEPS {
            break;
        }
        let action = controller(b, &state, &prev)?;
        prev = state;
        state = state.step(&action)?;
        steps += 1;
        segment += 1;
        let next = phase.advance(&state);
        if next != phase {
            phase = next;
            segment = 0;
        }
    }
    Ok(phase == Phase::Done)
}

/// Success rate of the manually sequenced heads (mean actions) over `seeds`.
pub fn evaluate_combined(net: &BehaviourNet, seeds: &[u64]) -> Result<f64> {
    evaluate_combined_with(seeds, |b, s, p| {
        let kind = HeadKind::from(b);
        let out = net.act(kind, s.observe(p).as_slice(), None)?;
        Ok(kind.denormalize(&out, s))
    })
}

pub fn evaluate_combined_with(
    seeds: &[u64],
    mut controller: impl FnMut(Behaviour, &WorldState, &WorldState) -> Result<Action>,
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let mut wins = 0;
    for &seed in seeds {
        if run_combined_episode(seed, &mut controller)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / seeds.len() as f64)
}
