//! Scripted proportional controllers for each behaviour.
//!
//! These provide the demonstration actions for behaviour cloning and drive
//! the phases that a training strategy does not hand to a network.

use crate::error::{Error, Result};
use crate::world::{
    sub3, wrap_angle, Action, Behaviour, Phase, Vec3, WorldState, EPISODE_STEPS, MAX_DAPERTURE,
    MAX_DPOS, MAX_DYAW, SEGMENT_STEPS,
};

/// Gains act as rates over this control period (seconds per step), giving
/// per-step feedback factors `kp_pos * CONTROL_PERIOD = 0.8` and
/// `kp_yaw * CONTROL_PERIOD = 0.4` at the defaults.
pub const CONTROL_PERIOD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertGains {
    pub kp_pos: f64,
    pub kp_yaw: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self {
            kp_pos: 4.0,
            kp_yaw: 2.0,
        }
    }
}

impl ExpertGains {
    pub fn new(kp_pos: f64, kp_yaw: f64) -> Result<Self> {
        if !(kp_pos > 0.0 && kp_yaw > 0.0) {
            return Err(Error::Config(format!(
                "expert gains must be positive, got kp_pos={kp_pos}, kp_yaw={kp_yaw}"
            )));
        }
        Ok(Self { kp_pos, kp_yaw })
    }

    fn pos_step(&self, error: Vec3) -> Vec3 {
        error.map(|e| (self.kp_pos * CONTROL_PERIOD * e).clamp(-MAX_DPOS, MAX_DPOS))
    }

    fn yaw_step(&self, error: f64) -> f64 {
        (self.kp_yaw * CONTROL_PERIOD * wrap_angle(error)).clamp(-MAX_DYAW, MAX_DYAW)
    }
}

/// Aperture command while grasping: close on an aligned block within
/// reach, hold once attached, otherwise open.
pub fn grasp_aperture(state: &WorldState) -> f64 {
    if state.attached {
        0.0
    } else if state.in_grasp_zone() {
        -MAX_DAPERTURE
    } else {
        MAX_DAPERTURE
    }
}

/// Aperture rule shared by every behaviour, including the single
/// end-to-end policy that has no behaviour decomposition.
pub fn aperture_for(behaviour: Option<Behaviour>, state: &WorldState) -> f64 {
    match behaviour {
        Some(Behaviour::Approach) => 0.0,
        Some(Behaviour::Grasp) => grasp_aperture(state),
        Some(Behaviour::Retract) => -MAX_DAPERTURE,
        None => {
            if state.attached {
                -MAX_DAPERTURE
            } else {
                grasp_aperture(state)
            }
        }
    }
}

pub fn expert_approach(state: &WorldState, gains: &ExpertGains) -> Action {
    Action::new(
        gains.pos_step(sub3(state.hover_point(), state.gripper_pos)),
        gains.yaw_step(state.block_yaw - state.gripper_yaw),
        0.0,
    )
}

pub fn expert_grasp(state: &WorldState, gains: &ExpertGains) -> Action {
    if state.attached {
        return Action::ZERO;
    }
    Action::new(
        gains.pos_step(sub3(state.block_pos, state.gripper_pos)),
        gains.yaw_step(state.block_yaw - state.gripper_yaw),
        grasp_aperture(state),
    )
}

pub fn expert_retract(state: &WorldState, gains: &ExpertGains) -> Action {
    Action::new(
        gains.pos_step(sub3(state.target_pos, state.block_pos)),
        0.0,
        -MAX_DAPERTURE,
    )
}

pub fn expert_action(behaviour: Behaviour, state: &WorldState, gains: &ExpertGains) -> Action {
    match behaviour {
        Behaviour::Approach => expert_approach(state, gains),
        Behaviour::Grasp => expert_grasp(state, gains),
        Behaviour::Retract => expert_retract(state, gains),
    }
}

/// Outcome of a scripted full-task episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertEpisode {
    pub success: bool,
    pub steps: usize,
    /// Step index at which each phase predicate first held, in order.
    pub completed_at: [Option<usize>; 3],
}

/// Runs the expert chain on one seeded episode, switching on the phase
/// predicates. Each phase gets at most [`SEGMENT_STEPS`] steps.
pub fn run_expert_episode(seed: u64, gains: &ExpertGains) -> Result<ExpertEpisode> {
    let mut state = WorldState::reset(seed);
    let mut phase = Phase::Approach;
    let mut completed_at = [None; 3];
    let mut segment_steps = 0;
    let mut steps = 0;
    while steps < EPISODE_STEPS {
        let Some(b) = phase.behaviour() else { break };
        if segment_steps == SEGMENT_STEPS {
            break;
        }
        state = state.step(&expert_action(b, &state, gains))?;
        steps += 1;
        segment_steps += 1;
        let next = phase.advance(&state);
        if next != phase {
            let mut p = phase;
            while p != next {
                if let Some(done) = p.behaviour() {
                    completed_at[done.index()] = Some(steps);
                }
                p = p.next();
            }
            phase = next;
            segment_steps = 0;
        }
    }
    Ok(ExpertEpisode {
        success: phase == Phase::Done,
        steps,
        completed_at,
    })
}

/// Fraction of seeds `0..episodes` on which the expert chain succeeds.
pub fn expert_chain_success_rate(episodes: u64, gains: &ExpertGains) -> Result<f64> {
    let mut wins = 0u64;
    for seed in 0..episodes {
        if run_expert_episode(seed, gains)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes.max(1) as f64)
}
