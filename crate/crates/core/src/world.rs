//! Kinematic pick-and-place world.
//!
//! A rigid, gravity-free stand-in for the Fetch pick-and-place benchmark:
//! a gripper with position, yaw and aperture, one block with position and
//! yaw, and a target point in the air. The block is grasped by a rule
//! (closed enough, close enough, yaw aligned) and then follows the gripper
//! rigidly until the gripper opens again.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub const WORKSPACE_MIN: Vec3 = [1.0, 0.4, 0.40];
pub const WORKSPACE_MAX: Vec3 = [1.6, 1.1, 0.90];
pub const TABLE_Z: f64 = 0.42;
pub const BLOCK_HALF_HEIGHT: f64 = 0.025;
pub const BLOCK_SPAWN_X: (f64, f64) = (1.15, 1.45);
pub const BLOCK_SPAWN_Y: (f64, f64) = (0.55, 0.95);
pub const TARGET_SPAWN_Z: (f64, f64) = (0.45, 0.70);
pub const MIN_TARGET_DISTANCE: f64 = 0.05;
pub const HOME_POS: Vec3 = [1.30, 0.75, 0.60];

pub const MAX_DPOS: f64 = 0.03;
pub const MAX_DYAW: f64 = 0.1;
pub const MAX_DAPERTURE: f64 = 0.02;
pub const APERTURE_OPEN: f64 = 0.1;
pub const ATTACH_APERTURE: f64 = 0.03;
pub const RELEASE_APERTURE: f64 = 0.05;
pub const YAW_TOLERANCE: f64 = 0.1;

/// Gripper-block distance below which a grasp can close on the block.
pub const GRASP_THRESHOLD: f64 = 0.005;
/// Distance threshold for approach and retract completion.
pub const PHASE_THRESHOLD: f64 = 0.01;
/// Height of the pre-grasp hover point above the block centre.
pub const HOVER_HEIGHT: f64 = 0.05;

pub const SEGMENT_STEPS: usize = 50;
pub const EPISODE_STEPS: usize = 150;

pub const OBS_DIM: usize = 28;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2pi for tiny negative inputs.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn norm3(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist3(a: Vec3, b: Vec3) -> f64 {
    norm3(sub3(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldState {
    pub gripper_pos: Vec3,
    pub gripper_yaw: f64,
    pub gripper_aperture: f64,
    pub block_pos: Vec3,
    pub block_yaw: f64,
    pub target_pos: Vec3,
    pub attached: bool,
    pub step_count: u32,
}

impl WorldState {
    /// Fresh episode: block and target randomised from `seed`, gripper at home, open.
    pub fn reset(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block_pos = [
            rng.gen_range(BLOCK_SPAWN_X.0..BLOCK_SPAWN_X.1),
            rng.gen_range(BLOCK_SPAWN_Y.0..BLOCK_SPAWN_Y.1),
            TABLE_Z + BLOCK_HALF_HEIGHT,
        ];
        let block_yaw = rng.gen_range(-PI / 2.0..PI / 2.0);
        let target_pos = loop {
            let t = [
                rng.gen_range(BLOCK_SPAWN_X.0..BLOCK_SPAWN_X.1),
                rng.gen_range(BLOCK_SPAWN_Y.0..BLOCK_SPAWN_Y.1),
                rng.gen_range(TARGET_SPAWN_Z.0..TARGET_SPAWN_Z.1),
            ];
            if dist3(t, block_pos) >= MIN_TARGET_DISTANCE {
                break t;
            }
        };
        Self {
            gripper_pos: HOME_POS,
            gripper_yaw: 0.0,
            gripper_aperture: APERTURE_OPEN,
            block_pos,
            block_yaw,
            target_pos,
            attached: false,
            step_count: 0,
        }
    }

    /// Pre-grasp point directly above the block.
    pub fn hover_point(&self) -> Vec3 {
        add3(self.block_pos, [0.0, 0.0, HOVER_HEIGHT])
    }

    pub fn gripper_block_distance(&self) -> f64 {
        dist3(self.gripper_pos, self.block_pos)
    }

    pub fn block_target_distance(&self) -> f64 {
        dist3(self.target_pos, self.block_pos)
    }

    /// Wrapped `block_yaw - gripper_yaw`.
    pub fn yaw_error(&self) -> f64 {
        wrap_angle(self.block_yaw - self.gripper_yaw)
    }

    pub fn yaw_aligned(&self) -> bool {
        self.yaw_error().abs() < YAW_TOLERANCE
    }

    /// Close enough and aligned for a closing gripper to take hold of the block.
    pub fn in_grasp_zone(&self) -> bool {
        self.gripper_block_distance() < GRASP_THRESHOLD && self.yaw_aligned()
    }

    pub fn step(&self, action: &Action) -> Result<WorldState> {
        let a = action.clamped()?;
        let mut next = *self;

        let mut moved = [0.0; 3];
        for i in 0..3 {
            let p = (self.gripper_pos[i] + a.dpos[i]).clamp(WORKSPACE_MIN[i], WORKSPACE_MAX[i]);
            moved[i] = p - self.gripper_pos[i];
            next.gripper_pos[i] = p;
        }
        next.gripper_yaw = wrap_angle(self.gripper_yaw + a.dyaw);
        next.gripper_aperture = (self.gripper_aperture + a.daperture).clamp(0.0, APERTURE_OPEN);

        if self.attached {
            next.block_pos = add3(self.block_pos, moved);
            next.block_yaw = wrap_angle(self.block_yaw + a.dyaw);
            if next.gripper_aperture > RELEASE_APERTURE {
                next.attached = false;
            }
        } else if next.gripper_aperture <= ATTACH_APERTURE && next.in_grasp_zone() {
            next.attached = true;
        }
        next.step_count = self.step_count + 1;
        Ok(next)
    }

    pub fn approach_done(&self) -> bool {
        dist3(self.gripper_pos, self.hover_point()) < PHASE_THRESHOLD
    }

    pub fn grasp_done(&self) -> bool {
        self.attached && self.gripper_block_distance() < GRASP_THRESHOLD
    }

    pub fn retract_done(&self) -> bool {
        self.attached && self.block_target_distance() < PHASE_THRESHOLD
    }

    pub fn task_success(&self) -> bool {
        self.retract_done()
    }

    pub fn observe(&self, prev: &WorldState) -> Observation {
        Observation::new(self, prev)
    }
}

/// Per-step command. Components are clamped to their limits by [`WorldState::step`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Action {
    pub dpos: Vec3,
    pub dyaw: f64,
    pub daperture: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        dpos: [0.0; 3],
        dyaw: 0.0,
        daperture: 0.0,
    };

    pub fn new(dpos: Vec3, dyaw: f64, daperture: f64) -> Self {
        Self {
            dpos,
            dyaw,
            daperture,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dpos.iter().all(|x| x.is_finite()) && self.dyaw.is_finite() && self.daperture.is_finite()
    }

    pub fn clamped(&self) -> Result<Action> {
        if !self.is_finite() {
            return Err(Error::InvalidAction(format!("{self:?}")));
        }
        Ok(Action {
            dpos: self.dpos.map(|d| d.clamp(-MAX_DPOS, MAX_DPOS)),
            dyaw: self.dyaw.clamp(-MAX_DYAW, MAX_DYAW),
            daperture: self.daperture.clamp(-MAX_DAPERTURE, MAX_DAPERTURE),
        })
    }
}

/// The 28-entry state vector seen by every network.
///
/// | index  | content                                          |
/// |--------|--------------------------------------------------|
/// | 0..3   | gripper position                                 |
/// | 3..6   | block position                                   |
/// | 6..9   | block position - gripper position                |
/// | 9..11  | finger state, aperture / 2 (twice)               |
/// | 11..14 | sin(block yaw), cos(block yaw), wrapped yaw error|
/// | 14..17 | block linear velocity                            |
/// | 17..20 | block angular velocity (yaw rate on z)           |
/// | 20..23 | gripper linear velocity                          |
/// | 23..25 | finger velocity (twice)                          |
/// | 25..28 | target position                                  |
///
/// Velocities are per-step differences against the previous state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn new(state: &WorldState, prev: &WorldState) -> Self {
        let mut o = [0.0; OBS_DIM];
        o[0..3].copy_from_slice(&state.gripper_pos);
        o[3..6].copy_from_slice(&state.block_pos);
        o[6..9].copy_from_slice(&sub3(state.block_pos, state.gripper_pos));
        let finger = state.gripper_aperture / 2.0;
        o[9] = finger;
        o[10] = finger;
        o[11] = state.block_yaw.sin();
        o[12] = state.block_yaw.cos();
        o[13] = wrap_angle(state.block_yaw - state.gripper_yaw);
        o[14..17].copy_from_slice(&sub3(state.block_pos, prev.block_pos));
        o[19] = wrap_angle(state.block_yaw - prev.block_yaw);
        o[20..23].copy_from_slice(&sub3(state.gripper_pos, prev.gripper_pos));
        let finger_vel = (state.gripper_aperture - prev.gripper_aperture) / 2.0;
        o[23] = finger_vel;
        o[24] = finger_vel;
        o[25..28].copy_from_slice(&state.target_pos);
        Observation(o)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Fixed affine rescaling fed to the networks. Absolute positions map the
    /// workspace box to [-1, 1]; the block offset is in units of the 0.01 m
    /// success tolerance; velocities are per clamp limit; angles stay in radians.
    pub fn scaled(&self) -> [f64; OBS_DIM] {
        let o = &self.0;
        let mut s = [0.0; OBS_DIM];
        for i in 0..3 {
            let centre = 0.5 * (WORKSPACE_MIN[i] + WORKSPACE_MAX[i]);
            let half = 0.5 * (WORKSPACE_MAX[i] - WORKSPACE_MIN[i]);
            s[i] = (o[i] - centre) / half;
            s[3 + i] = (o[3 + i] - centre) / half;
            s[25 + i] = (o[25 + i] - centre) / half;
            s[6 + i] = o[6 + i] / OFFSET_SCALE;
            s[14 + i] = o[14 + i] / MAX_DPOS;
            s[20 + i] = o[20 + i] / MAX_DPOS;
        }
        s[9] = o[9] / (0.5 * APERTURE_OPEN);
        s[10] = o[10] / (0.5 * APERTURE_OPEN);
        s[11..14].copy_from_slice(&o[11..14]);
        s[17] = o[17] / MAX_DYAW;
        s[18] = o[18] / MAX_DYAW;
        s[19] = o[19] / MAX_DYAW;
        s[23] = o[23] / (0.5 * MAX_DAPERTURE);
        s[24] = o[24] / (0.5 * MAX_DAPERTURE);
        s
    }
}

const OFFSET_SCALE: f64 = 0.01;

/// One of the three reactive behaviours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Behaviour {
    Approach,
    Grasp,
    Retract,
}

impl Behaviour {
    pub const ALL: [Behaviour; 3] = [Behaviour::Approach, Behaviour::Grasp, Behaviour::Retract];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Behaviour> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Behaviour::Approach => "a",
            Behaviour::Grasp => "b",
            Behaviour::Retract => "c",
        }
    }

    /// Whether this behaviour's completion predicate holds.
    pub fn done(self, state: &WorldState) -> bool {
        match self {
            Behaviour::Approach => state.approach_done(),
            Behaviour::Grasp => state.grasp_done(),
            Behaviour::Retract => state.retract_done(),
        }
    }
}

/// Progress through the task, advanced by the phase predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Approach,
    Grasp,
    Retract,
    Done,
}

impl Phase {
    /// The behaviour that should be active in this phase.
    pub fn behaviour(self) -> Option<Behaviour> {
        match self {
            Phase::Approach => Some(Behaviour::Approach),
            Phase::Grasp => Some(Behaviour::Grasp),
            Phase::Retract => Some(Behaviour::Retract),
            Phase::Done => None,
        }
    }

    /// Advances past every phase whose predicate already holds.
    ///
    /// Task success ends the episode from any phase.
    pub fn advance(self, state: &WorldState) -> Phase {
        if state.task_success() {
            return Phase::Done;
        }
        let mut phase = self;
        while let Some(b) = phase.behaviour() {
            if !b.done(state) {
                break;
            }
            phase = phase.next();
        }
        phase
    }

    /// The phase that follows this one.
    pub fn next(self) -> Phase {
        match self {
            Phase::Approach => Phase::Grasp,
            Phase::Grasp => Phase::Retract,
            Phase::Retract | Phase::Done => Phase::Done,
        }
    }
}

impl From<Behaviour> for Phase {
    fn from(b: Behaviour) -> Phase {
        match b {
            Behaviour::Approach => Phase::Approach,
            Behaviour::Grasp => Phase::Grasp,
            Behaviour::Retract => Phase::Retract,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn aligned_state() -> WorldState {
        let mut s = WorldState::reset(3);
        s.gripper_yaw = s.block_yaw;
        s
    }

    #[test]
    fn reset_is_deterministic() {
        assert_eq!(WorldState::reset(7), WorldState::reset(7));
    }

    #[test]
    fn different_seeds_move_the_block() {
        assert_ne!(WorldState::reset(7).block_pos, WorldState::reset(8).block_pos);
    }

    #[test]
    fn reset_contract() {
        for seed in 0..500 {
            let s = WorldState::reset(seed);
            assert!(!s.attached);
            assert_eq!(s.step_count, 0);
            assert_eq!(s.gripper_aperture, APERTURE_OPEN);
            assert_eq!(s.gripper_pos, HOME_POS);
            assert!((-PI / 2.0..PI / 2.0).contains(&s.block_yaw));
            assert!((BLOCK_SPAWN_X.0..BLOCK_SPAWN_X.1).contains(&s.block_pos[0]));
            assert!((BLOCK_SPAWN_Y.0..BLOCK_SPAWN_Y.1).contains(&s.block_pos[1]));
            assert!((TARGET_SPAWN_Z.0..TARGET_SPAWN_Z.1).contains(&s.target_pos[2]));
            assert!(s.block_target_distance() >= MIN_TARGET_DISTANCE);
            assert!(!s.task_success());
        }
    }

    #[test]
    fn large_move_is_clamped() {
        let s = WorldState::reset(1);
        let n = s.step(&Action::new([1.0, 0.0, 0.0], 0.0, 0.0)).unwrap();
        assert!((n.gripper_pos[0] - s.gripper_pos[0] - 0.03).abs() < 1e-15);
        assert_eq!(n.gripper_pos[1], s.gripper_pos[1]);
        assert_eq!(n.step_count, 1);
    }

    #[test]
    fn workspace_box_holds_the_gripper() {
        let mut s = WorldState::reset(1);
        for _ in 0..100 {
            s = s.step(&Action::new([-1.0, 1.0, -1.0], 0.0, 0.0)).unwrap();
        }
        assert_eq!(s.gripper_pos, [WORKSPACE_MIN[0], WORKSPACE_MAX[1], WORKSPACE_MIN[2]]);
    }

    #[test]
    fn non_finite_action_rejected() {
        let s = WorldState::reset(1);
        assert!(matches!(
            s.step(&Action::new([f64::NAN, 0.0, 0.0], 0.0, 0.0)),
            Err(Error::InvalidAction(_))
        ));
        assert!(s.step(&Action::new([0.0; 3], f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn attached_block_follows_gripper() {
        let mut s = aligned_state();
        s.gripper_pos = s.block_pos;
        s.gripper_aperture = 0.02;
        s.attached = true;
        let n = s.step(&Action::new([0.01, 0.0, 0.0], 0.0, 0.0)).unwrap();
        assert!((n.block_pos[0] - s.block_pos[0] - 0.01).abs() < 1e-15);
        assert!((n.gripper_pos[0] - s.gripper_pos[0] - 0.01).abs() < 1e-15);
        assert!(n.attached);
    }

    #[test]
    fn closing_near_aligned_block_attaches() {
        // Aperture closes by at most 0.02 per step: 0.1 -> 0.08 -> 0.06 -> 0.04 -> 0.02,
        // so the attach rule (aperture <= 0.03) first holds after the fourth step.
        let mut s = aligned_state();
        s.gripper_pos = add3(s.block_pos, [0.004, 0.0, 0.0]);
        let close = Action::new([0.0; 3], 0.0, -0.08);
        let mut attached_at = None;
        for k in 1..=5 {
            s = s.step(&close).unwrap();
            if s.attached && attached_at.is_none() {
                attached_at = Some(k);
            }
        }
        assert_eq!(attached_at, Some(4));
        assert!(s.grasp_done());
    }

    #[test]
    fn misaligned_yaw_prevents_attachment() {
        let mut s = aligned_state();
        s.gripper_pos = s.block_pos;
        s.gripper_yaw = wrap_angle(s.block_yaw + 0.2);
        for _ in 0..6 {
            s = s.step(&Action::new([0.0; 3], 0.0, -0.02)).unwrap();
        }
        assert!(!s.attached);
    }

    #[test]
    fn opening_releases_the_block() {
        let mut s = aligned_state();
        s.gripper_pos = s.block_pos;
        s.gripper_aperture = 0.02;
        s.attached = true;
        let open = Action::new([0.0; 3], 0.0, 0.02);
        s = s.step(&open).unwrap();
        assert!(s.attached, "aperture 0.04 still holds the block");
        s = s.step(&open).unwrap();
        assert!(!s.attached, "aperture 0.06 releases it");
    }

    #[test]
    fn observation_layout() {
        let s = WorldState::reset(5);
        let o = s.observe(&s);
        assert_eq!(o.0.len(), OBS_DIM);
        for i in 14..25 {
            assert_eq!(o.0[i], 0.0, "velocity entry {i}");
        }
        let rel = sub3(s.block_pos, s.gripper_pos);
        assert_eq!(&o.0[6..9], &rel);
        assert_eq!(&o.0[25..28], &s.target_pos);
    }

    #[test]
    fn observation_velocities_are_differences() {
        let s = WorldState::reset(5);
        let n = s.step(&Action::new([0.01, -0.02, 0.005], 0.05, -0.01)).unwrap();
        let o = n.observe(&s);
        for i in 0..3 {
            assert_eq!(o.0[20 + i], n.gripper_pos[i] - s.gripper_pos[i]);
            assert_eq!(o.0[14 + i], 0.0);
        }
        assert_eq!(o.0[23], (n.gripper_aperture - s.gripper_aperture) / 2.0);
    }

    #[test]
    fn phase_thresholds() {
        let mut s = aligned_state();
        s.gripper_pos = s.block_pos;
        s.attached = true;
        assert!(s.grasp_done());
        s.gripper_pos = add3(s.hover_point(), [0.02, 0.0, 0.0]);
        assert!(!s.approach_done());
        s.gripper_pos = add3(s.hover_point(), [0.009, 0.0, 0.0]);
        assert!(s.approach_done());
        s.block_pos = add3(s.target_pos, [0.0, 0.009, 0.0]);
        assert!(s.retract_done());
        assert!(s.task_success());
        s.attached = false;
        assert!(!s.task_success(), "unattached block at target is not a success");
    }

    #[test]
    fn phase_advances_in_order() {
        let mut s = aligned_state();
        assert_eq!(Phase::Approach.advance(&s), Phase::Approach);
        s.gripper_pos = s.hover_point();
        assert_eq!(Phase::Approach.advance(&s), Phase::Grasp);
        s.gripper_pos = s.block_pos;
        s.attached = true;
        assert_eq!(Phase::Grasp.advance(&s), Phase::Retract);
        s.block_pos = s.target_pos;
        s.gripper_pos = s.target_pos;
        assert_eq!(Phase::Retract.advance(&s), Phase::Done);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, -1e-18, 0.0, PI, 3.0 * PI, 7.5] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "{a} -> {w}");
            let turns = (w - a) / (2.0 * PI);
            assert!((turns - turns.round()).abs() < 1e-12);
        }
    }

    fn arb_action() -> impl Strategy<Value = Action> {
        (
            proptest::array::uniform3(-0.2f64..0.2),
            -0.5f64..0.5,
            -0.1f64..0.1,
        )
            .prop_map(|(dpos, dyaw, dap)| Action::new(dpos, dyaw, dap))
    }

    proptest! {
        #[test]
        fn steps_respect_invariants(seed in 0u64..1000, actions in proptest::collection::vec(arb_action(), 1..60)) {
            let mut s = WorldState::reset(seed);
            for a in &actions {
                let n = s.step(a).unwrap();
                prop_assert!(dist3(n.gripper_pos, s.gripper_pos) <= MAX_DPOS * 3f64.sqrt() + 1e-12);
                for i in 0..3 {
                    prop_assert!(n.gripper_pos[i] >= WORKSPACE_MIN[i] && n.gripper_pos[i] <= WORKSPACE_MAX[i]);
                }
                prop_assert!((0.0..=APERTURE_OPEN).contains(&n.gripper_aperture));
                if s.attached && n.attached {
                    let before = sub3(s.block_pos, s.gripper_pos);
                    let after = sub3(n.block_pos, n.gripper_pos);
                    prop_assert!(dist3(before, after) < 1e-12);
                    let dy = wrap_angle((n.block_yaw - n.gripper_yaw) - (s.block_yaw - s.gripper_yaw));
                    prop_assert!(dy.abs() < 1e-12);
                }
                if n.attached && !s.attached {
                    prop_assert!(n.gripper_block_distance() < GRASP_THRESHOLD);
                }
                s = n;
            }
        }

        #[test]
        fn trajectories_are_deterministic(seed in 0u64..1000, actions in proptest::collection::vec(arb_action(), 1..30)) {
            let run = || {
                let mut s = WorldState::reset(seed);
                let mut out = vec![s];
                for a in &actions {
                    s = s.step(a).unwrap();
                    out.push(s);
                }
                out
            };
            prop_assert_eq!(run(), run());
        }
    }
}
