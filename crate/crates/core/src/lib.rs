//! Behaviour-based reinforcement learning for a desk-scale pick-and-place
//! task.
//!
//! Three reactive behaviours (approach, grasp, retract) share one feature
//! extractor and are trained by behaviour cloning from scripted experts
//! under five training strategies. An LSTM actor-critic "choreographer"
//! then learns which behaviour to activate at every step.

pub mod behaviours;
pub mod choreographer;
pub mod curve;
pub mod error;
pub mod experts;
pub mod harness;
pub mod nn;
pub mod world;

pub use error::{Error, Result};
pub use world::{Action, Behaviour, Observation, Phase, WorldState};
