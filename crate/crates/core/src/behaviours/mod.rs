//! Behaviour networks, behaviour cloning and the training strategies.

mod net;
mod strategy;
mod training;

pub use net::*;
pub use strategy::*;
pub use training::*;
