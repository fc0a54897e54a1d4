//! Actor-critic choreographer that picks the active behaviour every step.

mod net;
mod returns;
mod training;

pub use net::*;
pub use returns::*;
pub use training::*;

#[cfg(test)]
mod tests;
