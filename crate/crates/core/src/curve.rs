//! Learning-curve bookkeeping shared by the trainers and the harness.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Default trailing window for success rates.
pub const DEFAULT_WINDOW: usize = 100;

/// Which stage of a run an episode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseLabel {
    A,
    B,
    C,
    D,
    Choreographer,
}

impl PhaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::A => "a",
            PhaseLabel::B => "b",
            PhaseLabel::C => "c",
            PhaseLabel::D => "d",
            PhaseLabel::Choreographer => "choreographer",
        }
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "a" => PhaseLabel::A,
            "b" => PhaseLabel::B,
            "c" => PhaseLabel::C,
            "d" => PhaseLabel::D,
            "choreographer" => PhaseLabel::Choreographer,
            other => return Err(Error::Config(format!("unknown phase label `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub window_success: f64,
    pub phase: PhaseLabel,
}

/// Success rate over the trailing `size` episodes.
///
/// The denominator is always `size`: until the window has filled, the
/// missing episodes count as failures, so a rate of `r` certifies at least
/// `r * size` successes.
#[derive(Debug, Clone)]
pub struct SuccessWindow {
    size: usize,
    recent: VecDeque<bool>,
    successes: usize,
}

impl SuccessWindow {
    pub fn new(size: usize) -> Self {
        assert!(size > 0, "window size must be positive");
        Self {
            size,
            recent: VecDeque::with_capacity(size),
            successes: 0,
        }
    }

    pub fn push(&mut self, success: bool) -> f64 {
        if self.recent.len() == self.size && self.recent.pop_front() == Some(true) {
            self.successes -= 1;
        }
        self.recent.push_back(success);
        if success {
            self.successes += 1;
        }
        self.rate()
    }

    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.size as f64
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// First episode index whose window success reaches `threshold`.
pub fn episodes_to_threshold(curve: &[CurvePoint], threshold: f64) -> Option<usize> {
    curve
        .iter()
        .find(|p| p.window_success >= threshold)
        .map(|p| p.episode)
}
