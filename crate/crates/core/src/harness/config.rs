use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::behaviours::{BcConfig, Strategy, StrategyConfig};
use crate::choreographer::{A2cConfig, ChoreographerConfig, RewardMode};
use crate::curve::DEFAULT_WINDOW;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    StrategyCompare,
    Choreographer,
    ExpertCheck,
    OracleSuite,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::StrategyCompare => "strategy_compare",
            ExperimentKind::Choreographer => "choreographer",
            ExperimentKind::ExpertCheck => "expert_check",
            ExperimentKind::OracleSuite => "oracle_suite",
        }
    }
}

/// Hyperparameters exposed for override; unset keys keep their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub bc_lr: f64,
    pub choreographer_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub rollout_steps: usize,
    pub window: usize,
    pub patience: usize,
    pub kp_pos: f64,
    pub kp_yaw: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let bc = BcConfig::default();
        let a2c = A2cConfig::default();
        let choreo = ChoreographerConfig::default();
        Self {
            bc_lr: bc.lr,
            choreographer_lr: a2c.lr,
            gamma: a2c.gamma,
            lambda: a2c.lambda,
            entropy_coef: a2c.entropy_coef,
            value_coef: a2c.value_coef,
            rollout_steps: choreo.rollout_steps,
            window: DEFAULT_WINDOW,
            patience: bc.patience,
            kp_pos: bc.gains.kp_pos,
            kp_yaw: bc.gains.kp_yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: ExperimentKind,
    #[serde(default)]
    strategies: Option<Vec<String>>,
    #[serde(default)]
    reward_modes: Option<Vec<String>>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_strategy_budget")]
    episode_budget: usize,
    #[serde(default = "default_choreographer_budget")]
    choreographer_budget: usize,
    #[serde(default = "default_expert_episodes")]
    expert_episodes: u64,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default = "default_choreographer_threshold")]
    choreographer_threshold: f64,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    #[serde(default)]
    hyper: Hyperparameters,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_strategy_budget() -> usize {
    20_000
}
fn default_choreographer_budget() -> usize {
    4_000
}
fn default_expert_episodes() -> u64 {
    10_000
}
fn default_threshold() -> f64 {
    0.9
}
fn default_choreographer_threshold() -> f64 {
    0.95
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub strategies: Vec<Strategy>,
    pub reward_modes: Vec<RewardMode>,
    pub seeds: Vec<u64>,
    /// Behaviour-training budget per run, also used to pretrain the
    /// choreographer's behaviours.
    pub episode_budget: usize,
    pub choreographer_budget: usize,
    pub expert_episodes: u64,
    pub threshold: f64,
    pub choreographer_threshold: f64,
    pub out_dir: PathBuf,
    pub hyper: Hyperparameters,
}

impl ExperimentConfig {
    /// Defaults for `kind` with every strategy and both reward modes.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            strategies: Strategy::ALL.to_vec(),
            reward_modes: RewardMode::ALL.to_vec(),
            seeds: default_seeds(),
            episode_budget: default_strategy_budget(),
            choreographer_budget: default_choreographer_budget(),
            expert_episodes: default_expert_episodes(),
            threshold: default_threshold(),
            choreographer_threshold: default_choreographer_threshold(),
            out_dir: default_out_dir(),
            hyper: Hyperparameters::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let strategies = match raw.strategies {
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>>>()?,
            None => Strategy::ALL.to_vec(),
        };
        let reward_modes = match raw.reward_modes {
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<RewardMode>>>()?,
            None => RewardMode::ALL.to_vec(),
        };
        let cfg = Self {
            kind: raw.kind,
            strategies,
            reward_modes,
            seeds: raw.seeds,
            episode_budget: raw.episode_budget,
            choreographer_budget: raw.choreographer_budget,
            expert_episodes: raw.expert_episodes,
            threshold: raw.threshold,
            choreographer_threshold: raw.choreographer_threshold,
            out_dir: raw.out_dir,
            hyper: raw.hyper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("seed {dup} appears more than once"));
        }
        if self.episode_budget == 0 || self.choreographer_budget == 0 || self.expert_episodes == 0 {
            return bad("budgets must be positive".into());
        }
        if self.strategies.is_empty() {
            return bad("strategy list must not be empty".into());
        }
        if self.reward_modes.is_empty() {
            return bad("reward mode list must not be empty".into());
        }
        for (name, t) in [
            ("threshold", self.threshold),
            ("choreographer_threshold", self.choreographer_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {t}"));
            }
        }
        let h = &self.hyper;
        if !(h.bc_lr > 0.0 && h.choreographer_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !((0.0..=1.0).contains(&h.gamma) && (0.0..=1.0).contains(&h.lambda)) {
            return bad("gamma and lambda must lie in [0, 1]".into());
        }
        if h.window == 0 || h.patience == 0 || h.rollout_steps == 0 {
            return bad("window, patience and rollout_steps must be positive".into());
        }
        if !(h.entropy_coef >= 0.0 && h.value_coef >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        crate::experts::ExpertGains::new(h.kp_pos, h.kp_yaw)?;
        Ok(())
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        let h = &self.hyper;
        StrategyConfig {
            bc: BcConfig {
                lr: h.bc_lr,
                window: h.window,
                patience: h.patience,
                gains: crate::experts::ExpertGains {
                    kp_pos: h.kp_pos,
                    kp_yaw: h.kp_yaw,
                },
            },
            threshold: self.threshold,
            eval_episodes: h.window,
        }
    }

    pub fn choreographer_config(&self) -> ChoreographerConfig {
        let h = &self.hyper;
        ChoreographerConfig {
            a2c: A2cConfig {
                lr: h.choreographer_lr,
                gamma: h.gamma,
                lambda: h.lambda,
                entropy_coef: h.entropy_coef,
                value_coef: h.value_coef,
            },
            window: h.window,
            rollout_steps: h.rollout_steps,
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_toml(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_toml("kind = \"strategy_compare\"").unwrap();
        assert_eq!(c.strategies.len(), 5);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.hyper, Hyperparameters::default());
    }

    #[test]
    fn overrides_and_lists_parse() {
        let c = ExperimentConfig::from_toml(
            r#"
            kind = "choreographer"
            strategies = ["Separate + Freezing", "end_to_end"]
            reward_modes = ["sparse"]
            seeds = [4, 9]
            out_dir = "/tmp/x"
            [hyper]
            gamma = 0.9
            window = 20
            "#,
        )
        .unwrap();
        assert_eq!(c.strategies, vec![Strategy::SeparateFreezing, Strategy::EndToEnd]);
        assert_eq!(c.reward_modes, vec![RewardMode::Sparse]);
        assert_eq!(c.hyper.gamma, 0.9);
        assert_eq!(c.choreographer_config().window, 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "kind = \"strategy_compare\"\nseeds = []",
            "kind = \"strategy_compare\"\nseeds = [1, 1]",
            "kind = \"strategy_compare\"\nepisode_budget = 0",
            "kind = \"strategy_compare\"\nstrategies = [\"bogus\"]",
            "kind = \"nonsense\"",
            "kind = \"strategy_compare\"\nunknown_key = 3",
            "kind = \"strategy_compare\"\n[hyper]\ngamma = 1.5",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
