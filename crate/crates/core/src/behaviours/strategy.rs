use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::BehaviourNet;
use super::net::HeadKind;
use super::training::{
    end_to_end_episode, run_combined_episode, train_behaviour_into, BcConfig, ControllerSource, EpisodeRecord,
    Progress, Scaffold, TrainingLog,
};
use crate::curve::{episodes_to_threshold, CurvePoint, PhaseLabel, SuccessWindow, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::world::Behaviour;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Sequential,
    SequentialFreezing,
    Separate,
    SeparateFreezing,
    EndToEnd,
}

impl Strategy {
    /// In table order; ties in rankings go to the earlier entry.
    pub const ALL: [Strategy; 5] = [
        Strategy::Sequential,
        Strategy::SequentialFreezing,
        Strategy::Separate,
        Strategy::SeparateFreezing,
        Strategy::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sequential => "Sequential",
            Strategy::SequentialFreezing => "Sequential + Freezing",
            Strategy::Separate => "Separate",
            Strategy::SeparateFreezing => "Separate + Freezing",
            Strategy::EndToEnd => "End-to-end",
        }
    }

    /// Identifier used in file names and on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            Strategy::Sequential => "sequential",
            Strategy::SequentialFreezing => "sequential_freezing",
            Strategy::Separate => "separate",
            Strategy::SeparateFreezing => "separate_freezing",
            Strategy::EndToEnd => "end_to_end",
        }
    }

    pub fn table_index(self) -> usize {
        Strategy::ALL.iter().position(|s| *s == self).unwrap_or(usize::MAX)
    }

    pub fn plan(self) -> StrategyPlan {
        StrategyPlan::new(self)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' ', '+'], "_");
        let key: String = key.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.slug() == key)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Schedule of a strategy: scaffold per trained behaviour and when the
/// feature extractor is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyPlan {
    pub strategy: Strategy,
    /// Scaffold used while training each behaviour, indexed by behaviour.
    pub scaffolds: [Scaffold; 3],
    pub freeze_after: Option<Behaviour>,
}

impl StrategyPlan {
    pub fn new(strategy: Strategy) -> Self {
        use ControllerSource::{Expert, Network};
        let scaffolds = match strategy {
            Strategy::Sequential | Strategy::SequentialFreezing => [
                Scaffold([Expert, Expert, Expert]),
                Scaffold([Network, Expert, Expert]),
                Scaffold([Network, Network, Expert]),
            ],
            _ => [Scaffold::EXPERTS; 3],
        };
        let freeze_after = match strategy {
            Strategy::SequentialFreezing | Strategy::SeparateFreezing => Some(Behaviour::Approach),
            _ => None,
        };
        Self {
            strategy,
            scaffolds,
            freeze_after,
        }
    }

    pub fn scaffold(&self, b: Behaviour) -> Scaffold {
        self.scaffolds[b.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub bc: BcConfig,
    /// Combined-task success rate that counts as solved.
    pub threshold: f64,
    /// Evaluation episodes per manual-combination phase.
    pub eval_episodes: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            bc: BcConfig::default(),
            threshold: 0.9,
            eval_episodes: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseRecord {
    pub round: usize,
    pub label: PhaseLabel,
    /// Global index of the phase's first episode.
    pub first_episode: usize,
    pub log: TrainingLog,
    /// Feature-extractor hash at the end of the phase.
    pub feature_hash: String,
}

#[derive(Debug, Clone)]
pub struct StrategyLog {
    pub strategy: Strategy,
    pub curve: Vec<CurvePoint>,
    pub phases: Vec<PhaseRecord>,
    /// Global episode at which the full-task window first reached the threshold.
    pub episodes_to_threshold: Option<usize>,
    pub completed: bool,
    pub episodes_used: usize,
    pub net: BehaviourNet,
}

impl StrategyLog {
    /// Hash after the first phase carrying `label`.
    pub fn feature_hash_after(&self, label: PhaseLabel) -> Option<&str> {
        self.phases
            .iter()
            .find(|p| p.label == label)
            .map(|p| p.feature_hash.as_str())
    }
}

fn phase_label(b: Behaviour) -> PhaseLabel {
    match b {
        Behaviour::Approach => PhaseLabel::A,
        Behaviour::Grasp => PhaseLabel::B,
        Behaviour::Retract => PhaseLabel::C,
    }
}

/// Runs a strategy from a fresh network until the full task is solved or
/// `budget` episodes (training and evaluation alike) are spent.
///
/// Decomposed strategies repeat rounds of (a), (b), (c) followed by a
/// manual-combination phase (d) of evaluation episodes with mean actions.
/// The end-to-end baseline trains a single network on the whole task.
pub fn run_strategy(plan: &StrategyPlan, budget: usize, cfg: &StrategyConfig, seed: u64) -> Result<StrategyLog> {
    match run_strategy_partial(plan, budget, cfg, seed)? {
        (log, None) => Ok(log),
        (_, Some(e)) => Err(e),
    }
}

/// As [`run_strategy`], but a training error is returned next to the log
/// gathered up to that point instead of discarding it.
pub fn run_strategy_partial(
    plan: &StrategyPlan,
    budget: usize,
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<(StrategyLog, Option<Error>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_seed = rng.gen();
    let net = if plan.strategy == Strategy::EndToEnd {
        BehaviourNet::end_to_end(init_seed)?
    } else {
        BehaviourNet::new(init_seed)?
    };
    let mut log = StrategyLog {
        strategy: plan.strategy,
        curve: Vec::new(),
        phases: Vec::new(),
        episodes_to_threshold: None,
        completed: false,
        episodes_used: 0,
        net,
    };
    let outcome = if plan.strategy == Strategy::EndToEnd {
        run_end_to_end(&mut log, budget, cfg, &mut rng)
    } else {
        run_rounds(&mut log, plan, budget, cfg, &mut rng)
    };
    Ok((log, outcome.err()))
}

fn run_rounds<R: Rng + ?Sized>(
    log: &mut StrategyLog,
    plan: &StrategyPlan,
    budget: usize,
    cfg: &StrategyConfig,
    rng: &mut R,
) -> Result<()> {
    let mut round = 0;
    while log.episodes_used < budget {
        for b in Behaviour::ALL {
            let remaining = budget - log.episodes_used;
            if remaining == 0 {
                return Ok(());
            }
            let mut tl = TrainingLog {
                behaviour: Some(b),
                episodes: Vec::new(),
                converged: false,
            };
            let outcome = train_behaviour_into(&mut log.net, b, &plan.scaffold(b), remaining, &cfg.bc, rng, &mut tl);
            let label = phase_label(b);
            let first = log.episodes_used;
            log.curve.extend(tl.curve(first, label));
            log.episodes_used += tl.episodes.len();
            outcome?;
            if plan.freeze_after == Some(b) && round == 0 {
                log.net.freeze_features()?;
            }
            log.phases.push(PhaseRecord {
                round,
                label,
                first_episode: first,
                log: tl,
                feature_hash: log.net.feature_hash(),
            });
        }
        if combination_phase(log, budget, cfg, rng, round)? {
            return Ok(());
        }
        round += 1;
    }
    Ok(())
}

/// Manual-combination evaluation. Returns true once the threshold is met.
fn combination_phase<R: Rng + ?Sized>(
    log: &mut StrategyLog,
    budget: usize,
    cfg: &StrategyConfig,
    rng: &mut R,
    round: usize,
) -> Result<bool> {
    let first = log.episodes_used;
    let mut window = SuccessWindow::new(cfg.eval_episodes.max(1));
    let mut episodes = Vec::new();
    let net = &log.net;
    for _ in 0..cfg.eval_episodes {
        if log.episodes_used >= budget {
            break;
        }
        let seed = rng.gen();
        let success = run_combined_episode(seed, |b, s, p| {
            let kind = HeadKind::from(b);
            let out = net.act(kind, s.observe(p).as_slice(), None)?;
            Ok(HeadKind::denormalize(kind, &out, s))
        })?;
        let rate = window.push(success);
        log.curve.push(CurvePoint {
            episode: log.episodes_used,
            window_success: rate,
            phase: PhaseLabel::D,
        });
        episodes.push(EpisodeRecord {
            success,
            window_success: rate,
            updates: 0,
            mean_loss: 0.0,
            drivers: [Some(ControllerSource::Network); 3],
        });
        log.episodes_used += 1;
        if rate >= cfg.threshold {
            log.episodes_to_threshold = Some(log.episodes_used - 1);
            log.completed = true;
            break;
        }
    }
    log.phases.push(PhaseRecord {
        round,
        label: PhaseLabel::D,
        first_episode: first,
        log: TrainingLog {
            behaviour: None,
            episodes,
            converged: log.completed,
        },
        feature_hash: log.net.feature_hash(),
    });
    Ok(log.completed)
}

fn run_end_to_end<R: Rng + ?Sized>(
    log: &mut StrategyLog,
    budget: usize,
    cfg: &StrategyConfig,
    rng: &mut R,
) -> Result<()> {
    let mut progress = Progress::new(cfg.bc.window, cfg.bc.patience);
    let mut episodes = Vec::new();
    let mut outcome = Ok(());
    for episode in 0..budget {
        let seed = rng.gen();
        let (success, updates, mean_loss) = match end_to_end_episode(&mut log.net, seed, &cfg.bc, rng) {
            Ok(r) => r,
            Err(e) => {
                outcome = Err(e);
                break;
            }
        };
        let rate = progress.push(success);
        log.curve.push(CurvePoint {
            episode,
            window_success: rate,
            phase: PhaseLabel::D,
        });
        episodes.push(EpisodeRecord {
            success,
            window_success: rate,
            updates,
            mean_loss,
            drivers: [Some(ControllerSource::Network); 3],
        });
        if progress.should_stop() {
            break;
        }
    }
    log.episodes_to_threshold = episodes_to_threshold(&log.curve, cfg.threshold);
    log.completed = log.episodes_to_threshold.is_some();
    log.episodes_used = episodes.len();
    log.phases.push(PhaseRecord {
        round: 0,
        label: PhaseLabel::D,
        first_episode: 0,
        log: TrainingLog {
            behaviour: None,
            episodes,
            converged: progress.converged(),
        },
        feature_hash: log.net.feature_hash(),
    });
    outcome
}
