use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::oracle::{oracle_suite, OracleReport};
use super::report::{
    compare_strategies, group_by_strategy, summary_text, write_curve, OrderingReport, RunSummary,
};
use crate::behaviours::{run_strategy_partial, Strategy, StrategyLog};
use crate::choreographer::{
    train_choreographer_into, ChoreographerLog, ChoreographerNet, RewardMode,
};
use crate::curve::episodes_to_threshold;
use crate::error::{Error, Result};
use crate::experts::{expert_chain_success_rate, ExpertGains};

/// Minimum expert-chain success rate.
pub const EXPERT_THRESHOLD: f64 = 0.99;
pub const ORACLE_DRAWS: usize = 100;
pub const SUMMARY_FILE: &str = "summary.txt";

/// What a finished experiment produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub files: Vec<PathBuf>,
    pub runs: Vec<RunSummary>,
    pub ordering: Option<OrderingReport>,
    pub oracle: Option<OracleReport>,
    pub expert_rate: Option<f64>,
    /// Whether the experiment's acceptance threshold was met.
    pub threshold_met: bool,
}

/// Failure after some output may already have been written.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub files: Vec<PathBuf>,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunError {
    fn from(error: Error) -> Self {
        Self {
            error,
            files: Vec::new(),
        }
    }
}

/// Executes an experiment, writing one CSV per run plus `summary.txt`.
pub fn run(config: &ExperimentConfig) -> std::result::Result<RunReport, RunError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(Error::from)?;
    match config.kind {
        ExperimentKind::StrategyCompare => run_strategy_compare(config),
        ExperimentKind::Choreographer => run_choreographer(config),
        ExperimentKind::ExpertCheck => {
            let gains = ExpertGains::new(config.hyper.kp_pos, config.hyper.kp_yaw)?;
            let rate = expert_chain_success_rate(config.expert_episodes, &gains)?;
            let met = rate >= EXPERT_THRESHOLD;
            let path = config.out_dir.join(SUMMARY_FILE);
            let text = summary_text(
                &[
                    ("kind", config.kind.as_str().into()),
                    ("episodes", config.expert_episodes.to_string()),
                    ("success_rate", rate.to_string()),
                    ("required", EXPERT_THRESHOLD.to_string()),
                ],
                &[],
            );
            fs::write(&path, text).map_err(Error::from)?;
            Ok(RunReport {
                kind: config.kind,
                files: vec![path],
                runs: Vec::new(),
                ordering: None,
                oracle: None,
                expert_rate: Some(rate),
                threshold_met: met,
            })
        }
        ExperimentKind::OracleSuite => {
            let seed = config.seeds[0];
            let report = oracle_suite(ORACLE_DRAWS, seed)?;
            let mut header = vec![("kind", config.kind.as_str().to_string())];
            for c in &report.checks {
                header.push((c.name, format!("{:e} (tolerance {:e})", c.max_error, c.tolerance)));
            }
            let path = config.out_dir.join(SUMMARY_FILE);
            fs::write(&path, summary_text(&header, &[])).map_err(Error::from)?;
            Ok(RunReport {
                kind: config.kind,
                files: vec![path],
                runs: Vec::new(),
                ordering: None,
                threshold_met: report.passed(),
                oracle: Some(report),
                expert_rate: None,
            })
        }
    }
}

struct JobOutput {
    summary: RunSummary,
    path: PathBuf,
    error: Option<Error>,
}

fn strategy_job(config: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<(JobOutput, StrategyLog)> {
    let (log, error) = run_strategy_partial(&strategy.plan(), config.episode_budget, &config.strategy_config(), seed)?;
    let summary = RunSummary {
        run: strategy.slug().to_string(),
        seed,
        episodes_to_threshold: log.episodes_to_threshold,
        completed: log.completed,
        episodes: log.episodes_used,
    };
    let path = config.out_dir.join(format!("{}.csv", summary.file_stem()));
    write_curve(&path, &log.curve)?;
    Ok((JobOutput { summary, path, error }, log))
}

fn collect(outputs: Vec<Result<JobOutput>>) -> std::result::Result<(Vec<RunSummary>, Vec<PathBuf>), RunError> {
    let mut runs = Vec::new();
    let mut files = Vec::new();
    let mut first_error = None;
    for out in outputs {
        match out {
            Ok(job) => {
                files.push(job.path);
                runs.push(job.summary);
                if let (None, Some(e)) = (&first_error, job.error) {
                    first_error = Some(e);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(error) => Err(RunError { error, files }),
        None => Ok((runs, files)),
    }
}

fn run_strategy_compare(config: &ExperimentConfig) -> std::result::Result<RunReport, RunError> {
    let jobs: Vec<(Strategy, u64)> = config
        .strategies
        .iter()
        .flat_map(|s| config.seeds.iter().map(move |seed| (*s, *seed)))
        .collect();
    let outputs: Vec<Result<JobOutput>> = jobs
        .par_iter()
        .map(|&(s, seed)| strategy_job(config, s, seed).map(|(out, _)| out))
        .collect();
    let (runs, mut files) = collect(outputs)?;
    let grouped = group_by_strategy(&runs);
    let ordering = if grouped.len() >= 2 {
        Some(compare_strategies(&grouped)?)
    } else {
        None
    };
    let mut header = vec![
        ("kind", config.kind.as_str().to_string()),
        ("window", config.hyper.window.to_string()),
        ("threshold", config.threshold.to_string()),
        ("episode_budget", config.episode_budget.to_string()),
    ];
    if let Some(o) = &ordering {
        let order: Vec<&str> = o.ranking.iter().map(|(s, _)| s.slug()).collect();
        header.push(("ranking", order.join(",")));
        header.push(("separate_freezing_first", o.separate_freezing_first.to_string()));
    }
    let path = config.out_dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(&header, &runs)).map_err(|e| RunError {
        error: e.into(),
        files: files.clone(),
    })?;
    files.push(path);
    let threshold_met = ordering.as_ref().is_none_or(|o| o.separate_freezing_first);
    Ok(RunReport {
        kind: config.kind,
        files,
        runs,
        ordering,
        oracle: None,
        expert_rate: None,
        threshold_met,
    })
}

/// Choreographer run label, e.g. `choreographer_dense`.
pub fn choreographer_run_name(mode: RewardMode) -> String {
    format!("choreographer_{mode}")
}

/// Trains the behaviours with Separate + Freezing and then a choreographer
/// per reward mode on top of them.
fn choreographer_job(config: &ExperimentConfig, seed: u64) -> Result<Vec<JobOutput>> {
    let (behaviour_out, log) = strategy_job(config, Strategy::SeparateFreezing, seed)?;
    let mut outputs = vec![behaviour_out];
    if outputs[0].error.is_some() {
        return Ok(outputs);
    }
    for &mode in &config.reward_modes {
        let mut net = ChoreographerNet::new(&log.net, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6368_6f72);
        let mut clog = ChoreographerLog {
            mode,
            episodes: Vec::new(),
            converged: false,
        };
        let error = train_choreographer_into(
            &mut net,
            &log.net,
            mode,
            config.choreographer_budget,
            &config.choreographer_config(),
            &mut rng,
            &mut clog,
        )
        .err();
        let curve = clog.curve(0);
        let reached = episodes_to_threshold(&curve, config.choreographer_threshold);
        let summary = RunSummary {
            run: choreographer_run_name(mode),
            seed,
            episodes_to_threshold: reached,
            completed: reached.is_some(),
            episodes: clog.episodes.len(),
        };
        let path = config.out_dir.join(format!("{}.csv", summary.file_stem()));
        write_curve(&path, &curve)?;
        let failed = error.is_some();
        outputs.push(JobOutput { summary, path, error });
        if failed {
            break;
        }
    }
    Ok(outputs)
}

fn run_choreographer(config: &ExperimentConfig) -> std::result::Result<RunReport, RunError> {
    let outputs: Vec<Result<Vec<JobOutput>>> = config
        .seeds
        .par_iter()
        .map(|&seed| choreographer_job(config, seed))
        .collect();
    let flat: Vec<Result<JobOutput>> = outputs
        .into_iter()
        .flat_map(|r| match r {
            Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
        .collect();
    let (runs, mut files) = collect(flat)?;
    let threshold_met = config.reward_modes.iter().all(|m| {
        let name = choreographer_run_name(*m);
        let reached = runs
            .iter()
            .filter(|r| r.run == name && r.episodes_to_threshold.is_some())
            .count();
        2 * reached > config.seeds.len()
    });
    let header = vec![
        ("kind", config.kind.as_str().to_string()),
        ("window", config.hyper.window.to_string()),
        ("threshold", config.threshold.to_string()),
        ("choreographer_threshold", config.choreographer_threshold.to_string()),
        ("episode_budget", config.episode_budget.to_string()),
        ("choreographer_budget", config.choreographer_budget.to_string()),
    ];
    let path = config.out_dir.join(SUMMARY_FILE);
    fs::write(&path, summary_text(&header, &runs)).map_err(|e| RunError {
        error: e.into(),
        files: files.clone(),
    })?;
    files.push(path);
    Ok(RunReport {
        kind: config.kind,
        files,
        runs,
        ordering: None,
        oracle: None,
        expert_rate: None,
        threshold_met,
    })
}
