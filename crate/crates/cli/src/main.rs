use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use choreo_core::behaviours::Strategy;
use choreo_core::choreographer::RewardMode;
use choreo_core::harness::{
    compare_strategies, group_by_strategy, parse_summary, run, ExperimentConfig, ExperimentKind, RunReport,
};
use choreo_core::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "choreo", version, about = "Behaviour-based pick-and-place experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run { config: PathBuf },
    /// Success rate of the scripted expert chain.
    ExpertCheck,
    /// Finite-difference and brute-force checks of the learning code.
    OracleSuite,
    /// Rank strategies from one or more summary files.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Episode budget (expert episodes for expert-check).
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Restrict to these strategies (repeatable).
    #[arg(long, global = true)]
    strategy: Vec<String>,
    #[arg(long, global = true)]
    reward_mode: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), Error> {
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(episodes) = self.episodes {
            match cfg.kind {
                ExperimentKind::ExpertCheck => cfg.expert_episodes = episodes as u64,
                ExperimentKind::Choreographer => cfg.choreographer_budget = episodes,
                _ => cfg.episode_budget = episodes,
            }
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if !self.strategy.is_empty() {
            cfg.strategies = self
                .strategy
                .iter()
                .map(|s| s.parse::<Strategy>())
                .collect::<Result<_, _>>()?;
        }
        if let Some(mode) = &self.reward_mode {
            cfg.reward_modes = vec![mode.parse::<RewardMode>()?];
        }
        cfg.validate()
    }
}

fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Config(_) | Error::Io(_) | Error::EmptySeeds | Error::TooFewSummaries(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn print_report(report: &RunReport) {
    for r in &report.runs {
        let ett = r
            .episodes_to_threshold
            .map_or_else(|| "not reached".to_string(), |e| e.to_string());
        println!("{} seed {}: episodes to threshold {ett} ({} episodes)", r.run, r.seed, r.episodes);
    }
    if let Some(o) = &report.ordering {
        print!("{}", o.render());
    }
    if let Some(oracle) = &report.oracle {
        for c in &oracle.checks {
            let verdict = if c.passed() { "ok" } else { "FAILED" };
            println!(
                "{:<18} {verdict:<6} max error {:.3e} over {} draws (tolerance {:.0e})",
                c.name, c.max_error, c.draws, c.tolerance
            );
        }
    }
    if let Some(rate) = report.expert_rate {
        println!("expert chain success rate: {rate:.4}");
    }
    if let Some(summary) = report.files.last() {
        println!("summary: {}", summary.display());
    }
}

fn execute(cfg: ExperimentConfig) -> u8 {
    match run(&cfg) {
        Ok(report) => {
            print_report(&report);
            if report.threshold_met {
                0
            } else {
                eprintln!("acceptance threshold not met");
                EXIT_THRESHOLD
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            for f in &e.files {
                eprintln!("partial output: {}", f.display());
            }
            exit_code_for(&e.error)
        }
    }
}

fn config_for(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.command {
        Command::Run { config } => ExperimentConfig::load(config)
            .with_context(|| format!("loading {}", config.display()))?,
        Command::ExpertCheck => ExperimentConfig::new(ExperimentKind::ExpertCheck),
        Command::OracleSuite => ExperimentConfig::new(ExperimentKind::OracleSuite),
        Command::Compare { .. } => unreachable!("compare takes no experiment config"),
    };
    cli.overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn compare(paths: &[PathBuf]) -> anyhow::Result<bool> {
    let mut runs = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        runs.extend(parse_summary(&text)?);
    }
    let report = compare_strategies(&group_by_strategy(&runs))?;
    print!("{}", report.render());
    Ok(report.separate_freezing_first)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Compare { summaries } => match compare(summaries) {
            Ok(true) => 0,
            Ok(false) => EXIT_THRESHOLD,
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_CONFIG
            }
        },
        _ => match config_for(&cli) {
            Ok(cfg) => execute(cfg),
            Err(e) => {
                eprintln!("error: {e:#}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code)
}
