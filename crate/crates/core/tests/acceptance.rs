//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Always exits 0 so the regular test run stays usable while an empirical
//! criterion is red; set `ACCEPTANCE_STRICT=1` to exit 1 on any failure.
//! `ACCEPTANCE_ONLY=1,6` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use choreo_core::behaviours::{run_strategy, BcBatch, BehaviourNet, HeadKind, Strategy, StrategyConfig};
use choreo_core::choreographer::RewardMode;
use choreo_core::curve::PhaseLabel;
use choreo_core::experts::{expert_action, expert_chain_success_rate, ExpertGains};
use choreo_core::harness::oracle::oracle_suite;
use choreo_core::harness::median;
use choreo_core::harness::{choreographer_run_name, run, ExperimentConfig, ExperimentKind, RunSummary};
use choreo_core::{Behaviour, Phase, WorldState};

const SEEDS: [u64; 3] = [0, 1, 2];
const STRATEGY_BUDGET: usize = 20_000;
const CHOREOGRAPHER_BUDGET: usize = 4_000;

struct Outcome {
    pass: bool,
    detail: String,
}

struct Suite {
    dir: tempfile::TempDir,
    only: Option<Vec<usize>>,
    results: Vec<(usize, &'static str, Outcome, Duration)>,
}

impl Suite {
    fn wants(&self, n: usize) -> bool {
        self.only.as_ref().is_none_or(|v| v.contains(&n))
    }

    fn check(&mut self, n: usize, name: &'static str, f: impl FnOnce(&Path) -> Outcome) {
        if !self.wants(n) {
            return;
        }
        let start = Instant::now();
        let outcome = f(self.dir.path());
        let elapsed = start.elapsed();
        println!(
            "criterion {n} {name:<24} {} ({:.1}s) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            outcome.detail
        );
        self.results.push((n, name, outcome, elapsed));
    }
}

fn fmt_median(m: f64) -> String {
    if m.is_finite() {
        format!("{m:.0}")
    } else {
        "never".into()
    }
}

fn oracles(_: &Path) -> Outcome {
    match oracle_suite(100, 0) {
        Ok(report) => Outcome {
            pass: report.passed(),
            detail: report
                .checks
                .iter()
                .map(|c| format!("{}={:.1e}", c.name, c.max_error))
                .collect::<Vec<_>>()
                .join(" "),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn experts(_: &Path) -> Outcome {
    match expert_chain_success_rate(10_000, &ExpertGains::default()) {
        Ok(rate) => Outcome {
            pass: rate >= 0.99,
            detail: format!("success rate {rate:.4} over 10000 episodes"),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

/// 256 (observation, expert action) pairs from the expert chain, taken while
/// `target` is the active behaviour.
fn expert_batch(target: Behaviour) -> BcBatch {
    let gains = ExpertGains::default();
    let kind = HeadKind::from(target);
    let mut batch = BcBatch::new();
    let mut seed = 0;
    while batch.len() < 256 {
        let mut s = WorldState::reset(seed);
        let mut prev = s;
        let mut phase = Phase::Approach;
        let mut taken = 0;
        while let Some(b) = phase.behaviour() {
            let a = expert_action(b, &s, &gains);
            if b == target && taken < 8 && batch.len() < 256 {
                batch.push(s.observe(&prev).as_slice().to_vec(), kind.normalize(&a));
                taken += 1;
            }
            prev = s;
            s = s.step(&a).expect("expert actions are finite");
            phase = phase.advance(&s);
            if s.step_count >= 150 {
                break;
            }
        }
        seed += 1;
    }
    batch
}

fn bc_convergence(_: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for b in Behaviour::ALL {
        let batch = expert_batch(b);
        let kind = HeadKind::from(b);
        let mut net = BehaviourNet::new(11).expect("fresh net");
        // fixed zero noise: the sample equals tanh(mu)
        let noise = vec![0.0; batch.len() * kind.action_dim()];
        let result = (|| {
            let first = net.bc_batch_step(kind, &batch, &noise, 3e-4)?;
            for _ in 1..2000 {
                net.bc_batch_step(kind, &batch, &noise, 3e-4)?;
            }
            let mut g = choreo_core::nn::Graph::new(&net.store);
            let loss = net.bc_batch_loss(&mut g, kind, &batch, &noise)?;
            Ok::<_, choreo_core::Error>((first, g.value(loss).item()))
        })();
        match result {
            Ok((first, last)) => {
                let ratio = first / last;
                pass &= ratio >= 100.0;
                parts.push(format!("{b:?} {first:.3e}->{last:.3e} ({ratio:.0}x)"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{b:?} error: {e}"));
            }
        }
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn medians(runs: &[RunSummary]) -> BTreeMap<String, (f64, Vec<Option<usize>>)> {
    let mut by_run: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for r in runs {
        by_run.entry(r.run.clone()).or_default().push(r.episodes_to_threshold);
    }
    by_run.into_iter().map(|(k, v)| (k, (median(&v), v))).collect()
}

fn strategy_config(dir: &Path, strategies: &[Strategy], seeds: &[u64]) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(ExperimentKind::StrategyCompare);
    config.strategies = strategies.to_vec();
    config.seeds = seeds.to_vec();
    config.episode_budget = STRATEGY_BUDGET;
    config.out_dir = dir.to_path_buf();
    config
}

fn choreographer_config(dir: &Path, seeds: &[u64]) -> ExperimentConfig {
    let mut config = ExperimentConfig::new(ExperimentKind::Choreographer);
    config.reward_modes = RewardMode::ALL.to_vec();
    config.seeds = seeds.to_vec();
    config.episode_budget = STRATEGY_BUDGET;
    config.choreographer_budget = CHOREOGRAPHER_BUDGET;
    config.choreographer_threshold = 0.95;
    config.out_dir = dir.to_path_buf();
    config
}

fn strategy_ordering(dir: &Path) -> Outcome {
    let config = strategy_config(&dir.join("strategies"), &Strategy::ALL, &SEEDS);
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let m = medians(&report.runs);
    let get = |s: Strategy| m.get(s.slug()).map_or(f64::INFINITY, |(med, _)| *med);
    let sf = get(Strategy::SeparateFreezing);
    let sep = get(Strategy::Separate);
    let seq = get(Strategy::Sequential);
    let seqf = get(Strategy::SequentialFreezing);
    let e2e = get(Strategy::EndToEnd);
    let e2e_failures = m
        .get(Strategy::EndToEnd.slug())
        .map_or(0, |(_, v)| v.iter().filter(|x| x.is_none()).count());
    let checks = [
        ("sep_freeze<separate", sf < sep),
        ("separate<sequential", sep < seq),
        ("separate<sequential_freezing", sep < seqf),
        ("2*sep_freeze<=end_to_end", 2.0 * sf <= e2e),
        ("end_to_end_fails>=2", e2e_failures >= 2),
    ];
    let medians_text = Strategy::ALL
        .iter()
        .map(|s| format!("{}={}", s.slug(), fmt_median(get(*s))))
        .collect::<Vec<_>>()
        .join(" ");
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: format!(
            "medians {medians_text}; end_to_end failures {e2e_failures}/3{}",
            if failed.is_empty() {
                String::new()
            } else {
                format!("; unmet: {}", failed.join(", "))
            }
        ),
    }
}

fn choreographer(dir: &Path) -> Outcome {
    let config = choreographer_config(&dir.join("choreographer"), &SEEDS);
    let report = match run(&config) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let m = medians(&report.runs);
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in RewardMode::ALL {
        let name = choreographer_run_name(mode);
        let (med, runs) = m.get(&name).cloned().unwrap_or((f64::INFINITY, Vec::new()));
        let reached = runs.iter().filter(|r| r.is_some()).count();
        pass &= reached >= 2;
        parts.push(format!("{mode}: reached {reached}/3 median {}", fmt_median(med)));
    }
    let med = |mode| {
        m.get(&choreographer_run_name(mode))
            .map_or(f64::INFINITY, |(x, _)| *x)
    };
    let dense_first = med(RewardMode::Dense) <= med(RewardMode::Sparse);
    pass &= dense_first;
    parts.push(format!("dense<=sparse {dense_first}"));
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn freezing(_: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [Strategy::SequentialFreezing, Strategy::SeparateFreezing] {
        match run_strategy(&s.plan(), STRATEGY_BUDGET, &StrategyConfig::default(), 0) {
            Ok(log) => {
                let a = log.feature_hash_after(PhaseLabel::A);
                let c = log.feature_hash_after(PhaseLabel::C);
                let same = a.is_some() && a == c;
                let later = log.phases.iter().skip(1).all(|p| Some(p.feature_hash.as_str()) == a);
                pass &= same && later;
                parts.push(format!(
                    "{}: a={} c={} all later phases equal {later}",
                    s.slug(),
                    a.map_or("-", |h| &h[..12]),
                    c.map_or("-", |h| &h[..12])
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{}: error {e}", s.slug()));
            }
        }
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn csv_files(dir: &Path) -> BTreeMap<String, PathBuf> {
    fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
                .collect()
        })
        .unwrap_or_default()
}

/// Re-runs the seed-0 jobs of the strategy and choreographer experiments and
/// compares each CSV with the first run byte for byte. When those experiments
/// were skipped, both copies are produced here.
fn determinism(dir: &Path) -> Outcome {
    let mut compared = 0;
    let mut mismatched = Vec::new();
    let strategies = [Strategy::SeparateFreezing, Strategy::Separate];
    let jobs: [(&str, ExperimentConfig, ExperimentConfig); 2] = [
        (
            "strategies",
            strategy_config(&dir.join("strategies"), &strategies, &[0]),
            strategy_config(&dir.join("strategies_again"), &strategies, &[0]),
        ),
        (
            "choreographer",
            choreographer_config(&dir.join("choreographer"), &[0]),
            choreographer_config(&dir.join("choreographer_again"), &[0]),
        ),
    ];
    for (label, first, again) in jobs {
        if csv_files(&first.out_dir).is_empty() {
            if let Err(e) = run(&first) {
                return Outcome {
                    pass: false,
                    detail: format!("{label}: error {e}"),
                };
            }
        }
        if let Err(e) = run(&again) {
            return Outcome {
                pass: false,
                detail: format!("{label}: error {e}"),
            };
        }
        let before = csv_files(&first.out_dir);
        for (name, path) in csv_files(&again.out_dir) {
            compared += 1;
            let same = before
                .get(&name)
                .is_some_and(|p| fs::read(p).ok() == fs::read(&path).ok());
            if !same {
                mismatched.push(name);
            }
        }
    }
    Outcome {
        pass: compared > 0 && mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{compared} CSVs byte-identical on re-run")
        } else {
            format!("differing: {}", mismatched.join(", "))
        },
    }
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| {
        v.split(',')
            .filter_map(|x| x.trim().parse().ok())
            .collect::<Vec<usize>>()
    });
    let mut suite = Suite {
        dir: tempfile::tempdir().expect("temporary directory"),
        only,
        results: Vec::new(),
    };
    suite.check(1, "oracle_suite", oracles);
    suite.check(2, "expert_competence", experts);
    suite.check(3, "bc_convergence", bc_convergence);
    suite.check(4, "strategy_ordering", strategy_ordering);
    suite.check(5, "choreographer", choreographer);
    suite.check(6, "freezing_exactness", freezing);
    suite.check(7, "determinism", determinism);

    let failed: Vec<String> = suite
        .results
        .iter()
        .filter(|(_, _, o, _)| !o.pass)
        .map(|(n, name, _, _)| format!("{n} ({name})"))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        suite.results.len() - failed.len(),
        suite.results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }
    );
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
