use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::behaviours::Strategy;
use crate::curve::CurvePoint;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "episode,window_success,phase";

/// Learning curve as CSV text.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::with_capacity(32 * (curve.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.episode, p.window_success, p.phase);
    }
    out
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(curve_csv(curve).as_bytes())?;
    f.flush()?;
    Ok(())
}

/// One run's headline number.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Strategy slug or `choreographer_{mode}`.
    pub run: String,
    pub seed: u64,
    pub episodes_to_threshold: Option<usize>,
    pub completed: bool,
    pub episodes: usize,
}

impl RunSummary {
    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.run, self.seed)
    }
}

/// Key-value summary text: `# comments`, `key=value` lines.
pub fn summary_text(header: &[(&str, String)], runs: &[RunSummary]) -> String {
    let mut out = String::new();
    out.push_str("# window_success is the success rate over the trailing window of episodes\n");
    for (k, v) in header {
        let _ = writeln!(out, "{k}={v}");
    }
    for r in runs {
        let stem = format!("{}.seed{}", r.run, r.seed);
        let ett = r
            .episodes_to_threshold
            .map_or_else(|| "none".to_string(), |e| e.to_string());
        let _ = writeln!(out, "{stem}.episodes_to_threshold={ett}");
        let _ = writeln!(out, "{stem}.completed={}", r.completed);
        let _ = writeln!(out, "{stem}.episodes={}", r.episodes);
    }
    out
}

/// Reads the `episodes_to_threshold` entries of a summary file.
pub fn parse_summary(text: &str) -> Result<Vec<RunSummary>> {
    let mut runs: BTreeMap<(String, u64), RunSummary> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("summary line {}: expected key=value", lineno + 1)))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let [run, seed, field] = parts[..] else { continue };
        let Some(seed) = seed.strip_prefix("seed").and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let entry = runs.entry((run.to_string(), seed)).or_insert_with(|| RunSummary {
            run: run.to_string(),
            seed,
            episodes_to_threshold: None,
            completed: false,
            episodes: 0,
        });
        let value = value.trim();
        let parse_err = || Error::Config(format!("summary line {}: bad value `{value}`", lineno + 1));
        match field {
            "episodes_to_threshold" => {
                entry.episodes_to_threshold = match value {
                    "none" => None,
                    v => Some(v.parse().map_err(|_| parse_err())?),
                }
            }
            "completed" => entry.completed = value.parse().map_err(|_| parse_err())?,
            "episodes" => entry.episodes = value.parse().map_err(|_| parse_err())?,
            _ => {}
        }
    }
    Ok(runs.into_values().collect())
}

/// Per-strategy seeds' results, as fed to [`compare_strategies`].
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub episodes_to_threshold: Vec<Option<usize>>,
}

impl StrategySummary {
    /// Median with unreached runs counted as infinitely slow.
    pub fn median(&self) -> f64 {
        median(&self.episodes_to_threshold)
    }
}

pub fn median(values: &[Option<usize>]) -> f64 {
    let mut v: Vec<f64> = values
        .iter()
        .map(|e| e.map_or(f64::INFINITY, |e| e as f64))
        .collect();
    if v.is_empty() {
        return f64::INFINITY;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Groups strategy run summaries by strategy; other runs are ignored.
pub fn group_by_strategy(runs: &[RunSummary]) -> Vec<StrategySummary> {
    let mut map: BTreeMap<Strategy, Vec<Option<usize>>> = BTreeMap::new();
    for r in runs {
        if let Ok(s) = r.run.parse::<Strategy>() {
            map.entry(s).or_default().push(r.episodes_to_threshold);
        }
    }
    map.into_iter()
        .map(|(strategy, episodes_to_threshold)| StrategySummary {
            strategy,
            episodes_to_threshold,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// Fastest first.
    pub ranking: Vec<(Strategy, f64)>,
    pub separate_freezing_first: bool,
}

impl OrderingReport {
    pub fn median_of(&self, s: Strategy) -> Option<f64> {
        self.ranking.iter().find(|(r, _)| *r == s).map(|(_, m)| *m)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (s, m)) in self.ranking.iter().enumerate() {
            let m = if m.is_finite() { format!("{m}") } else { "never".into() };
            let _ = writeln!(out, "{}. {} (median episodes to threshold: {m})", i + 1, s.name());
        }
        let _ = writeln!(out, "separate_freezing_first={}", self.separate_freezing_first);
        out
    }
}

/// Ranks strategies by median episodes-to-threshold; ties go to the
/// earlier strategy in [`Strategy::ALL`].
pub fn compare_strategies(summaries: &[StrategySummary]) -> Result<OrderingReport> {
    if summaries.len() < 2 {
        return Err(Error::TooFewSummaries(summaries.len()));
    }
    let mut ranking: Vec<(Strategy, f64)> = summaries.iter().map(|s| (s.strategy, s.median())).collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.table_index().cmp(&b.0.table_index())));
    let separate_freezing_first = ranking[0].0 == Strategy::SeparateFreezing;
    Ok(OrderingReport {
        ranking,
        separate_freezing_first,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::PhaseLabel;

    fn summary(strategy: Strategy, e: &[Option<usize>]) -> StrategySummary {
        StrategySummary {
            strategy,
            episodes_to_threshold: e.to_vec(),
        }
    }

    #[test]
    fn separate_freezing_fastest_is_flagged() {
        let r = compare_strategies(&[
            summary(Strategy::Sequential, &[Some(900), None, Some(800)]),
            summary(Strategy::SeparateFreezing, &[Some(100), Some(300), Some(200)]),
            summary(Strategy::EndToEnd, &[None, None, Some(10)]),
        ])
        .unwrap();
        assert!(r.separate_freezing_first);
        assert_eq!(r.ranking[0], (Strategy::SeparateFreezing, 200.0));
        assert_eq!(r.ranking[2].0, Strategy::EndToEnd);
    }

    #[test]
    fn ties_go_to_the_earlier_row() {
        let r = compare_strategies(&[
            summary(Strategy::SeparateFreezing, &[Some(5)]),
            summary(Strategy::Separate, &[Some(5)]),
        ])
        .unwrap();
        assert_eq!(r.ranking[0].0, Strategy::Separate);
        assert!(!r.separate_freezing_first);
    }

    #[test]
    fn single_strategy_is_an_error() {
        assert!(compare_strategies(&[summary(Strategy::Separate, &[Some(1)])]).is_err());
    }

    #[test]
    fn median_counts_failures_as_infinite() {
        assert_eq!(median(&[Some(1), None, Some(3)]), 3.0);
        assert_eq!(median(&[Some(1), Some(3)]), 2.0);
        assert!(median(&[None, None, Some(3)]).is_infinite());
    }

    #[test]
    fn summary_round_trips() {
        let runs = vec![
            RunSummary {
                run: "separate".into(),
                seed: 2,
                episodes_to_threshold: Some(42),
                completed: true,
                episodes: 43,
            },
            RunSummary {
                run: "end_to_end".into(),
                seed: 0,
                episodes_to_threshold: None,
                completed: false,
                episodes: 1000,
            },
        ];
        let text = summary_text(&[("kind", "strategy_compare".into())], &runs);
        let mut parsed = parse_summary(&text).unwrap();
        parsed.sort_by_key(|r| r.run.clone());
        assert_eq!(parsed[0], runs[1]);
        assert_eq!(parsed[1], runs[0]);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let csv = curve_csv(&[
            CurvePoint {
                episode: 0,
                window_success: 0.01,
                phase: PhaseLabel::A,
            },
            CurvePoint {
                episode: 1,
                window_success: 1.0,
                phase: PhaseLabel::Choreographer,
            },
        ]);
        assert_eq!(csv, "episode,window_success,phase\n0,0.01,a\n1,1,choreographer\n");
    }
}
