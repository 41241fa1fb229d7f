//! CSV traces and JSON summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bandit::RegretTrace;

/// Fixed leading columns of a trace CSV; `beta_err_1..k` follow.
pub const CSV_PREFIX: [&str; 6] = [
    "round",
    "chosen_arm",
    "optimal_arm",
    "inst_regret",
    "cum_regret",
    "lambda_min",
];

pub fn csv_header(arms: usize) -> String {
    let mut cols: Vec<String> = CSV_PREFIX.iter().map(|s| s.to_string()).collect();
    cols.extend((1..=arms).map(|i| format!("beta_err_{i}")));
    cols.join(",")
}

/// One row per round, arms one-based, LF line endings. Floats use the
/// shortest representation that round-trips.
pub fn trace_csv(trace: &RegretTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(&csv_header(trace.arms));
    out.push('\n');
    for r in &trace.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            r.chosen.label(),
            r.optimal.label(),
            r.inst_regret,
            r.cum_regret,
            r.lambda_min
        );
        for e in &r.beta_err {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
    }
    out
}

/// Mean, extremes and quantiles of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Aggregate {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Aggregate {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: sorted[0],
            q10: quantile(&sorted, 0.1),
            median: quantile(&sorted, 0.5),
            q90: quantile(&sorted, 0.9),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointValue {
    pub round: usize,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub checkpoints: Vec<CheckpointValue>,
    pub pulls_per_arm: Vec<usize>,
    pub optimal_per_arm: Vec<usize>,
    pub reward_draws: u64,
    pub trace_file: Option<String>,
}

impl SeedSummary {
    pub fn of(seed: u64, trace: &RegretTrace, checkpoints: &[usize], trace_file: Option<String>) -> Self {
        SeedSummary {
            seed,
            final_regret: trace.cumulative(),
            checkpoints: checkpoints
                .iter()
                .map(|&t| CheckpointValue {
                    round: t,
                    cum_regret: trace.cumulative_at(t),
                })
                .collect(),
            pulls_per_arm: trace.pulls_per_arm(),
            optimal_per_arm: trace.optimal_per_arm(),
            reward_draws: trace.reward_draws,
            trace_file,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub t_lo: usize,
    pub t_hi: usize,
    pub slope: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub horizon: usize,
    pub arms: usize,
    pub seeds: Vec<SeedSummary>,
    pub final_regret: Aggregate,
    /// Mean cumulative regret across seeds at each checkpoint.
    pub mean_checkpoints: Vec<CheckpointValue>,
    pub slope: Option<SlopeSummary>,
}

impl Summary {
    pub fn build(
        horizon: usize,
        arms: usize,
        seeds: Vec<SeedSummary>,
        checkpoints: &[usize],
        slope: Option<SlopeSummary>,
    ) -> Self {
        let finals: Vec<f64> = seeds.iter().map(|s| s.final_regret).collect();
        let n = seeds.len() as f64;
        let mean_checkpoints = checkpoints
            .iter()
            .enumerate()
            .map(|(i, &t)| CheckpointValue {
                round: t,
                cum_regret: seeds.iter().map(|s| s.checkpoints[i].cum_regret).sum::<f64>() / n,
            })
            .collect();
        Summary {
            horizon,
            arms,
            final_regret: Aggregate::of(&finals).expect("at least one seed"),
            seeds,
            mean_checkpoints,
            slope,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(
            csv_header(3),
            "round,chosen_arm,optimal_arm,inst_regret,cum_regret,lambda_min,beta_err_1,beta_err_2,beta_err_3"
        );
    }

    #[test]
    fn aggregate_statistics() {
        let a = Aggregate::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((a.mean, a.min, a.median, a.max), (3.0, 1.0, 3.0, 5.0));
        assert!((a.q10 - 1.4).abs() < 1e-12);
        assert!((a.q90 - 4.6).abs() < 1e-12);
        assert!(Aggregate::of(&[]).is_none());
    }

    #[test]
    fn float_display_round_trips() {
        for x in [0.1, 1e-300, 123456.789, 2.0f64.sqrt() / 3.0] {
            let s = format!("{x}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }
}
