//! Parameter sweeps over a base experiment.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{read_json, ExperimentConfig};
use super::report::Aggregate;
use super::slope::{fit_line, log_spaced, SlopeFit, REGRET_FLOOR};
use super::{ensure_dir, thread_pool, write_file, HarnessResult};
use crate::bandit::{run_episode, EpisodeSpec};
use crate::conditions::{estimate_margin, ConditionReport, McOptions};
use crate::distributions::PerturbationSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Perturbation scale; a truncated spec keeps its `rhat / sigma` ratio.
    Sigma,
    WarmStartN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConditions {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Slope window `[t_lo, t_hi]`; defaults to `[10, horizon]`.
    #[serde(default)]
    pub slope_window: Option<[usize; 2]>,
    /// Estimate the margin of `betas[0]` at `r = sigma sqrt(2 ln T)` per point.
    #[serde(default)]
    pub conditions: Option<SweepConditions>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: SweepConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate().map_err(|e| match e {
            Error::Config { pointer, message } => Error::config(format!("/base{pointer}"), message),
            other => other,
        })?;
        if self.values.is_empty() {
            return Err(Error::config("/values", "need at least one value"));
        }
        for (i, &v) in self.values.iter().enumerate() {
            let ok = match self.parameter {
                SweepParameter::Sigma => v > 0.0 && v.is_finite(),
                SweepParameter::WarmStartN => v >= 0.0 && v.fract() == 0.0 && v < 1e9,
            };
            if !ok {
                return Err(Error::config(
                    format!("/values/{i}"),
                    "value out of range for the parameter",
                ));
            }
            self.point(v)
                .map_err(|e| Error::config(format!("/values/{i}"), e.to_string()))?;
        }
        if self.parameter == SweepParameter::Sigma && matches!(self.base.perturbation, PerturbationSpec::None) {
            return Err(Error::config(
                "/base/perturbation",
                "a sigma sweep needs a perturbation family",
            ));
        }
        if let Some([lo, hi]) = self.slope_window {
            if lo < 10 || hi <= lo || hi > self.base.horizon {
                return Err(Error::config("/slope_window", "need 10 <= t_lo < t_hi <= horizon"));
            }
        }
        if self.conditions.is_some_and(|c| c.samples == 0) {
            return Err(Error::config("/conditions/samples", "need at least one sample"));
        }
        Ok(())
    }

    /// Episode for one swept value.
    pub fn point(&self, value: f64) -> Result<EpisodeSpec> {
        let mut spec = self.base.episode();
        match self.parameter {
            SweepParameter::Sigma => {
                spec.perturbation = match self.base.perturbation {
                    PerturbationSpec::None => PerturbationSpec::None,
                    PerturbationSpec::Gaussian { .. } => PerturbationSpec::Gaussian { sigma: value },
                    PerturbationSpec::TruncatedRotated { sigma, rhat } => PerturbationSpec::TruncatedRotated {
                        sigma: value,
                        rhat: rhat / sigma * value,
                    },
                };
            }
            SweepParameter::WarmStartN => spec.warm_start.n = value as usize,
        }
        if let crate::bandit::WarmStartSource::ExplicitData { .. } = spec.warm_start.source {
            if self.parameter == SweepParameter::WarmStartN {
                return Err(Error::invalid(
                    "warm-start sweeps need a perturbed-adversary warm start",
                ));
            }
        }
        Ok(spec)
    }

    fn window(&self) -> (usize, usize) {
        match self.slope_window {
            Some([lo, hi]) => (lo, hi),
            None => (10, self.base.horizon),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub value: f64,
    pub seed: u64,
    pub final_regret: f64,
    /// Slope of this seed's own log-log regret curve, when defined.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub point: usize,
    pub value: f64,
    pub final_regret: Aggregate,
    /// Fit to the mean regret curve across seeds.
    pub mean_slope: Option<SlopeFit>,
    pub margin: Option<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub rows: Vec<SweepRow>,
    pub points: Vec<PointSummary>,
}

fn ln_curve(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.max(REGRET_FLOOR).ln()).collect()
}

/// Runs every `(point, seed)` pair. Rows come back ordered by point, then by
/// the configured seed order.
pub fn run_sweep(cfg: &SweepConfig, parallel: bool) -> HarnessResult<SweepResult> {
    cfg.validate()?;
    let (t_lo, t_hi) = cfg.window();
    let checkpoints = log_spaced(t_lo, t_hi.max(t_lo + 1).min(cfg.base.horizon), 25);
    let xs: Vec<f64> = checkpoints.iter().map(|&t| (t as f64).ln()).collect();
    let specs: Vec<EpisodeSpec> = cfg.values.iter().map(|&v| cfg.point(v)).collect::<Result<_>>()?;
    let tasks: Vec<(usize, u64)> = (0..specs.len())
        .flat_map(|p| cfg.base.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let run = |&(p, seed): &(usize, u64)| -> Result<(f64, Vec<f64>)> {
        let trace = run_episode(&specs[p], seed)?;
        let curve = checkpoints.iter().map(|&t| trace.cumulative_at(t)).collect();
        Ok((trace.cumulative(), curve))
    };
    let outcomes: Vec<(f64, Vec<f64>)> = if parallel {
        thread_pool()?.install(|| tasks.par_iter().map(run).collect::<Result<_>>())?
    } else {
        tasks.iter().map(run).collect::<Result<_>>()?
    };

    let slope_of = |curve: &[f64]| -> Option<f64> {
        if xs.len() < 2 {
            return None;
        }
        fit_line(&xs, &ln_curve(curve)).ok().map(|f| f.slope)
    };
    let rows: Vec<SweepRow> = tasks
        .iter()
        .zip(&outcomes)
        .map(|(&(p, seed), (fin, curve))| SweepRow {
            point: p,
            value: cfg.values[p],
            seed,
            final_regret: *fin,
            slope: slope_of(curve),
        })
        .collect();

    let mut points = Vec::with_capacity(specs.len());
    for (p, spec) in specs.iter().enumerate() {
        let finals: Vec<f64> = rows.iter().filter(|r| r.point == p).map(|r| r.final_regret).collect();
        let curves: Vec<&Vec<f64>> = tasks
            .iter()
            .zip(&outcomes)
            .filter(|((q, _), _)| *q == p)
            .map(|(_, o)| &o.1)
            .collect();
        let n = curves.len() as f64;
        let mean_curve: Vec<f64> = (0..checkpoints.len())
            .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n)
            .collect();
        let mean_slope = if xs.len() >= 2 {
            fit_line(&xs, &ln_curve(&mean_curve)).ok()
        } else {
            None
        };
        let margin = match cfg.conditions {
            Some(c) if spec.perturbation.sigma() > 0.0 => {
                let sigma = spec.perturbation.sigma();
                let beta = &spec.model.betas[0];
                let r = sigma * (2.0 * (cfg.base.horizon.max(2) as f64).ln()).sqrt();
                Some(estimate_margin(
                    &spec.perturbation,
                    beta,
                    r * beta.norm(),
                    sigma * sigma / r,
                    None,
                    McOptions::new(c.samples, c.seed.wrapping_add(p as u64)),
                )?)
            }
            _ => None,
        };
        points.push(PointSummary {
            point: p,
            value: cfg.values[p],
            final_regret: Aggregate::of(&finals).expect("seeds are non-empty"),
            mean_slope,
            margin,
        });
    }
    Ok(SweepResult {
        parameter: cfg.parameter,
        rows,
        points,
    })
}

/// Runs the sweep and writes `sweep.json` into the configured output
/// directory, if any.
pub fn run_and_write(cfg: &SweepConfig, out_dir: Option<&Path>, parallel: bool) -> HarnessResult<SweepResult> {
    let result = run_sweep(cfg, parallel)?;
    if let Some(dir) = out_dir.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        ensure_dir(&dir)?;
        let json = serde_json::to_string_pretty(&result).expect("sweep serialises");
        write_file(&dir.join("sweep.json"), &(json + "\n"))?;
    }
    Ok(result)
}
