//! Drivers for the two lower-bound instances.

use serde::Serialize;

use super::{run_seeds, thread_pool, HarnessResult};
use crate::bandit::{EpisodeOptions, EpisodeSpec, Mode, ModelSpec, WarmStartSpec};
use crate::distributions::PerturbationSpec;
use crate::environment::{lower_bound1_sigma, AdversarySpec};
use crate::error::{Error, Result};
use crate::harness::report::CheckpointValue;
use crate::harness::slope::log_spaced;
use crate::linalg::RealVector;

/// Fraction of `rho / sqrt(n)` (warm-start instance) or of `rho`
/// (parameter-norm instance) that counts as high regret.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    /// Small warm start against tiny perturbations.
    WarmStartSigma,
    /// Equal contexts with close, small parameters.
    BetaNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundArgs {
    pub which: Which,
    /// Instance size: the gap is `1/sqrt(n)` for the warm-start instance;
    /// the warm-start size for the parameter-norm instance.
    pub n: usize,
    pub rho: usize,
    pub seeds: usize,
    pub first_seed: u64,
    /// Parameter scale of the parameter-norm instance.
    pub eps: f64,
    /// Overrides the instance's default perturbation scale.
    pub sigma: Option<f64>,
    /// Overrides the warm-start size (defaults to `n`).
    pub warm_start: Option<usize>,
    pub threshold_factor: f64,
}

impl LowerBoundArgs {
    pub fn warm_start_sigma() -> Self {
        LowerBoundArgs {
            which: Which::WarmStartSigma,
            n: 64,
            rho: 10_000,
            seeds: 200,
            first_seed: 0,
            eps: 0.05,
            sigma: None,
            warm_start: None,
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
        }
    }

    pub fn beta_norm() -> Self {
        LowerBoundArgs {
            which: Which::BetaNorm,
            n: 9,
            sigma: Some(0.15),
            ..Self::warm_start_sigma()
        }
    }

    pub fn defaults(which: Which) -> Self {
        match which {
            Which::WarmStartSigma => Self::warm_start_sigma(),
            Which::BetaNorm => Self::beta_norm(),
        }
    }

    /// Episode, perturbation scale and regret threshold for these arguments.
    pub fn instance(&self) -> Result<(EpisodeSpec, f64, f64)> {
        if self.rho == 0 || self.seeds == 0 {
            return Err(Error::invalid("rho and seeds must be >= 1"));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::invalid("sigma must be finite and >= 0"));
            }
        }
        let warm = self.warm_start.unwrap_or(self.n);
        match self.which {
            Which::WarmStartSigma => {
                let sigma = match self.sigma {
                    Some(s) => s,
                    None => lower_bound1_sigma(self.n, self.rho)?,
                };
                let one = RealVector::new(vec![1.0])?;
                let spec = EpisodeSpec {
                    model: ModelSpec::new(Mode::Multi, 1, 2, vec![one.clone(), one], 1.0)?,
                    adversary: AdversarySpec::LowerBound1 { n: self.n },
                    perturbation: PerturbationSpec::Gaussian { sigma },
                    warm_start: WarmStartSpec::perturbed(warm),
                    horizon: self.rho,
                };
                let threshold = self.threshold_factor * self.rho as f64 / (self.n as f64).sqrt();
                Ok((spec, sigma, threshold))
            }
            Which::BetaNorm => {
                if !(self.eps > 0.0 && 10.0 * self.eps <= 1.0) {
                    return Err(Error::invalid("eps must lie in (0, 0.1]"));
                }
                let sigma = self.sigma.unwrap_or(0.15);
                let spec = EpisodeSpec {
                    model: ModelSpec::new(
                        Mode::Multi,
                        1,
                        2,
                        vec![
                            RealVector::new(vec![10.0 * self.eps])?,
                            RealVector::new(vec![8.0 * self.eps])?,
                        ],
                        1.0,
                    )?,
                    adversary: AdversarySpec::LowerBound2,
                    perturbation: PerturbationSpec::Gaussian { sigma },
                    warm_start: WarmStartSpec::perturbed(warm),
                    horizon: self.rho,
                };
                Ok((spec, sigma, self.threshold_factor * self.rho as f64))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub which: Which,
    pub n: usize,
    pub warm_start: usize,
    pub rho: usize,
    pub sigma: f64,
    pub eps: Option<f64>,
    /// Largest warm start the instance's size condition allows.
    pub warm_start_limit: f64,
    pub seeds: usize,
    pub threshold: f64,
    pub high_regret_seeds: usize,
    pub high_regret_fraction: f64,
    pub mean_regret: f64,
    pub mean_checkpoints: Vec<CheckpointValue>,
}

/// Runs the seed battery for one instance.
pub fn run_lower_bound(args: &LowerBoundArgs, parallel: bool) -> HarnessResult<LowerBoundReport> {
    let (spec, sigma, threshold) = args.instance()?;
    let seeds: Vec<u64> = (0..args.seeds as u64)
        .map(|i| args.first_seed.wrapping_add(i))
        .collect();
    let run = || run_seeds(&spec, &seeds, EpisodeOptions::default(), parallel);
    let traces = if parallel { thread_pool()?.install(run)? } else { run()? };
    let finals: Vec<f64> = traces.iter().map(|t| t.cumulative()).collect();
    let high = finals.iter().filter(|&&r| r >= threshold).count();
    let checkpoints = log_spaced(1, args.rho, 12);
    let mean_checkpoints = checkpoints
        .iter()
        .map(|&t| CheckpointValue {
            round: t,
            cum_regret: traces.iter().map(|tr| tr.cumulative_at(t)).sum::<f64>() / traces.len() as f64,
        })
        .collect();
    let warm_start_limit = match args.which {
        Which::WarmStartSigma => {
            let l = (args.rho as f64 / 100.0).ln();
            if sigma > 0.0 && l > 0.0 {
                1.0 / (100.0 * sigma * sigma * l)
            } else {
                f64::INFINITY
            }
        }
        Which::BetaNorm => 1.0 / (2.0 * args.eps),
    };
    Ok(LowerBoundReport {
        which: args.which,
        n: args.n,
        warm_start: spec.warm_start.n,
        rho: args.rho,
        sigma,
        eps: (args.which == Which::BetaNorm).then_some(args.eps),
        warm_start_limit,
        seeds: args.seeds,
        threshold,
        high_regret_seeds: high,
        high_regret_fraction: high as f64 / args.seeds as f64,
        mean_regret: finals.iter().sum::<f64>() / finals.len() as f64,
        mean_checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_instance_defaults() {
        let (spec, sigma, threshold) = LowerBoundArgs::warm_start_sigma().instance().unwrap();
        assert_eq!(spec.warm_start.n, 64);
        assert!((sigma - (1.0 / (6400.0 * 100f64.ln())).sqrt()).abs() < 1e-15);
        assert!((threshold - 0.02 * 10_000.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn beta_norm_instance_uses_ten_and_eight_eps() {
        let (spec, _, _) = LowerBoundArgs::beta_norm().instance().unwrap();
        assert!((spec.model.betas[0][0] - 0.5).abs() < 1e-15);
        assert!((spec.model.betas[1][0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn warm_start_limit_matches_default_sigma() {
        let args = LowerBoundArgs {
            rho: 2_000,
            seeds: 4,
            ..LowerBoundArgs::warm_start_sigma()
        };
        let rep = run_lower_bound(&args, false).unwrap();
        assert!((rep.warm_start_limit - 64.0).abs() < 1e-9);
        assert_eq!(rep.seeds, 4);
    }
}
