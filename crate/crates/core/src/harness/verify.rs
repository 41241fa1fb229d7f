//! Grid certification of the margin and diversity conditions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{read_json, validate_perturbation};
use super::{write_file, HarnessResult};
use crate::conditions::{estimate_diversity, estimate_margin, ConditionReport, McOptions};
use crate::distributions::PerturbationSpec;
use crate::error::{Error, Result};
use crate::linalg::RealVector;

/// Margin constant for spherical Gaussians with `r >= sigma`.
pub const GAUSSIAN_MARGIN_CONSTANT: f64 = 1.0 / 20.0;
/// Margin constant for the truncated family under its width conditions.
pub const TRUNCATED_MARGIN_CONSTANT: f64 = 1.0 / 80.0;

fn one_hundred_thousand() -> usize {
    100_000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub perturbation: PerturbationSpec,
    pub r: f64,
    /// Defaults to `r |beta|`.
    #[serde(default)]
    pub b: Option<f64>,
    /// Defaults to `sigma^2 / r`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Rotation reference of a truncated spec; defaults to `beta`.
    #[serde(default)]
    pub rotation_from: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub diversity: bool,
    /// Overrides the config-wide sample count for this point.
    #[serde(default)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub dim: usize,
    /// Direction tested; defaults to the first basis vector.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    /// Mean used by the diversity estimate; defaults to zero.
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    #[serde(default = "one_hundred_thousand")]
    pub samples: usize,
    pub seed: u64,
    pub points: Vec<GridPoint>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn vector(v: &Option<Vec<f64>>, dim: usize, default: RealVector, ptr: &str) -> Result<RealVector> {
    match v {
        None => Ok(default),
        Some(x) if x.len() == dim => RealVector::new(x.clone()).map_err(|e| Error::config(ptr, e.to_string())),
        Some(x) => Err(Error::config(ptr, format!("expected dimension {dim}, got {}", x.len()))),
    }
}

impl VerifyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: VerifyConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("/dim", "dimension must be >= 1"));
        }
        let beta = self.beta_vec()?;
        if beta.is_zero() {
            return Err(Error::config("/beta", "beta must be nonzero"));
        }
        let mu = self.mu_vec()?;
        if mu.norm() > 1.0 + 1e-12 {
            return Err(Error::config("/mu", "mean must lie in the unit ball"));
        }
        if self.samples == 0 {
            return Err(Error::config("/samples", "need at least one sample"));
        }
        if self.points.is_empty() {
            return Err(Error::config("/points", "need at least one grid point"));
        }
        for (i, p) in self.points.iter().enumerate() {
            let ptr = format!("/points/{i}");
            validate_perturbation(&p.perturbation, &format!("{ptr}/perturbation"))?;
            if p.perturbation.sigma() <= 0.0 {
                return Err(Error::config(format!("{ptr}/perturbation/sigma"), "sigma must be > 0"));
            }
            if !(p.r > 0.0 && p.r.is_finite()) {
                return Err(Error::config(format!("{ptr}/r"), "r must be > 0"));
            }
            if p.alpha.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
                return Err(Error::config(format!("{ptr}/alpha"), "alpha must be >= 0"));
            }
            if p.samples == Some(0) {
                return Err(Error::config(format!("{ptr}/samples"), "need at least one sample"));
            }
            if p.b.is_some_and(|b| !b.is_finite()) {
                return Err(Error::config(format!("{ptr}/b"), "b must be finite"));
            }
            vector(
                &p.rotation_from,
                self.dim,
                beta.clone(),
                &format!("{ptr}/rotation_from"),
            )?;
        }
        Ok(())
    }

    fn beta_vec(&self) -> Result<RealVector> {
        vector(&self.beta, self.dim, RealVector::basis(self.dim, 0), "/beta")
    }

    fn mu_vec(&self) -> Result<RealVector> {
        vector(&self.mu, self.dim, RealVector::zeros(self.dim), "/mu")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub perturbation: PerturbationSpec,
    pub r: f64,
    pub b: f64,
    pub alpha: f64,
    pub margin: ConditionReport,
    pub diversity: Option<ConditionReport>,
    /// `lambda_hat r^2 / sigma^4`.
    pub diversity_scaled: Option<f64>,
    /// Margin constant the point is expected to meet, when it lies in a
    /// regime with an explicit constant.
    pub expected_margin: Option<f64>,
    /// The 99% interval lies entirely below `expected_margin`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub seed: u64,
    pub points: Vec<PointReport>,
    pub flagged: usize,
}

/// Explicit margin constant applying at `(spec, r, b, alpha)` in dimension
/// `d`, if any.
pub fn expected_margin(spec: &PerturbationSpec, d: usize, r: f64, b: f64, alpha: f64, beta_norm: f64) -> Option<f64> {
    let sigma = spec.sigma();
    let in_margin_family = b <= r * beta_norm * (1.0 + 1e-12) && alpha <= sigma * sigma / r * (1.0 + 1e-12);
    if !in_margin_family {
        return None;
    }
    match *spec {
        PerturbationSpec::Gaussian { .. } if r >= sigma => Some(GAUSSIAN_MARGIN_CONSTANT),
        PerturbationSpec::TruncatedRotated { rhat, .. }
            if r >= 2.0 * sigma && rhat >= 1.25 * r + sigma * (2.0 * (8.0 * d as f64).ln()).sqrt() =>
        {
            Some(TRUNCATED_MARGIN_CONSTANT)
        }
        _ => None,
    }
}

/// Evaluates every grid point. Points whose margin interval falls below
/// their explicit constant are flagged.
pub fn verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let beta = cfg.beta_vec()?;
    let mu = cfg.mu_vec()?;
    let mut points = Vec::with_capacity(cfg.points.len());
    for (i, p) in cfg.points.iter().enumerate() {
        let sigma = p.perturbation.sigma();
        let b = p.b.unwrap_or(p.r * beta.norm());
        let alpha = p.alpha.unwrap_or(sigma * sigma / p.r);
        let rot = vector(&p.rotation_from, cfg.dim, beta.clone(), "/rotation_from")?;
        let seed = cfg.seed.wrapping_add(2 * i as u64);
        let samples = p.samples.unwrap_or(cfg.samples);
        let mut margin = estimate_margin(
            &p.perturbation,
            &beta,
            b,
            alpha,
            Some(&rot),
            McOptions::new(samples, seed),
        )?;
        margin.parameters.r = Some(p.r);
        let diversity = if p.diversity {
            Some(estimate_diversity(
                &p.perturbation,
                &beta,
                &mu,
                b,
                Some(p.r),
                McOptions::new(samples, seed.wrapping_add(1)),
            )?)
        } else {
            None
        };
        let diversity_scaled = diversity
            .as_ref()
            .and_then(|d| d.lambda_hat)
            .map(|l| l * p.r * p.r / sigma.powi(4));
        let expected = expected_margin(&p.perturbation, cfg.dim, p.r, b, alpha, beta.norm());
        let gamma = margin.gamma_hat.unwrap_or(0.0);
        let flagged = expected.is_some_and(|c| gamma + margin.confidence_halfwidth < c);
        points.push(PointReport {
            index: i,
            perturbation: p.perturbation,
            r: p.r,
            b,
            alpha,
            margin,
            diversity,
            diversity_scaled,
            expected_margin: expected,
            flagged,
        });
    }
    let flagged = points.iter().filter(|p| p.flagged).count();
    Ok(VerifyReport {
        samples: cfg.samples,
        seed: cfg.seed,
        points,
        flagged,
    })
}

/// Runs [`verify`] and writes the JSON report to the configured output, if
/// any. Returns the report for printing.
pub fn verify_and_write(cfg: &VerifyConfig) -> HarnessResult<VerifyReport> {
    let report = verify(cfg)?;
    if let Some(out) = &cfg.output {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            super::ensure_dir(parent)?;
        }
        let json = serde_json::to_string_pretty(&report).expect("report serialises");
        write_file(out, &(json + "\n"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_detection() {
        let g = PerturbationSpec::Gaussian { sigma: 0.1 };
        assert_eq!(
            expected_margin(&g, 3, 0.2, 0.2, 0.05, 1.0),
            Some(GAUSSIAN_MARGIN_CONSTANT)
        );
        assert_eq!(expected_margin(&g, 3, 0.05, 0.05, 0.2, 1.0), None);
        let rhat = 1.25 * 0.2 + 0.1 * (2.0 * 24f64.ln()).sqrt();
        let t = PerturbationSpec::TruncatedRotated { sigma: 0.1, rhat };
        assert_eq!(
            expected_margin(&t, 3, 0.2, 0.2, 0.05, 1.0),
            Some(TRUNCATED_MARGIN_CONSTANT)
        );
        let narrow = PerturbationSpec::TruncatedRotated {
            sigma: 0.1,
            rhat: rhat * 0.9,
        };
        assert_eq!(expected_margin(&narrow, 3, 0.2, 0.2, 0.05, 1.0), None);
    }

    #[test]
    fn small_grid_passes() {
        let cfg: VerifyConfig = super::super::config::parse_json(
            r#"{"dim": 2, "samples": 20000, "seed": 4,
                "points": [{"perturbation": {"kind": "gaussian", "sigma": 0.1}, "r": 0.1},
                           {"perturbation": {"kind": "gaussian", "sigma": 0.1}, "r": 0.3, "diversity": false}]}"#,
        )
        .unwrap();
        let rep = verify(&cfg).unwrap();
        assert_eq!(rep.flagged, 0);
        assert!(rep.points[0].diversity_scaled.unwrap() > 0.0);
        assert!(rep.points[1].diversity.is_none());
    }

    #[test]
    fn bad_grid_point_pointer() {
        let cfg: VerifyConfig = super::super::config::parse_json(
            r#"{"dim": 2, "seed": 4, "points": [{"perturbation": {"kind": "gaussian", "sigma": 0.1}, "r": -1}]}"#,
        )
        .unwrap();
        match cfg.validate().unwrap_err() {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/points/0/r"),
            e => panic!("{e:?}"),
        }
    }
}
