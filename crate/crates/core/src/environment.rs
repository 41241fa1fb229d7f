//! Adversaries and the perturbation layer.
//!
//! An adversary maps the history so far to one mean context per arm, each in
//! the unit ball. The perturbation layer then adds independent noise to each
//! mean, keyed per `(round, arm)` so replaying a round with a different pull
//! order reproduces the same draws.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_gaussian_vector, sample_truncated_gaussian, PerturbationSpec, Purpose, RngStream};
use crate::error::{Error, Result};
use crate::linalg::{rotation_to_first_axis, RealVector};

/// Slack allowed on the unit-ball constraint for adversary means.
pub const MEAN_NORM_SLACK: f64 = 1e-12;

/// Zero-based arm index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ArmIndex(pub usize);

impl ArmIndex {
    pub fn get(self) -> usize {
        self.0
    }

    /// One-based label used in reports.
    pub fn label(self) -> usize {
        self.0 + 1
    }
}

/// Means chosen by the adversary for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryChoice {
    means: Vec<RealVector>,
}

impl AdversaryChoice {
    pub fn new(means: Vec<RealVector>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::ContractViolation("adversary returned no arms".into()));
        }
        let d = means[0].dim();
        for (i, m) in means.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::ContractViolation(format!(
                    "mean for arm {} has dimension {}, expected {d}",
                    i + 1,
                    m.dim()
                )));
            }
            let norm = m.norm();
            if norm > 1.0 + MEAN_NORM_SLACK {
                return Err(Error::ContractViolation(format!(
                    "mean for arm {} has norm {norm} > 1",
                    i + 1
                )));
            }
        }
        Ok(AdversaryChoice { means })
    }

    pub fn means(&self) -> &[RealVector] {
        &self.means
    }

    pub fn arms(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].dim()
    }
}

/// Perturbed contexts for one round: `contexts[i] = means[i] + perturbations[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundContexts {
    pub choice: AdversaryChoice,
    pub perturbations: Vec<RealVector>,
    pub contexts: Vec<RealVector>,
}

impl RoundContexts {
    pub fn means(&self) -> &[RealVector] {
        self.choice.means()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub contexts: RoundContexts,
    pub chosen: ArmIndex,
    pub reward: f64,
}

/// Append-only transcript of play.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<HistoryRecord>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: HistoryRecord) -> Result<()> {
        let k = record.contexts.contexts.len();
        if record.chosen.get() >= k {
            return Err(Error::ContractViolation(format!(
                "chosen arm {} outside 1..={k}",
                record.chosen.label()
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn last_chosen(&self) -> Option<ArmIndex> {
        self.records.last().map(|r| r.chosen)
    }
}

/// Mean lists as they appear in config files: one `Vec<f64>` per arm.
pub type MeanTable = Vec<Vec<f64>>;

/// One row of a scripted adversary. `after_arm` keys are one-based arm labels
/// and override `default` when that arm was chosen in the previous round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRow {
    pub default: MeanTable,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub after_arm: BTreeMap<usize, MeanTable>,
}

/// Built-in adversaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawAdversary")]
pub enum AdversarySpec {
    FixedMeans {
        means: MeanTable,
    },
    /// One-dimensional two-arm instance with means `1` and `1 - 1/sqrt(n)`.
    LowerBound1 {
        n: usize,
    },
    /// One-dimensional two-arm instance with both means equal to 1.
    LowerBound2,
    /// Round `t` uses `rows[(t - 1) % rows.len()]`.
    ScriptedAdaptive {
        rows: Vec<ScriptRow>,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum AdversaryKind {
    FixedMeans,
    LowerBound1,
    LowerBound2,
    ScriptedAdaptive,
}

/// Flat wire form; see the perturbation spec for why.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdversary {
    kind: AdversaryKind,
    means: Option<MeanTable>,
    n: Option<usize>,
    rows: Option<Vec<ScriptRow>>,
}

impl TryFrom<RawAdversary> for AdversarySpec {
    type Error = String;

    fn try_from(raw: RawAdversary) -> std::result::Result<Self, String> {
        let present = [
            ("means", raw.means.is_some()),
            ("n", raw.n.is_some()),
            ("rows", raw.rows.is_some()),
        ];
        let allowed: &[&str] = match raw.kind {
            AdversaryKind::FixedMeans => &["means"],
            AdversaryKind::LowerBound1 => &["n"],
            AdversaryKind::LowerBound2 => &[],
            AdversaryKind::ScriptedAdaptive => &["rows"],
        };
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(format!("field `{name}` does not apply to this adversary kind"));
            }
            if !set && allowed.contains(&name) {
                return Err(format!("missing field `{name}`"));
            }
        }
        Ok(match raw.kind {
            AdversaryKind::FixedMeans => AdversarySpec::FixedMeans {
                means: raw.means.unwrap(),
            },
            AdversaryKind::LowerBound1 => AdversarySpec::LowerBound1 { n: raw.n.unwrap() },
            AdversaryKind::LowerBound2 => AdversarySpec::LowerBound2,
            AdversaryKind::ScriptedAdaptive => AdversarySpec::ScriptedAdaptive {
                rows: raw.rows.unwrap(),
            },
        })
    }
}

fn to_vectors(table: &MeanTable) -> Result<Vec<RealVector>> {
    table
        .iter()
        .map(|m| RealVector::new(m.clone()).map_err(|e| Error::ContractViolation(e.to_string())))
        .collect()
}

impl AdversarySpec {
    /// Number of arms this adversary emits, when fixed by its kind.
    pub fn arms(&self) -> Option<usize> {
        match self {
            AdversarySpec::FixedMeans { means } => Some(means.len()),
            AdversarySpec::LowerBound1 { .. } | AdversarySpec::LowerBound2 => Some(2),
            AdversarySpec::ScriptedAdaptive { rows } => rows.first().map(|r| r.default.len()),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            AdversarySpec::FixedMeans { means } => means.first().map(Vec::len),
            AdversarySpec::LowerBound1 { .. } | AdversarySpec::LowerBound2 => Some(1),
            AdversarySpec::ScriptedAdaptive { rows } => rows.first().and_then(|r| r.default.first()).map(Vec::len),
        }
    }
}

/// Means for the next round given the history so far. Emitting a mean
/// outside the unit ball is a contract violation.
pub fn adversary_next(
    adv: &AdversarySpec,
    history: &History,
    _estimates: Option<&[RealVector]>,
) -> Result<AdversaryChoice> {
    let means = match adv {
        AdversarySpec::FixedMeans { means } => to_vectors(means)?,
        AdversarySpec::LowerBound1 { n } => {
            if *n == 0 {
                return Err(Error::ContractViolation(
                    "lower-bound instance size must be >= 1".into(),
                ));
            }
            let gap = 1.0 / (*n as f64).sqrt();
            vec![
                RealVector::from_vec_unchecked(vec![1.0]),
                RealVector::from_vec_unchecked(vec![1.0 - gap]),
            ]
        }
        AdversarySpec::LowerBound2 => vec![
            RealVector::from_vec_unchecked(vec![1.0]),
            RealVector::from_vec_unchecked(vec![1.0]),
        ],
        AdversarySpec::ScriptedAdaptive { rows } => {
            if rows.is_empty() {
                return Err(Error::ContractViolation("scripted adversary has no rows".into()));
            }
            let row = &rows[history.len() % rows.len()];
            let table = history
                .last_chosen()
                .and_then(|a| row.after_arm.get(&a.label()))
                .unwrap_or(&row.default);
            to_vectors(table)?
        }
    };
    AdversaryChoice::new(means)
}

/// `sigma = sqrt(1 / (100 n ln(rho / 100)))`, the perturbation scale of the
/// warm-start lower-bound instance.
pub fn lower_bound1_sigma(n: usize, rho: usize) -> Result<f64> {
    let l = (rho as f64 / 100.0).ln();
    if n == 0 || !(l > 0.0) {
        return Err(Error::invalid(format!(
            "lower-bound sigma needs n >= 1 and rho > 100 (n={n}, rho={rho})"
        )));
    }
    Ok((1.0 / (100.0 * n as f64 * l)).sqrt())
}

/// Draws one arm's perturbation. For the truncated-rotated family the
/// coordinates are truncated in the basis `Q` with `Q estimate = (|estimate|, 0, ...)`
/// and mapped back with `Q^{-1}`.
pub fn draw_perturbation<R: Rng + ?Sized>(
    spec: &PerturbationSpec,
    dim: usize,
    estimate: &RealVector,
    rng: &mut R,
) -> Result<RealVector> {
    match *spec {
        PerturbationSpec::None => Ok(RealVector::zeros(dim)),
        PerturbationSpec::Gaussian { sigma } => Ok(sample_gaussian_vector(dim, sigma, rng)),
        PerturbationSpec::TruncatedRotated { sigma, rhat } => {
            let z: Vec<f64> = (0..dim).map(|_| sample_truncated_gaussian(sigma, rhat, rng)).collect();
            if estimate.norm() < 1e-12 {
                return Ok(RealVector::from_vec_unchecked(z));
            }
            let q = rotation_to_first_axis(estimate)?;
            Ok(RealVector::from_vec_unchecked(q.apply_transpose(&z)))
        }
    }
}

/// Stream coordinates for one round of perturbations.
#[derive(Debug, Clone, Copy)]
pub struct RoundKey {
    pub seed: u64,
    pub round: u64,
    pub purpose: Purpose,
}

/// Adds per-arm perturbations to the adversary's means. `estimates` holds
/// one estimate per arm (single-parameter callers repeat the shared one).
pub fn perturb_round(
    choice: AdversaryChoice,
    spec: &PerturbationSpec,
    estimates: &[RealVector],
    key: RoundKey,
) -> Result<RoundContexts> {
    let k = choice.arms();
    let d = choice.dim();
    if estimates.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} estimates, got {}",
            estimates.len()
        )));
    }
    let mut perturbations = Vec::with_capacity(k);
    let mut contexts = Vec::with_capacity(k);
    for (i, (mean, est)) in choice.means().iter().zip(estimates).enumerate() {
        let mut rng = RngStream::new(key.seed, key.round, i as u32, key.purpose).rng();
        let e = draw_perturbation(spec, d, est, &mut rng)?;
        contexts.push(mean.add(&e));
        perturbations.push(e);
    }
    Ok(RoundContexts {
        choice,
        perturbations,
        contexts,
    })
}

/// Union bound `2 T k d exp(-rhat^2 / (2 sigma^2))` on the chance that any
/// Gaussian coordinate over the horizon leaves `[-rhat, rhat]`.
pub fn mixture_weight_check(sigma: f64, rhat: f64, horizon: usize, arms: usize, dim: usize) -> Result<f64> {
    if !(sigma > 0.0 && rhat > 0.0) || horizon == 0 || arms == 0 || dim == 0 {
        return Err(Error::invalid("mixture bound needs positive arguments"));
    }
    let count = 2.0 * horizon as f64 * arms as f64 * dim as f64;
    Ok(count * (-(rhat * rhat) / (2.0 * sigma * sigma)).exp())
}
