//! Monte-Carlo certificates for the diversity and margin conditions, and the
//! good/auspicious round audit.
//!
//! Conditioning events of the form `w . e >= b` are sampled exactly when the
//! perturbation law makes `w . e` a one-dimensional (truncated) Gaussian
//! independent of the orthogonal part; otherwise by rejection with doubling
//! batches and an acceptance-rate floor.

use rand::Rng;
use serde::Serialize;

use crate::bandit::{Mode, ModelSpec, RegretTrace};
use crate::distributions::{
    gaussian_cdf, gaussian_sf, sample_standard_interval, sample_truncated_gaussian, standard_interval_mass,
    standard_normal, PerturbationSpec, Purpose, RngStream,
};
use crate::environment::{draw_perturbation, ArmIndex};
use crate::error::{Error, Result};
use crate::linalg::{rotation_to_first_axis, sym_eigen, RealVector, SymMatrix};

/// Rejection sampling gives up below this acceptance rate.
pub const ACCEPTANCE_FLOOR: f64 = 1e-6;
/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;
const DIVERSITY_BATCHES: usize = 32;
const MIN_ATTEMPTS_FOR_FLOOR: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact when available, rejection otherwise.
    Auto,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingUsed {
    Exact,
    Rejection,
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    /// Accepted samples required.
    pub samples: usize,
    pub seed: u64,
    pub method: Method,
}

impl McOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        McOptions {
            samples,
            seed,
            method: Method::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionParams {
    pub r: Option<f64>,
    pub b: f64,
    pub alpha: Option<f64>,
    pub sigma: f64,
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub lambda_hat: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub sample_count: usize,
    /// 99% normal-approximation half-width for whichever estimate is set.
    pub confidence_halfwidth: f64,
    /// Probability of the conditioning event (empirical under rejection).
    pub acceptance: f64,
    pub sampling: SamplingUsed,
    pub parameters: ConditionParams,
    /// Caller precondition `b <= r |beta_hat|` failed; reported, not rejected.
    pub precondition_violated: bool,
}

fn spec_params(spec: &PerturbationSpec, b: f64) -> ConditionParams {
    let rhat = match *spec {
        PerturbationSpec::TruncatedRotated { rhat, .. } => Some(rhat),
        _ => None,
    };
    ConditionParams {
        r: None,
        b,
        alpha: None,
        sigma: spec.sigma(),
        rhat,
    }
}

/// Samples `e` conditioned on `w . e >= b` for a perturbation whose
/// projection on `w` is independent of the orthogonal part.
struct ExactConditional {
    w_norm: f64,
    sigma: f64,
    /// Standardised interval for the first rotated coordinate.
    lo: f64,
    hi: f64,
    mass: f64,
    rhat: Option<f64>,
    rotation: crate::linalg::OrthonormalMatrix,
}

impl ExactConditional {
    /// `None` when the perturbation law does not factor along `w`, given the
    /// rotation reference `rot` of a truncated spec.
    fn new(spec: &PerturbationSpec, w: &RealVector, rot: &RealVector, b: f64) -> Result<Option<Self>> {
        let w_norm = w.norm();
        let (sigma, rhat) = match *spec {
            PerturbationSpec::Gaussian { sigma } if sigma > 0.0 => (sigma, None),
            PerturbationSpec::TruncatedRotated { sigma, rhat } => {
                let aligned = rot.norm() > 1e-12 && (rot.dot(w) / (rot.norm() * w_norm) - 1.0).abs() < 1e-12;
                if !aligned {
                    return Ok(None);
                }
                (sigma, Some(rhat))
            }
            _ => return Ok(None),
        };
        let rotation = rotation_to_first_axis(w)?;
        let mut lo = b / (w_norm * sigma);
        let hi = match rhat {
            Some(rh) => {
                lo = lo.max(-rh / sigma);
                rh / sigma
            }
            None => f64::INFINITY,
        };
        let full = match rhat {
            Some(rh) => standard_interval_mass(-rh / sigma, rh / sigma),
            None => 1.0,
        };
        let mass = if lo < hi {
            standard_interval_mass(lo, hi) / full
        } else {
            0.0
        };
        if !(mass > 0.0) {
            return Err(Error::DegenerateInterval { lo, hi, mass });
        }
        Ok(Some(ExactConditional {
            w_norm,
            sigma,
            lo,
            hi,
            mass,
            rhat,
            rotation,
        }))
    }

    /// Conditioned projection `w . e`.
    fn projection<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(self.w_norm * self.sigma * sample_standard_interval(self.lo, self.hi, rng)?)
    }

    fn vector<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<RealVector> {
        let mut z = Vec::with_capacity(dim);
        z.push(self.sigma * sample_standard_interval(self.lo, self.hi, rng)?);
        for _ in 1..dim {
            z.push(match self.rhat {
                Some(rh) => sample_truncated_gaussian(self.sigma, rh, rng),
                None => self.sigma * standard_normal(rng),
            });
        }
        RealVector::new(self.rotation.apply_transpose(&z))
    }
}

/// Runs `draw` until `samples` draws satisfy `accept`, doubling the batch
/// size. Fails once enough attempts show the rate is below the floor.
fn rejection_loop<R, F>(samples: usize, rng: &mut R, mut draw: F) -> Result<(u64, u64)>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Result<bool>,
{
    let mut accepted = 0u64;
    let mut attempts = 0u64;
    let mut batch = samples.max(1) as u64;
    while accepted < samples as u64 {
        for _ in 0..batch {
            attempts += 1;
            if draw(rng)? {
                accepted += 1;
                if accepted == samples as u64 {
                    break;
                }
            }
        }
        let rate = accepted as f64 / attempts as f64;
        if attempts >= MIN_ATTEMPTS_FOR_FLOOR && rate < ACCEPTANCE_FLOOR {
            return Err(Error::ExtremeConditioning {
                rate,
                floor: ACCEPTANCE_FLOOR,
            });
        }
        batch *= 2;
    }
    Ok((accepted, attempts))
}

struct MomentBatches {
    dim: usize,
    batches: Vec<SymMatrix>,
    counts: Vec<usize>,
    seen: usize,
}

impl MomentBatches {
    fn new(dim: usize) -> Self {
        MomentBatches {
            dim,
            batches: vec![SymMatrix::zeros(dim); DIVERSITY_BATCHES],
            counts: vec![0; DIVERSITY_BATCHES],
            seen: 0,
        }
    }

    fn push(&mut self, x: &[f64]) {
        let b = self.seen % DIVERSITY_BATCHES;
        self.batches[b].add_outer(x, 1.0);
        self.counts[b] += 1;
        self.seen += 1;
    }

    /// `(lambda_min, 99% half-width)` of the pooled second-moment matrix.
    /// The half-width uses batch means of `v^T M v` for the pooled minimum
    /// eigenvector `v`.
    fn finish(self) -> Result<(f64, f64)> {
        let mut total = SymMatrix::zeros(self.dim);
        for m in &self.batches {
            total = add_sym(&total, m);
        }
        total.scale(1.0 / self.seen as f64);
        let eig = sym_eigen(&total)?;
        let lambda = eig.min().max(0.0);
        let v = eig.vector(0);
        let used: Vec<f64> = self
            .batches
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(m, &c)| m.quad_form(&v) / c as f64)
            .collect();
        let nb = used.len() as f64;
        let halfwidth = if used.len() > 1 {
            let mean = used.iter().sum::<f64>() / nb;
            let var = used.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            Z99 * (var / nb).sqrt()
        } else {
            f64::INFINITY
        };
        Ok((lambda, halfwidth))
    }
}

fn add_sym(a: &SymMatrix, b: &SymMatrix) -> SymMatrix {
    let d = a.dim();
    let data = (0..d * d).map(|k| a.get(k / d, k % d) + b.get(k / d, k % d)).collect();
    SymMatrix::from_rows(d, data).expect("finite sums")
}

/// `lambda_min(E[x x^T | beta_hat . e >= b])` with `x = mu + e`. `b = -inf`
/// means no conditioning. Under the truncated-rotated spec the rotation is
/// built from `beta_hat`.
pub fn estimate_diversity(
    spec: &PerturbationSpec,
    beta_hat: &RealVector,
    mu: &RealVector,
    b: f64,
    r: Option<f64>,
    opts: McOptions,
) -> Result<ConditionReport> {
    if beta_hat.dim() != mu.dim() {
        return Err(Error::invalid("beta_hat and mu dimensions differ"));
    }
    if opts.samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let d = mu.dim();
    let mut rng = RngStream::new(opts.seed, 0, 0, Purpose::Diversity).rng();
    let mut moments = MomentBatches::new(d);
    let conditioned = b > f64::NEG_INFINITY && !beta_hat.is_zero();
    if b > f64::NEG_INFINITY && beta_hat.is_zero() && b > 0.0 {
        return Err(Error::DegenerateInterval {
            lo: b,
            hi: f64::INFINITY,
            mass: 0.0,
        });
    }
    let exact = if conditioned && opts.method == Method::Auto {
        ExactConditional::new(spec, beta_hat, beta_hat, b)?
    } else {
        None
    };
    let (acceptance, sampling) = if let Some(ex) = exact {
        for _ in 0..opts.samples {
            let e = ex.vector(d, &mut rng)?;
            moments.push(mu.add(&e).as_slice());
        }
        (ex.mass, SamplingUsed::Exact)
    } else {
        let (acc, att) = rejection_loop(opts.samples, &mut rng, |rng| {
            let e = draw_perturbation(spec, d, beta_hat, rng)?;
            if conditioned && beta_hat.dot(&e) < b {
                return Ok(false);
            }
            moments.push(mu.add(&e).as_slice());
            Ok(true)
        })?;
        (acc as f64 / att as f64, SamplingUsed::Rejection)
    };
    let (lambda, halfwidth) = moments.finish()?;
    let mut parameters = spec_params(spec, b);
    parameters.r = r;
    Ok(ConditionReport {
        lambda_hat: Some(lambda),
        gamma_hat: None,
        sample_count: opts.samples,
        confidence_halfwidth: halfwidth,
        acceptance,
        sampling,
        parameters,
        precondition_violated: r.is_some_and(|r| b > r * beta_hat.norm() + 1e-12),
    })
}

/// `P(beta . e > b + alpha |beta| | beta . e >= b)`. `rotation_from` sets the
/// rotation reference of a truncated-rotated spec and defaults to `beta`.
pub fn estimate_margin(
    spec: &PerturbationSpec,
    beta: &RealVector,
    b: f64,
    alpha: f64,
    rotation_from: Option<&RealVector>,
    opts: McOptions,
) -> Result<ConditionReport> {
    if beta.is_zero() {
        return Err(Error::invalid("margin needs a nonzero beta"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be >= 0"));
    }
    if opts.samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let d = beta.dim();
    let rot = rotation_from.unwrap_or(beta);
    if rot.dim() != d {
        return Err(Error::invalid("rotation reference has the wrong dimension"));
    }
    let threshold = b + alpha * beta.norm();
    let mut rng = RngStream::new(opts.seed, 0, 0, Purpose::Margin).rng();
    let exact = if opts.method == Method::Auto {
        ExactConditional::new(spec, beta, rot, b)?
    } else {
        None
    };
    let mut hits = 0u64;
    let (acceptance, sampling) = if let Some(ex) = exact {
        for _ in 0..opts.samples {
            if ex.projection(&mut rng)? > threshold {
                hits += 1;
            }
        }
        (ex.mass, SamplingUsed::Exact)
    } else {
        let (acc, att) = rejection_loop(opts.samples, &mut rng, |rng| {
            let e = draw_perturbation(spec, d, rot, rng)?;
            let p = beta.dot(&e);
            if p < b {
                return Ok(false);
            }
            if p > threshold {
                hits += 1;
            }
            Ok(true)
        })?;
        (acc as f64 / att as f64, SamplingUsed::Rejection)
    };
    let n = opts.samples as f64;
    let gamma = hits as f64 / n;
    let mut parameters = spec_params(spec, b);
    parameters.alpha = Some(alpha);
    Ok(ConditionReport {
        lambda_hat: None,
        gamma_hat: Some(gamma),
        sample_count: opts.samples,
        confidence_halfwidth: binomial_halfwidth(gamma, n),
        acceptance,
        sampling,
        parameters,
        precondition_violated: false,
    })
}

/// 99% normal-approximation half-width with continuity correction.
pub fn binomial_halfwidth(p: f64, n: f64) -> f64 {
    Z99 * (p * (1.0 - p) / n).sqrt() + 0.5 / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TransferBound {
    /// Margin constant carried over to the nearby distribution.
    Applies {
        gamma: f64,
    },
    NotApplicable {
        reason: &'static str,
    },
}

/// Margins transfer with constant `gamma / 4` to any distribution within
/// total-variation distance `theta <= floor / 2`, where `floor` lower-bounds
/// `P(beta . e > r + alpha |beta|)` over `beta`.
pub fn margin_tv_transfer_bound(gamma: f64, theta: f64, floor: f64) -> Result<TransferBound> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&floor) || !(theta >= 0.0) {
        return Err(Error::invalid("gamma and floor must be probabilities, theta >= 0"));
    }
    if theta > floor / 2.0 {
        return Ok(TransferBound::NotApplicable {
            reason: "total-variation distance exceeds half the tail floor",
        });
    }
    Ok(TransferBound::Applies { gamma: gamma / 4.0 })
}

/// Perturbation model used when the audit resamples a round.
#[derive(Debug, Clone)]
pub struct AuditSpec<'a> {
    pub model: &'a ModelSpec,
    pub perturbation: PerturbationSpec,
    pub r: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArmAudit {
    /// Rounds the arm was pulled (or was optimal, for the true-parameter audit).
    pub rounds: usize,
    pub non_auspicious: usize,
    /// Rounds whose estimate lies within its 99% half-width of 1/2.
    pub borderline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub r: f64,
    pub resamples: usize,
    /// Rounds grouped by pulled arm, thresholds from the estimates.
    pub chosen: Vec<ArmAudit>,
    /// Multi mode only: rounds grouped by optimal arm, thresholds from the
    /// true parameters.
    pub optimal: Option<Vec<ArmAudit>>,
}

impl AuditReport {
    /// `2 + sqrt(ln(k / delta) / 2)`.
    pub fn count_bound(arms: usize, delta: f64) -> f64 {
        2.0 + (0.5 * (arms as f64 / delta).ln()).sqrt()
    }
}

/// Law of `w . e` for one arm's perturbation, with `e` rotated by `rot`.
enum Projection {
    /// Deterministic zero.
    Zero,
    Gaussian {
        sd: f64,
    },
    Truncated {
        scale: f64,
        lim: f64,
    },
    /// No closed form; resample the whole vector.
    Sampled,
}

impl Projection {
    fn of(spec: &PerturbationSpec, w: &RealVector, rot: &RealVector) -> Projection {
        let wn = w.norm();
        match *spec {
            PerturbationSpec::None => Projection::Zero,
            _ if wn == 0.0 => Projection::Zero,
            PerturbationSpec::Gaussian { sigma: 0.0 } => Projection::Zero,
            PerturbationSpec::Gaussian { sigma } => Projection::Gaussian { sd: sigma * wn },
            PerturbationSpec::TruncatedRotated { sigma, rhat } => {
                let rn = rot.norm();
                let aligned = rn > 1e-12 && (rot.dot(w) / (rn * wn) - 1.0).abs() < 1e-12;
                if aligned {
                    Projection::Truncated {
                        scale: sigma * wn,
                        lim: rhat / sigma,
                    }
                } else {
                    Projection::Sampled
                }
            }
        }
    }

    /// `P(w . e > c)`, or `None` when it has to be sampled.
    fn tail(&self, c: f64) -> Option<f64> {
        match *self {
            Projection::Zero => Some(if 0.0 > c { 1.0 } else { 0.0 }),
            Projection::Gaussian { sd } => Some(gaussian_sf(c / sd)),
            Projection::Truncated { scale, lim } => {
                let lo = (c / scale).max(-lim);
                if lo >= lim {
                    return Some(0.0);
                }
                Some(standard_interval_mass(lo, lim) / standard_interval_mass(-lim, lim))
            }
            Projection::Sampled => None,
        }
    }
}

/// Estimated `P(threshold <= limit | arm wins)` for one round. The winning
/// arm's own perturbation is integrated out in closed form where possible.
#[allow(clippy::too_many_arguments)]
fn good_given_win<R: Rng + ?Sized>(
    arm: usize,
    weights: &[&RealVector],
    rotations: &[&RealVector],
    means: &[RealVector],
    spec: &PerturbationSpec,
    r: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<Option<(f64, f64)>> {
    let k = means.len();
    let d = means[0].dim();
    if k == 1 {
        return Ok(Some((1.0, 0.0)));
    }
    let w_i = weights[arm];
    let limit = w_i.dot(&means[arm]) + r * w_i.norm();
    let proj = Projection::of(spec, w_i, rotations[arm]);
    let (mut sw, mut sw2, mut sgood) = (0.0, 0.0, 0.0);
    let reps = if matches!(spec, PerturbationSpec::None) {
        1
    } else {
        resamples
    };
    for _ in 0..reps {
        let mut chi = f64::NEG_INFINITY;
        let mut chi_arg = 0;
        for j in (0..k).filter(|&j| j != arm) {
            let e = draw_perturbation(spec, d, rotations[j], rng)?;
            let v = weights[j].dot(&means[j].add(&e));
            if v > chi {
                chi = v;
                chi_arg = j;
            }
        }
        let base = w_i.dot(&means[arm]);
        // Ties go to the lower index.
        let c = chi - base;
        let weight = match proj.tail(c) {
            Some(p) => {
                if c == 0.0 && matches!(proj, Projection::Zero) && arm < chi_arg {
                    1.0
                } else {
                    p
                }
            }
            None => {
                let e = draw_perturbation(spec, d, rotations[arm], rng)?;
                let v = w_i.dot(&e);
                if v > c || (v == c && arm < chi_arg) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        sw += weight;
        sw2 += weight * weight;
        if chi <= limit {
            sgood += weight;
        }
    }
    if sw == 0.0 {
        return Ok(None);
    }
    let p = sgood / sw;
    let ess = sw * sw / sw2;
    Ok(Some((p, binomial_halfwidth(p, ess))))
}

fn tally(entry: &mut ArmAudit, est: Option<(f64, f64)>) {
    entry.rounds += 1;
    match est {
        Some((p, hw)) => {
            if p < 0.5 {
                entry.non_auspicious += 1;
            }
            if (p - 0.5).abs() <= hw {
                entry.borderline += 1;
            }
        }
        None => entry.non_auspicious += 1,
    }
}

/// Classifies every round of a trace as auspicious or not for the arm that
/// was pulled, by resampling the other arms' perturbations with the recorded
/// estimates and means held fixed. Multi-mode traces also get the analogue
/// with true parameters, grouped by optimal arm. An empty competitor set
/// makes every round good.
pub fn audit_auspicious(trace: &RegretTrace, spec: &AuditSpec<'_>) -> Result<AuditReport> {
    let audit = trace
        .audit
        .as_ref()
        .ok_or_else(|| Error::invalid("trace was recorded without audit data"))?;
    let k = trace.arms;
    let mut chosen = vec![ArmAudit::default(); k];
    let mut optimal = (trace.mode == Mode::Multi).then(|| vec![ArmAudit::default(); k]);
    let betas: Vec<&RealVector> = (0..k).map(|i| spec.model.beta(ArmIndex(i))).collect();

    for (row, round) in trace.rows.iter().zip(audit) {
        let est: Vec<&RealVector> = round.estimates.iter().collect();
        let i = row.chosen.get();
        let mut rng = RngStream::new(spec.seed, row.round as u64, i as u32, Purpose::Audit).rng();
        let p = if est[i].is_zero() {
            Some((1.0, 0.0))
        } else {
            good_given_win(
                i,
                &est,
                &est,
                &round.means,
                &spec.perturbation,
                spec.r,
                spec.resamples,
                &mut rng,
            )?
        };
        tally(&mut chosen[i], p);

        if let Some(opt) = optimal.as_mut() {
            let o = row.optimal.get();
            let mut rng = RngStream::new(spec.seed, row.round as u64, (k + o) as u32, Purpose::Audit).rng();
            let p = good_given_win(
                o,
                &betas,
                &est,
                &round.means,
                &spec.perturbation,
                spec.r,
                spec.resamples,
                &mut rng,
            )?;
            tally(&mut opt[o], p);
        }
    }
    Ok(AuditReport {
        r: spec.r,
        resamples: spec.resamples,
        chosen,
        optimal,
    })
}

/// Closed-form `P(beta . e > b + alpha | beta . e >= b)` for a
/// one-dimensional Gaussian of scale `sigma` (with `|beta| = 1`).
pub fn gaussian_margin_exact(b: f64, alpha: f64, sigma: f64) -> f64 {
    gaussian_sf((b + alpha) / sigma) / gaussian_sf(b / sigma)
}

/// `Phi(x)` re-exported for callers computing audit oracles.
pub fn standard_cdf(x: f64) -> f64 {
    gaussian_cdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{simulate_episode, EpisodeOptions, EpisodeSpec, WarmStartSpec};
    use crate::distributions::{truncated_mean, truncated_variance};
    use crate::environment::AdversarySpec;

    fn v(x: &[f64]) -> RealVector {
        RealVector::new(x.to_vec()).unwrap()
    }

    fn opts(samples: usize, seed: u64) -> McOptions {
        McOptions::new(samples, seed)
    }

    #[test]
    fn unconditioned_diversity_is_sigma_squared() {
        let spec = PerturbationSpec::Gaussian { sigma: 0.3 };
        let rep = estimate_diversity(
            &spec,
            &v(&[1.0, 0.0, 0.0]),
            &v(&[0.5, 0.5, 0.0]),
            f64::NEG_INFINITY,
            None,
            opts(200_000, 1),
        )
        .unwrap();
        let l = rep.lambda_hat.unwrap();
        assert!(l >= 0.09 - 3.0 * rep.confidence_halfwidth, "{l}");
        assert!((l - 0.09).abs() < 0.003, "{l}");
    }

    #[test]
    fn one_dim_diversity_matches_closed_form() {
        let sigma = 0.5;
        for bs in [-1.0, 0.0, 1.0, 2.0] {
            let b = bs * sigma;
            let rep = estimate_diversity(
                &PerturbationSpec::Gaussian { sigma },
                &v(&[1.0]),
                &v(&[0.0]),
                b,
                None,
                opts(200_000, 3),
            )
            .unwrap();
            let m = truncated_mean(b, f64::INFINITY, sigma).unwrap();
            let oracle = truncated_variance(b, f64::INFINITY, sigma).unwrap() + m * m;
            let l = rep.lambda_hat.unwrap();
            assert!((l / oracle - 1.0).abs() < 0.02, "b/sigma={bs}: {l} vs {oracle}");
        }
    }

    #[test]
    fn diversity_exact_and_rejection_agree() {
        let spec = PerturbationSpec::TruncatedRotated { sigma: 0.2, rhat: 0.5 };
        let bh = v(&[0.6, -0.3, 0.2]);
        let mu = v(&[0.2, 0.1, -0.4]);
        let b = 0.05;
        let ex = estimate_diversity(&spec, &bh, &mu, b, None, opts(100_000, 5)).unwrap();
        let mut o = opts(100_000, 6);
        o.method = Method::Rejection;
        let rj = estimate_diversity(&spec, &bh, &mu, b, None, o).unwrap();
        assert_eq!(ex.sampling, SamplingUsed::Exact);
        assert_eq!(rj.sampling, SamplingUsed::Rejection);
        let tol = ex.confidence_halfwidth + rj.confidence_halfwidth;
        assert!((ex.lambda_hat.unwrap() - rj.lambda_hat.unwrap()).abs() < tol);
        assert!((ex.acceptance - rj.acceptance).abs() < 0.01);
    }

    #[test]
    fn diversity_scale_invariance() {
        let spec = PerturbationSpec::Gaussian { sigma: 0.2 };
        let bh = v(&[0.3, 0.4]);
        let mu = v(&[0.1, 0.2]);
        let a = estimate_diversity(&spec, &bh, &mu, 0.05, None, opts(100_000, 8)).unwrap();
        let b = estimate_diversity(&spec, &bh.scaled(7.0), &mu, 0.35, None, opts(100_000, 9)).unwrap();
        let tol = a.confidence_halfwidth + b.confidence_halfwidth;
        assert!((a.lambda_hat.unwrap() - b.lambda_hat.unwrap()).abs() < tol);
    }

    #[test]
    fn rejection_hits_floor() {
        let mut o = opts(10, 1);
        o.method = Method::Rejection;
        let err = estimate_margin(
            &PerturbationSpec::Gaussian { sigma: 1.0 },
            &v(&[1.0]),
            6.0,
            0.1,
            None,
            o,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ExtremeConditioning { .. }));
    }

    #[test]
    fn precondition_is_reported() {
        let spec = PerturbationSpec::Gaussian { sigma: 0.2 };
        let rep = estimate_diversity(&spec, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), 0.5, Some(0.1), opts(1_000, 1)).unwrap();
        assert!(rep.precondition_violated);
    }

    #[test]
    fn zero_alpha_margin_is_one() {
        let rep = estimate_margin(
            &PerturbationSpec::Gaussian { sigma: 0.1 },
            &v(&[0.3, 0.4]),
            0.02,
            0.0,
            None,
            opts(10_000, 2),
        )
        .unwrap();
        assert_eq!(rep.gamma_hat, Some(1.0));
    }

    #[test]
    fn one_dim_margin_matches_closed_form() {
        let sigma = 0.2;
        for (b, alpha) in [(0.0, 0.1), (0.2, 0.2), (-0.1, 0.05)] {
            let rep = estimate_margin(
                &PerturbationSpec::Gaussian { sigma },
                &v(&[1.0]),
                b,
                alpha,
                None,
                opts(200_000, 4),
            )
            .unwrap();
            let exact = gaussian_margin_exact(b, alpha, sigma);
            assert!(
                (rep.gamma_hat.unwrap() - exact).abs() <= rep.confidence_halfwidth,
                "{b} {alpha}"
            );
        }
    }

    #[test]
    fn margin_rotation_invariance_for_gaussian() {
        let spec = PerturbationSpec::Gaussian { sigma: 0.3 };
        let beta = v(&[0.5, 0.2, -0.1]);
        let q = rotation_to_first_axis(&v(&[0.1, 0.9, 0.4])).unwrap();
        let rotated = v(&q.apply(beta.as_slice()));
        let mut o = opts(100_000, 12);
        o.method = Method::Rejection;
        let a = estimate_margin(&spec, &beta, 0.1, 0.05, None, o).unwrap();
        let mut o2 = opts(100_000, 13);
        o2.method = Method::Rejection;
        let b = estimate_margin(&spec, &rotated, 0.1, 0.05, None, o2).unwrap();
        let tol = a.confidence_halfwidth + b.confidence_halfwidth;
        assert!((a.gamma_hat.unwrap() - b.gamma_hat.unwrap()).abs() < tol);
    }

    #[test]
    fn gaussian_margin_non_increasing_in_b() {
        let sigma = 1.0;
        let alpha = 0.5;
        let mut prev: Option<ConditionReport> = None;
        for k in -4..=4 {
            let b = k as f64 * 0.5 * sigma;
            let rep = estimate_margin(
                &PerturbationSpec::Gaussian { sigma },
                &v(&[1.0]),
                b,
                alpha,
                None,
                opts(100_000, (30 + k) as u64),
            )
            .unwrap();
            if let Some(p) = &prev {
                let slack = p.confidence_halfwidth + rep.confidence_halfwidth;
                assert!(rep.gamma_hat.unwrap() <= p.gamma_hat.unwrap() + slack);
            }
            prev = Some(rep);
        }
    }

    #[test]
    fn transfer_bound_cases() {
        assert_eq!(
            margin_tv_transfer_bound(0.05, 0.001, 0.01).unwrap(),
            TransferBound::Applies { gamma: 0.0125 }
        );
        assert_eq!(
            margin_tv_transfer_bound(0.05, 0.0, 0.01).unwrap(),
            TransferBound::Applies { gamma: 0.0125 }
        );
        assert!(matches!(
            margin_tv_transfer_bound(0.05, 0.2, 0.01).unwrap(),
            TransferBound::NotApplicable { .. }
        ));
        assert!(margin_tv_transfer_bound(1.5, 0.0, 0.01).is_err());
    }

    fn audit_episode(k: usize, means: Vec<Vec<f64>>, sigma: f64, horizon: usize) -> (EpisodeSpec, RegretTrace) {
        let d = means[0].len();
        let beta: Vec<f64> = (0..d).map(|i| if i == 0 { 0.8 } else { 0.0 }).collect();
        let spec = EpisodeSpec {
            model: ModelSpec::new(Mode::Single, d, k, vec![v(&beta)], 1.0).unwrap(),
            adversary: AdversarySpec::FixedMeans { means },
            perturbation: PerturbationSpec::Gaussian { sigma },
            warm_start: WarmStartSpec::none(),
            horizon,
        };
        let trace = simulate_episode(&spec, 1, EpisodeOptions { keep_audit: true }).unwrap();
        (spec, trace)
    }

    #[test]
    fn single_arm_rounds_are_auspicious() {
        let (spec, trace) = audit_episode(1, vec![vec![0.5, 0.0]], 0.1, 50);
        let a = AuditSpec {
            model: &spec.model,
            perturbation: spec.perturbation,
            r: 0.0,
            resamples: 10,
            seed: 0,
        };
        let rep = audit_auspicious(&trace, &a).unwrap();
        assert_eq!(rep.chosen[0].rounds, 50);
        assert_eq!(rep.chosen[0].non_auspicious, 0);
    }

    #[test]
    fn symmetric_two_arm_good_probability_matches_closed_form() {
        // Equal one-dimensional means and a shared estimate: conditioned on arm
        // 1 winning, chi is the smaller of two iid normals.
        let sigma = 0.2;
        let w = v(&[1.0]);
        let means = vec![v(&[0.3]), v(&[0.3])];
        for r in [-0.2, 0.0, 0.1, 0.3] {
            let mut rng = RngStream::new(7, 0, 0, Purpose::Audit).rng();
            let (p, hw) = good_given_win(
                0,
                &[&w, &w],
                &[&w, &w],
                &means,
                &PerturbationSpec::Gaussian { sigma },
                r,
                200_000,
                &mut rng,
            )
            .unwrap()
            .unwrap();
            // P(e2 <= r, e1 > e2) / P(e1 > e2) = 2 * int_{-inf}^{r} phi(u)(1 - Phi(u)) du
            //                                  = 1 - (1 - Phi(r/sigma))^2.
            let exact = 1.0 - (1.0 - standard_cdf(r / sigma)).powi(2);
            assert!((p - exact).abs() <= hw.max(1e-3), "r={r}: {p} vs {exact}");
        }
    }

    #[test]
    fn audit_counts_cover_every_round() {
        let means = vec![vec![0.5, 0.1], vec![0.45, -0.2], vec![-0.3, 0.3]];
        let (spec, trace) = audit_episode(3, means, 0.1, 200);
        let a = AuditSpec {
            model: &spec.model,
            perturbation: spec.perturbation,
            r: 0.1 * (2.0 * 200f64.ln()).sqrt(),
            resamples: 200,
            seed: 3,
        };
        let rep = audit_auspicious(&trace, &a).unwrap();
        assert_eq!(rep.chosen.iter().map(|c| c.rounds).sum::<usize>(), 200);
        assert!(rep.optimal.is_none());
        let again = audit_auspicious(&trace, &a).unwrap();
        assert_eq!(rep, again);
    }
}
