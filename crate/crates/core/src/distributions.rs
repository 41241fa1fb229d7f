//! Seeded sampling and Gaussian analytics.
//!
//! Randomness is organised as counter-keyed streams: every draw is a pure
//! function of `(experiment seed, round, arm, purpose)`, so the noise seen by
//! one arm never depends on which arms were pulled before it.
//!
//! The analytic helpers here (CDF, hazard-rate brackets, truncated moments)
//! double as ground truth for the Monte-Carlo estimators elsewhere in the
//! crate.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealVector;

/// What a random stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Perturbation,
    Reward,
    WarmStartPerturbation,
    WarmStartReward,
    Diversity,
    Margin,
    Audit,
    Sampler,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Perturbation => 1,
            Purpose::Reward => 2,
            Purpose::WarmStartPerturbation => 3,
            Purpose::WarmStartReward => 4,
            Purpose::Diversity => 5,
            Purpose::Margin => 6,
            Purpose::Audit => 7,
            Purpose::Sampler => 8,
        }
    }
}

/// Key of a deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub round: u64,
    pub arm: u32,
    pub purpose: Purpose,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, round: u64, arm: u32, purpose: Purpose) -> Self {
        RngStream {
            seed,
            round,
            arm,
            purpose,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let h0 = splitmix64(self.seed ^ 0x5851_F42D_4C95_7F2D);
        let h1 = splitmix64(h0 ^ self.round);
        let h2 = splitmix64(h1 ^ ((self.arm as u64) << 8 | self.purpose.tag()));
        let mut key = [0u8; 32];
        for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
            let w = splitmix64(h2.wrapping_add((i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)));
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Perturbation family applied to adversary means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawPerturbation")]
pub enum PerturbationSpec {
    None,
    Gaussian {
        sigma: f64,
    },
    /// Coordinates truncated to `[-rhat, rhat]` in a basis whose first axis
    /// is aligned with the current estimate.
    TruncatedRotated {
        sigma: f64,
        rhat: f64,
    },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum PerturbationKind {
    None,
    Gaussian,
    TruncatedRotated,
}

/// Flat wire form. Deserialising through a plain struct keeps field paths
/// visible to error reporting, which an internally tagged enum hides.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    kind: PerturbationKind,
    sigma: Option<f64>,
    rhat: Option<f64>,
}

impl TryFrom<RawPerturbation> for PerturbationSpec {
    type Error = String;

    fn try_from(raw: RawPerturbation) -> std::result::Result<Self, String> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("missing field `{name}`"));
        let reject = |v: Option<f64>, name: &str, kind: &str| match v {
            Some(_) => Err(format!("field `{name}` does not apply to kind `{kind}`")),
            None => Ok(()),
        };
        match raw.kind {
            PerturbationKind::None => {
                reject(raw.sigma, "sigma", "none")?;
                reject(raw.rhat, "rhat", "none")?;
                Ok(PerturbationSpec::None)
            }
            PerturbationKind::Gaussian => {
                reject(raw.rhat, "rhat", "gaussian")?;
                Ok(PerturbationSpec::Gaussian {
                    sigma: need(raw.sigma, "sigma")?,
                })
            }
            PerturbationKind::TruncatedRotated => Ok(PerturbationSpec::TruncatedRotated {
                sigma: need(raw.sigma, "sigma")?,
                rhat: need(raw.rhat, "rhat")?,
            }),
        }
    }
}

impl PerturbationSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            PerturbationSpec::None => 0.0,
            PerturbationSpec::Gaussian { sigma } => sigma,
            PerturbationSpec::TruncatedRotated { sigma, .. } => sigma,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        match *self {
            PerturbationSpec::None => Ok(()),
            PerturbationSpec::Gaussian { sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(("sigma", format!("sigma must be finite and >= 0, got {sigma}")));
                }
                Ok(())
            }
            PerturbationSpec::TruncatedRotated { sigma, rhat } => {
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(("sigma", format!("sigma must be finite and > 0, got {sigma}")));
                }
                if !(rhat.is_finite() && rhat >= sigma) {
                    return Err(("rhat", format!("rhat must be finite and >= sigma, got {rhat}")));
                }
                Ok(())
            }
        }
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn uniform_open<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `d` i.i.d. `N(0, sigma^2)` coordinates.
pub fn sample_gaussian_vector<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> RealVector {
    if sigma == 0.0 {
        return RealVector::zeros(d);
    }
    RealVector::from_vec_unchecked((0..d).map(|_| sigma * standard_normal(rng)).collect())
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn gaussian_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Phi(x)`, accurate far into the right tail.
pub fn gaussian_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF on (0, 1): Acklam's rational
/// approximation followed by one Newton step on `Phi`.
pub fn gaussian_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

/// Quantile for p <= 0.5, refined against `Phi` computed without
/// cancellation.
fn lower_quantile(p: f64) -> f64 {
    let x = acklam(p);
    let err = gaussian_cdf(x) - p;
    x - err / gaussian_pdf(x).max(f64::MIN_POSITIVE)
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Probability mass of a standard normal on `[lo, hi]`, computed on the
/// tail side that avoids cancellation.
pub fn standard_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        gaussian_sf(lo) - gaussian_sf(hi)
    } else if hi <= 0.0 {
        gaussian_cdf(hi) - gaussian_cdf(lo)
    } else {
        1.0 - gaussian_cdf(lo) - gaussian_sf(hi)
    }
}

/// Draw from a standard normal conditioned on `lo <= z <= hi` by inverse
/// CDF. Either bound may be infinite.
pub fn sample_standard_interval<R: RngCore + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
    }
    let mass = standard_interval_mass(lo, hi);
    if !(mass >= 1e-300) {
        return Err(Error::DegenerateInterval { lo, hi, mass });
    }
    let u = uniform_open(rng);
    Ok(interval_inverse(lo, hi, u))
}

fn interval_inverse(lo: f64, hi: f64, u: f64) -> f64 {
    let z = if lo >= 0.0 {
        // Right tail: interpolate survival probabilities.
        let (q_lo, q_hi) = (gaussian_sf(lo), gaussian_sf(hi));
        -gaussian_quantile(q_hi + u * (q_lo - q_hi))
    } else if hi <= 0.0 {
        let (p_lo, p_hi) = (gaussian_cdf(lo), gaussian_cdf(hi));
        gaussian_quantile(p_lo + u * (p_hi - p_lo))
    } else {
        let p_lo = gaussian_cdf(lo);
        let q_hi = gaussian_sf(hi);
        let mass = 1.0 - p_lo - q_hi;
        let p = p_lo + u * mass;
        if p <= 0.5 {
            gaussian_quantile(p)
        } else {
            -gaussian_quantile(q_hi + (1.0 - u) * mass)
        }
    };
    z.clamp(lo, hi)
}

/// `N(0, sigma^2)` conditioned on `|z| <= rhat`.
pub fn sample_truncated_gaussian<R: RngCore + ?Sized>(sigma: f64, rhat: f64, rng: &mut R) -> f64 {
    let a = rhat / sigma;
    sigma * interval_inverse(-a, a, uniform_open(rng))
}

/// Two-sided bracket of the Gaussian tail `1 - Phi(x)` from the asymptotic
/// series `G(x; N)`. `n_terms = K` selects the pair `(G(x; 2K-1), G(x; 2K))`,
/// the odd order giving the lower bound and the even order the upper.
pub fn hazard_bound(x: f64, n_terms: usize) -> Result<(f64, f64)> {
    if !(x >= 2.0) {
        return Err(Error::OutOfRange {
            value: x,
            reason: "hazard bounds are only validated for x >= 2",
        });
    }
    if n_terms == 0 {
        return Err(Error::invalid("n_terms must be >= 1"));
    }
    let scale = gaussian_pdf(x) / x;
    Ok((scale * series_g(x, 2 * n_terms - 1), scale * series_g(x, 2 * n_terms)))
}

/// `G(x; N) = sum_{n=0}^{N} (-1)^n (2n-1)!! / x^{2n}`.
pub fn series_g(x: f64, order: usize) -> f64 {
    let inv_x2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..=order {
        term *= -((2 * n - 1) as f64) * inv_x2;
        sum += term;
    }
    sum
}

fn phi_times(x: f64) -> (f64, f64) {
    // (phi(x), x * phi(x)) with the convention 0 at +-infinity.
    if x.is_infinite() {
        (0.0, 0.0)
    } else {
        let p = gaussian_pdf(x);
        (p, x * p)
    }
}

fn checked_interval(lo: f64, hi: f64, sigma: f64) -> Result<(f64, f64, f64)> {
    if !(sigma > 0.0) || lo.is_nan() || hi.is_nan() || !(lo < hi) {
        return Err(Error::invalid(format!(
            "truncated moments need lo < hi and sigma > 0 (lo={lo}, hi={hi}, sigma={sigma})"
        )));
    }
    let (a, b) = (lo / sigma, hi / sigma);
    let mass = standard_interval_mass(a, b);
    if !(mass >= 1e-300) {
        return Err(Error::DegenerateInterval { lo, hi, mass });
    }
    Ok((a, b, mass))
}

/// `E[e | lo <= e <= hi]` for `e ~ N(0, sigma^2)`.
pub fn truncated_mean(lo: f64, hi: f64, sigma: f64) -> Result<f64> {
    let (a, b, mass) = checked_interval(lo, hi, sigma)?;
    let (pa, _) = phi_times(a);
    let (pb, _) = phi_times(b);
    Ok(sigma * (pa - pb) / mass)
}

/// Exact `Var(e | lo <= e <= hi)` for `e ~ N(0, sigma^2)`.
pub fn truncated_variance(lo: f64, hi: f64, sigma: f64) -> Result<f64> {
    let (a, b, mass) = checked_interval(lo, hi, sigma)?;
    let (pa, apa) = phi_times(a);
    let (pb, bpb) = phi_times(b);
    let shift = (pa - pb) / mass;
    Ok(sigma * sigma * (1.0 + (apa - bpb) / mass - shift * shift))
}
