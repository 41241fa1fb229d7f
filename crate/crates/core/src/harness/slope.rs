//! Log-log slope fits of mean cumulative regret.

use serde::Serialize;

use crate::bandit::RegretTrace;
use crate::error::{Error, Result};

/// Regret values below this are clamped before taking logs.
pub const REGRET_FLOOR: f64 = 1e-9;
/// Number of log-spaced checkpoints used by [`fit_regret_slope`].
pub const DEFAULT_CHECKPOINTS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Ordinary least squares of `y` on `x`; the stderr is the usual
/// `sqrt(SSE / (n - 2) / Sxx)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::invalid("a line fit needs at least two paired points"));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("a line fit needs distinct x values"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let stderr = if n > 2 {
        let sse: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        stderr,
        points: n,
    })
}

/// Roughly `count` distinct integers spaced evenly in `ln t` over `[t_lo, t_hi]`.
pub fn log_spaced(t_lo: usize, t_hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((t_lo as f64).ln(), (t_hi as f64).ln());
    let mut out: Vec<usize> = (0..count)
        .map(|i| {
            let f = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            ((a + f * (b - a)).exp().round() as usize).clamp(t_lo, t_hi)
        })
        .collect();
    out.dedup();
    out
}

/// Slope of `ln(mean cumulative regret)` against `ln t` at the given rounds.
pub fn fit_regret_slope_at(traces: &[RegretTrace], checkpoints: &[usize]) -> Result<SlopeFit> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to fit"));
    }
    let horizon = traces.iter().map(RegretTrace::horizon).min().unwrap_or(0);
    if let Some(&t) = checkpoints.iter().find(|&&t| t == 0 || t > horizon) {
        return Err(Error::invalid(format!("checkpoint {t} outside 1..={horizon}")));
    }
    let n = traces.len() as f64;
    let xs: Vec<f64> = checkpoints.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = checkpoints
        .iter()
        .map(|&t| {
            let mean = traces.iter().map(|tr| tr.cumulative_at(t)).sum::<f64>() / n;
            mean.max(REGRET_FLOOR).ln()
        })
        .collect();
    fit_line(&xs, &ys)
}

/// [`fit_regret_slope_at`] over log-spaced rounds in `[t_lo, t_hi]`.
pub fn fit_regret_slope(traces: &[RegretTrace], t_lo: usize, t_hi: usize) -> Result<SlopeFit> {
    if t_lo < 10 || t_hi <= t_lo {
        return Err(Error::invalid(format!("need t_hi > t_lo >= 10, got [{t_lo}, {t_hi}]")));
    }
    fit_regret_slope_at(traces, &log_spaced(t_lo, t_hi, DEFAULT_CHECKPOINTS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{Mode, RoundRecord};
    use crate::environment::ArmIndex;

    fn synthetic(f: impl Fn(f64) -> f64, horizon: usize) -> RegretTrace {
        let rows = (1..=horizon)
            .map(|t| RoundRecord {
                round: t,
                chosen: ArmIndex(0),
                optimal: ArmIndex(0),
                inst_regret: f(t as f64) - f(t as f64 - 1.0),
                cum_regret: f(t as f64),
                lambda_min: 0.0,
                beta_err: vec![0.0],
            })
            .collect();
        RegretTrace {
            mode: Mode::Single,
            arms: 1,
            rows,
            audit: None,
            max_context_norm: 1.0,
            reward_draws: 0,
            warm_start_n: 0,
        }
    }

    #[test]
    fn linear_trace_has_unit_slope() {
        let fit = fit_regret_slope(&[synthetic(|t| 0.3 * t, 10_000)], 100, 10_000).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn sqrt_trace_has_half_slope() {
        let fit = fit_regret_slope(&[synthetic(|t| 2.0 * t.sqrt(), 10_000)], 100, 10_000).unwrap();
        assert!((fit.slope - 0.5).abs() < 0.01, "{fit:?}");
    }

    #[test]
    fn zero_regret_is_floored() {
        let fit = fit_regret_slope(&[synthetic(|_| 0.0, 1_000)], 10, 1_000).unwrap();
        assert!(fit.slope.abs() < 1e-12, "{fit:?}");
    }

    #[test]
    fn rejects_bad_windows() {
        let tr = [synthetic(|t| t, 100)];
        assert!(fit_regret_slope(&tr, 5, 100).is_err());
        assert!(fit_regret_slope(&tr, 50, 50).is_err());
        assert!(fit_regret_slope(&tr, 10, 200).is_err());
    }

    #[test]
    fn log_spacing_is_distinct_and_bounded() {
        let c = log_spaced(1_000, 50_000, 25);
        assert_eq!(c.first(), Some(&1_000));
        assert_eq!(c.last(), Some(&50_000));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn line_fit_stderr_zero_on_exact_line() {
        let fit = fit_line(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 5.0, 7.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && fit.stderr < 1e-12);
    }
}
