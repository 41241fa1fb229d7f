//! The greedy least-squares learner, warm start, rewards and regret accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{standard_normal, PerturbationSpec, Purpose, RngStream};
use crate::environment::{
    adversary_next, draw_perturbation, perturb_round, AdversarySpec, ArmIndex, History, HistoryRecord, RoundKey,
};
use crate::error::{Error, Result};
use crate::linalg::{solve_least_squares_with_eigen, RealVector, SymMatrix};

/// Slack allowed on `|beta_i| <= 1`.
pub const BETA_NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One parameter shared by every arm.
    Single,
    /// One parameter per arm.
    Multi,
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: Mode,
    pub dim: usize,
    pub arms: usize,
    pub betas: Vec<RealVector>,
    /// Reward noise variance.
    #[serde(default = "default_noise")]
    pub noise_s: f64,
}

impl ModelSpec {
    pub fn new(mode: Mode, dim: usize, arms: usize, betas: Vec<RealVector>, noise_s: f64) -> Result<Self> {
        let m = ModelSpec {
            mode,
            dim,
            arms,
            betas,
            noise_s,
        };
        m.validate()
            .map_err(|(ptr, msg)| Error::config(format!("/model{ptr}"), msg))?;
        Ok(m)
    }

    /// Checks the model invariants. Errors carry a JSON pointer relative to
    /// the model object.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.dim == 0 {
            return Err(("/dim".into(), "dimension must be >= 1".into()));
        }
        if self.arms == 0 {
            return Err(("/arms".into(), "need at least one arm".into()));
        }
        let expected = match self.mode {
            Mode::Single => 1,
            Mode::Multi => self.arms,
        };
        if self.betas.len() != expected {
            return Err((
                "/betas".into(),
                format!("expected {expected} parameter vector(s), got {}", self.betas.len()),
            ));
        }
        for (i, b) in self.betas.iter().enumerate() {
            if b.dim() != self.dim {
                return Err((
                    format!("/betas/{i}"),
                    format!("dimension {} does not match dim {}", b.dim(), self.dim),
                ));
            }
            if b.as_slice().iter().any(|x| !x.is_finite()) {
                return Err((format!("/betas/{i}"), "entries must be finite".into()));
            }
            let norm = b.norm();
            if norm > 1.0 + BETA_NORM_SLACK {
                return Err((format!("/betas/{i}"), format!("norm {norm} exceeds 1")));
            }
        }
        if !(self.noise_s >= 0.0 && self.noise_s.is_finite()) {
            return Err(("/noise_s".into(), "noise variance must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of least-squares estimators the learner keeps.
    pub fn estimators(&self) -> usize {
        match self.mode {
            Mode::Single => 1,
            Mode::Multi => self.arms,
        }
    }

    pub fn beta(&self, arm: ArmIndex) -> &RealVector {
        match self.mode {
            Mode::Single => &self.betas[0],
            Mode::Multi => &self.betas[arm.get()],
        }
    }

    fn estimator_for(&self, arm: usize) -> usize {
        match self.mode {
            Mode::Single => 0,
            Mode::Multi => arm,
        }
    }
}

/// Running least-squares state for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsState {
    gram: SymMatrix,
    moment: RealVector,
    count: usize,
    beta_hat: RealVector,
    lambda_min: f64,
}

impl OlsState {
    pub fn new(dim: usize) -> Self {
        OlsState {
            gram: SymMatrix::zeros(dim),
            moment: RealVector::zeros(dim),
            count: 0,
            beta_hat: RealVector::zeros(dim),
            lambda_min: 0.0,
        }
    }

    /// Appends one observation and re-solves.
    pub fn observe(&mut self, x: &RealVector, reward: f64) -> Result<()> {
        if x.dim() != self.gram.dim() {
            return Err(Error::invalid(format!(
                "context dimension {} does not match estimator dimension {}",
                x.dim(),
                self.gram.dim()
            )));
        }
        if !reward.is_finite() {
            return Err(Error::invalid(format!("non-finite reward {reward}")));
        }
        self.gram.add_outer(x.as_slice(), 1.0);
        self.moment = self.moment.add(&x.scaled(reward));
        self.count += 1;
        let (beta_hat, eig) = solve_least_squares_with_eigen(&self.gram, &self.moment)?;
        self.beta_hat = beta_hat;
        self.lambda_min = eig.min().max(0.0);
        Ok(())
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn moment(&self) -> &RealVector {
        &self.moment
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn beta_hat(&self) -> &RealVector {
        &self.beta_hat
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }
}

/// Functional form of [`OlsState::observe`].
pub fn ols_update(state: &OlsState, x: &RealVector, reward: f64) -> Result<OlsState> {
    let mut next = state.clone();
    next.observe(x, reward)?;
    Ok(next)
}

/// `argmax_i estimate_i . context_i`, lowest index on ties. A single
/// estimate is shared by every arm.
pub fn greedy_select(estimates: &[RealVector], contexts: &[RealVector]) -> Result<ArmIndex> {
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts to choose from"));
    }
    if estimates.len() != 1 && estimates.len() != contexts.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} arms",
            estimates.len(),
            contexts.len()
        )));
    }
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, x) in contexts.iter().enumerate() {
        let est = if estimates.len() == 1 {
            &estimates[0]
        } else {
            &estimates[i]
        };
        if est.dim() != x.dim() {
            return Err(Error::invalid("estimate and context dimensions differ"));
        }
        let v = est.dot(x);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    Ok(ArmIndex(best))
}

/// `beta_arm . context + eta` with `eta ~ N(0, noise_s)`.
pub fn draw_reward<R: Rng + ?Sized>(model: &ModelSpec, arm: ArmIndex, context: &RealVector, rng: &mut R) -> f64 {
    let mean = model.beta(arm).dot(context);
    if model.noise_s == 0.0 {
        return mean;
    }
    mean + model.noise_s.sqrt() * standard_normal(rng)
}

/// One explicit warm-start observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmRow {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WarmStartSource {
    /// Draw `n` perturbed contexts per arm from the episode's adversary.
    #[default]
    PerturbedAdversary,
    /// `rows[i]` holds exactly `n` observations for arm `i`.
    ExplicitData { rows: Vec<Vec<WarmRow>> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStartSpec {
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub source: WarmStartSource,
}

impl WarmStartSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn perturbed(n: usize) -> Self {
        WarmStartSpec {
            n,
            source: WarmStartSource::PerturbedAdversary,
        }
    }
}

/// Counts reward draws so tests can confirm only pulled arms are observed.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DrawCounter(pub u64);

/// Seeds the estimators with warm-start observations. Pseudo-round `j` pulls
/// every arm once, in index order.
pub fn run_warm_start(
    model: &ModelSpec,
    spec: &WarmStartSpec,
    adversary: &AdversarySpec,
    perturbation: &PerturbationSpec,
    seed: u64,
    draws: &mut DrawCounter,
) -> Result<Vec<OlsState>> {
    let mut states = vec![OlsState::new(model.dim); model.estimators()];
    match &spec.source {
        WarmStartSource::ExplicitData { rows } => {
            if rows.len() != model.arms {
                return Err(Error::invalid(format!(
                    "warm-start data has {} arms, model has {}",
                    rows.len(),
                    model.arms
                )));
            }
            for (i, arm_rows) in rows.iter().enumerate() {
                if arm_rows.len() != spec.n {
                    return Err(Error::invalid(format!(
                        "warm-start data for arm {} has {} rows, expected {}",
                        i + 1,
                        arm_rows.len(),
                        spec.n
                    )));
                }
            }
            for j in 0..spec.n {
                for (i, arm_rows) in rows.iter().enumerate() {
                    let row = &arm_rows[j];
                    let x = RealVector::new(row.x.clone())?;
                    states[model.estimator_for(i)].observe(&x, row.y)?;
                }
            }
        }
        WarmStartSource::PerturbedAdversary => {
            let empty = History::new();
            for j in 0..spec.n {
                let estimates: Vec<RealVector> = (0..model.arms)
                    .map(|i| states[model.estimator_for(i)].beta_hat().clone())
                    .collect();
                let choice = adversary_next(adversary, &empty, Some(&estimates))?;
                check_shape(model, choice.arms(), choice.dim())?;
                for i in 0..model.arms {
                    let est = states[model.estimator_for(i)].beta_hat().clone();
                    let mut prng = RngStream::new(seed, j as u64, i as u32, Purpose::WarmStartPerturbation).rng();
                    let e = draw_perturbation(perturbation, model.dim, &est, &mut prng)?;
                    let x = choice.means()[i].add(&e);
                    let mut rrng = RngStream::new(seed, j as u64, i as u32, Purpose::WarmStartReward).rng();
                    let y = draw_reward(model, ArmIndex(i), &x, &mut rrng);
                    draws.0 += 1;
                    states[model.estimator_for(i)].observe(&x, y)?;
                }
            }
        }
    }
    Ok(states)
}

fn check_shape(model: &ModelSpec, arms: usize, dim: usize) -> Result<()> {
    if arms != model.arms || dim != model.dim {
        return Err(Error::ContractViolation(format!(
            "adversary produced {arms} arms of dimension {dim}; model expects {} of dimension {}",
            model.arms, model.dim
        )));
    }
    Ok(())
}

/// Everything needed to play one episode apart from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub model: ModelSpec,
    pub adversary: AdversarySpec,
    pub perturbation: PerturbationSpec,
    pub warm_start: WarmStartSpec,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    /// Keep per-round estimates and means for auspicious-round audits.
    pub keep_audit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// One-based round index.
    pub round: usize,
    pub chosen: ArmIndex,
    pub optimal: ArmIndex,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Smallest Gram eigenvalue before this round's update (minimum over
    /// arms in multi mode).
    pub lambda_min: f64,
    /// `|beta_i - beta_hat_i|` for the estimates used this round, one per arm.
    pub beta_err: Vec<f64>,
}

/// Inputs frozen at one round, for replaying the selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRound {
    pub estimates: Vec<RealVector>,
    pub means: Vec<RealVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub mode: Mode,
    pub arms: usize,
    pub rows: Vec<RoundRecord>,
    pub audit: Option<Vec<AuditRound>>,
    /// Largest context norm presented during play.
    pub max_context_norm: f64,
    pub reward_draws: u64,
    pub warm_start_n: usize,
}

impl RegretTrace {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn cumulative(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Cumulative regret after round `t` (one-based); 0 for `t = 0`.
    pub fn cumulative_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.rows[t - 1].cum_regret
        }
    }

    /// `|S_i|`: rounds in which each arm was pulled.
    pub fn pulls_per_arm(&self) -> Vec<usize> {
        let mut c = vec![0; self.arms];
        for r in &self.rows {
            c[r.chosen.get()] += 1;
        }
        c
    }

    /// `|S_i*|`: rounds in which each arm was optimal.
    pub fn optimal_per_arm(&self) -> Vec<usize> {
        let mut c = vec![0; self.arms];
        for r in &self.rows {
            c[r.optimal.get()] += 1;
        }
        c
    }

    /// `2 R t_min + 2 R sum_{t >= t_min} |beta - beta_hat^t|` with `R` the
    /// largest context norm seen, for single-parameter traces.
    pub fn decomposition_bound(&self, t_min: usize) -> f64 {
        let r = self.max_context_norm;
        let tail: f64 = self
            .rows
            .iter()
            .filter(|row| row.round >= t_min)
            .map(|row| row.beta_err[0])
            .sum();
        2.0 * r * t_min as f64 + 2.0 * r * tail
    }
}

/// Plays one episode. See [`simulate_episode`].
pub fn run_episode(spec: &EpisodeSpec, seed: u64) -> Result<RegretTrace> {
    simulate_episode(spec, seed, EpisodeOptions::default())
}

/// Plays `spec.horizon` greedy rounds after the warm start. Each round computes
/// the estimates, asks the adversary for means, perturbs them, pulls the
/// greedy arm and updates its estimator. Regret is measured on expected
/// rewards.
pub fn simulate_episode(spec: &EpisodeSpec, seed: u64, opts: EpisodeOptions) -> Result<RegretTrace> {
    let model = &spec.model;
    let mut draws = DrawCounter::default();
    let mut states = run_warm_start(
        model,
        &spec.warm_start,
        &spec.adversary,
        &spec.perturbation,
        seed,
        &mut draws,
    )?;
    let mut history = History::new();
    let mut rows = Vec::with_capacity(spec.horizon);
    let mut audit = opts.keep_audit.then(|| Vec::with_capacity(spec.horizon));
    let mut cum = 0.0;
    let mut max_norm: f64 = 0.0;

    for t in 1..=spec.horizon {
        let estimates: Vec<RealVector> = (0..model.arms)
            .map(|i| states[model.estimator_for(i)].beta_hat().clone())
            .collect();
        let choice = adversary_next(&spec.adversary, &history, Some(&estimates))?;
        check_shape(model, choice.arms(), choice.dim())?;
        let key = RoundKey {
            seed,
            round: t as u64,
            purpose: Purpose::Perturbation,
        };
        let ctx = perturb_round(choice, &spec.perturbation, &estimates, key)?;
        let chosen = greedy_select(&estimates, &ctx.contexts)?;

        let values: Vec<f64> = ctx
            .contexts
            .iter()
            .enumerate()
            .map(|(i, x)| model.beta(ArmIndex(i)).dot(x))
            .collect();
        let mut optimal = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[optimal] {
                optimal = i;
            }
        }
        let inst = (values[optimal] - values[chosen.get()]).max(0.0);
        cum += inst;
        for x in &ctx.contexts {
            max_norm = max_norm.max(x.norm());
        }
        let lambda_min = states.iter().map(OlsState::lambda_min).fold(f64::INFINITY, f64::min);
        let beta_err = (0..model.arms)
            .map(|i| model.beta(ArmIndex(i)).sub(&estimates[i]).norm())
            .collect();
        rows.push(RoundRecord {
            round: t,
            chosen,
            optimal: ArmIndex(optimal),
            inst_regret: inst,
            cum_regret: cum,
            lambda_min,
            beta_err,
        });
        if let Some(a) = audit.as_mut() {
            a.push(AuditRound {
                estimates,
                means: ctx.means().to_vec(),
            });
        }

        let mut rrng = RngStream::new(seed, t as u64, chosen.get() as u32, Purpose::Reward).rng();
        let x = &ctx.contexts[chosen.get()];
        let reward = draw_reward(model, chosen, x, &mut rrng);
        draws.0 += 1;
        states[model.estimator_for(chosen.get())].observe(x, reward)?;
        history.push(HistoryRecord {
            contexts: ctx,
            chosen,
            reward,
        })?;
    }

    Ok(RegretTrace {
        mode: model.mode,
        arms: model.arms,
        rows,
        audit,
        max_context_norm: max_norm,
        reward_draws: draws.0,
        warm_start_n: spec.warm_start.n,
    })
}

/// Inputs to the warm-start size formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmStartParams {
    pub delta: f64,
    /// Context norm bound.
    pub r: f64,
    pub d: usize,
    pub k: usize,
    pub lambda0: f64,
    pub alpha: f64,
    pub min_beta_norm: f64,
    pub sigma: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WarmStartSizes {
    pub n_min: u64,
    pub n_star: u64,
    /// Order-of-magnitude size with the hidden constants set to 1.
    pub theorem_n: u64,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::OutOfRange { value: v, reason: name })
    }
}

/// `max{128 ln(192k/delta), 320 R^2 ln(320 R^2 d k / delta) / lambda0}`,
/// unrounded.
pub fn n_min(delta: f64, r: f64, d: usize, k: usize, lambda0: f64) -> Result<f64> {
    let delta = positive("delta must be positive", delta)?;
    let r = positive("R must be positive", r)?;
    let lambda0 = positive("lambda0 must be positive", lambda0)?;
    let (d, k) = (d as f64, k as f64);
    positive("d must be positive", d)?;
    positive("k must be positive", k)?;
    let a = 128.0 * (192.0 * k / delta).ln();
    let r2 = r * r;
    let b = 320.0 * r2 * (320.0 * r2 * d * k / delta).ln() / lambda0;
    Ok(a.max(b))
}

/// Evaluates `n_min(delta)`, `n*` and the small-sigma regime warm-start size, each
/// rounded up.
pub fn warm_start_size_formulas(p: &WarmStartParams) -> Result<WarmStartSizes> {
    let nm = n_min(p.delta, p.r, p.d, p.k, p.lambda0)?;
    let alpha = positive("alpha must be positive", p.alpha)?;
    let min_beta = positive("min beta norm must be positive", p.min_beta_norm)?;
    let sigma = positive("sigma must be positive", p.sigma)?;
    let s = positive("s must be positive", p.s)?;
    let (d, k, r, delta) = (p.d as f64, p.k as f64, p.r, p.delta);

    let case1 = 4.0 + (2.0 * (2.0 * k / delta).ln()).sqrt();
    let case2 = n_min(delta / 2.0, r, p.d, p.k, p.lambda0)?;
    let denom = (alpha * p.lambda0 * min_beta).powi(2);
    let case3 = 49152.0 * r * d * s / denom * (98304.0 * r * d * d * k * s / (delta * denom)).ln();
    let n_star = case1.max(case2).max(case3);

    let theorem = d * s / (sigma.powi(12) * min_beta * min_beta) * (d * k * s / (delta * sigma * min_beta)).ln();

    Ok(WarmStartSizes {
        n_min: nm.ceil() as u64,
        n_star: n_star.ceil() as u64,
        theorem_n: theorem.max(0.0).ceil() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::RngStream;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> RealVector {
        RealVector::new(x.to_vec()).unwrap()
    }

    fn single_model(beta: &[f64], k: usize, s: f64) -> ModelSpec {
        ModelSpec::new(Mode::Single, beta.len(), k, vec![v(beta)], s).unwrap()
    }

    #[test]
    fn greedy_select_examples() {
        let est = [v(&[1.0, 0.0])];
        assert_eq!(
            greedy_select(&est, &[v(&[0.5, 0.0]), v(&[0.9, 0.0])]).unwrap(),
            ArmIndex(1)
        );
        let zero = [v(&[0.0, 0.0])];
        assert_eq!(
            greedy_select(&zero, &[v(&[0.5, 0.0]), v(&[0.9, 0.0])]).unwrap(),
            ArmIndex(0)
        );
    }

    #[test]
    fn greedy_select_matches_brute_force() {
        let mut rng = RngStream::new(3, 0, 0, Purpose::Sampler).rng();
        for _ in 0..1_000 {
            let est: Vec<RealVector> = (0..3)
                .map(|_| v(&(0..4).map(|_| standard_normal(&mut rng)).collect::<Vec<_>>()))
                .collect();
            let ctx: Vec<RealVector> = (0..3)
                .map(|_| v(&(0..4).map(|_| standard_normal(&mut rng)).collect::<Vec<_>>()))
                .collect();
            let scores: Vec<f64> = (0..3).map(|i| (0..4).map(|j| est[i][j] * ctx[i][j]).sum()).collect();
            let brute = (0..3)
                .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                .unwrap();
            assert_eq!(greedy_select(&est, &ctx).unwrap().get(), brute);
        }
    }

    #[test]
    fn ols_exact_fit_one_dim() {
        let s = OlsState::new(1);
        let s = ols_update(&s, &v(&[1.0]), 2.0).unwrap();
        let s = ols_update(&s, &v(&[2.0]), 4.0).unwrap();
        assert!((s.beta_hat()[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn ols_rejects_non_finite_reward() {
        let s = OlsState::new(1);
        assert!(matches!(
            ols_update(&s, &v(&[1.0]), f64::NAN),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn ols_noise_free_recovery() {
        let beta = v(&[0.3, -0.2, 0.5]);
        let mut s = OlsState::new(3);
        for x in [v(&[1.0, 0.0, 0.0]), v(&[1.0, 1.0, 0.0]), v(&[0.0, 1.0, 2.0])] {
            let y = beta.dot(&x);
            s.observe(&x, y).unwrap();
        }
        assert!(s.beta_hat().sub(&beta).max_abs() < 1e-8);
    }

    /// Normal equations solved by Gaussian elimination with partial pivoting.
    fn batch_solve(xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let d = xs[0].len();
        let mut a = vec![vec![0.0; d + 1]; d];
        for (x, y) in xs.iter().zip(ys) {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += x[i] * x[j];
                }
                a[i][d] += x[i] * y;
            }
        }
        for c in 0..d {
            let p = (c..d)
                .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
                .unwrap();
            a.swap(c, p);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for j in c..=d {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
        (0..d).map(|i| a[i][d] / a[i][i]).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ols_incremental_equals_batch(
            rows in proptest::collection::vec((proptest::collection::vec(-1.0f64..1.0, 3), -2.0f64..2.0), 6..30)
        ) {
            let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let mut s = OlsState::new(3);
            for (x, y) in xs.iter().zip(&ys) {
                s.observe(&v(x), *y).unwrap();
            }
            prop_assume!(s.lambda_min() > 1e-3);
            let b = batch_solve(&xs, &ys);
            for i in 0..3 {
                prop_assert!((s.beta_hat()[i] - b[i]).abs() <= 1e-8 * (1.0 + b[i].abs()));
            }
        }
    }

    #[test]
    fn reward_noise_free_and_deterministic() {
        let m = single_model(&[0.5, 0.5], 2, 0.0);
        let mut rng = RngStream::new(1, 1, 0, Purpose::Reward).rng();
        assert_eq!(draw_reward(&m, ArmIndex(0), &v(&[1.0, 1.0]), &mut rng), 1.0);
        let m = single_model(&[0.5, 0.5], 2, 1.0);
        let a = draw_reward(
            &m,
            ArmIndex(0),
            &v(&[1.0, 1.0]),
            &mut RngStream::new(1, 1, 0, Purpose::Reward).rng(),
        );
        let b = draw_reward(
            &m,
            ArmIndex(0),
            &v(&[1.0, 1.0]),
            &mut RngStream::new(1, 1, 0, Purpose::Reward).rng(),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn reward_mean_within_clt_band() {
        let s = 2.0;
        let m = single_model(&[0.3, -0.4], 1, s);
        let x = v(&[0.5, 0.25]);
        let n = 1_000_000;
        let mut rng = RngStream::new(5, 0, 0, Purpose::Reward).rng();
        let mean = (0..n).map(|_| draw_reward(&m, ArmIndex(0), &x, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.05).abs() < 4.0 * (s / n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn model_validation_pointers() {
        let bad = ModelSpec {
            mode: Mode::Multi,
            dim: 2,
            arms: 2,
            betas: vec![v(&[1.5, 0.0]), v(&[0.0, 1.0])],
            noise_s: 1.0,
        };
        assert_eq!(bad.validate().unwrap_err().0, "/betas/0");
        let wrong_count = ModelSpec {
            mode: Mode::Single,
            ..bad
        };
        assert_eq!(wrong_count.validate().unwrap_err().0, "/betas");
    }

    fn lb1_spec(n_instance: usize, warm: usize, sigma: f64, horizon: usize) -> EpisodeSpec {
        EpisodeSpec {
            model: ModelSpec::new(Mode::Multi, 1, 2, vec![v(&[1.0]), v(&[1.0])], 1.0).unwrap(),
            adversary: AdversarySpec::LowerBound1 { n: n_instance },
            perturbation: PerturbationSpec::Gaussian { sigma },
            warm_start: WarmStartSpec::perturbed(warm),
            horizon,
        }
    }

    #[test]
    fn empty_warm_start_gives_zero_estimates() {
        let spec = lb1_spec(100, 0, 0.01, 1);
        let mut c = DrawCounter::default();
        let states = run_warm_start(
            &spec.model,
            &spec.warm_start,
            &spec.adversary,
            &spec.perturbation,
            1,
            &mut c,
        )
        .unwrap();
        assert!(states.iter().all(|s| s.beta_hat().is_zero() && s.count() == 0));
        assert_eq!(c.0, 0);
    }

    #[test]
    fn warm_start_estimates_concentrate() {
        let sigma = crate::environment::lower_bound1_sigma(100, 10_000).unwrap();
        let spec = lb1_spec(100, 100, sigma, 1);
        let reps = 1_000;
        let mut est = Vec::with_capacity(reps);
        for seed in 0..reps as u64 {
            let mut c = DrawCounter::default();
            let states = run_warm_start(
                &spec.model,
                &spec.warm_start,
                &spec.adversary,
                &spec.perturbation,
                seed,
                &mut c,
            )
            .unwrap();
            assert_eq!(c.0, 200);
            est.push(states[0].beta_hat()[0]);
        }
        let mean = est.iter().sum::<f64>() / reps as f64;
        let sd = (est.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        // Noise variance 1 over 100 pulls with contexts near 1.
        assert!((mean - 1.0).abs() < 4.0 * 0.1 / (reps as f64).sqrt(), "{mean}");
        assert!((sd - 0.1).abs() < 0.01, "{sd}");
    }

    #[test]
    fn explicit_warm_start_data() {
        let model = ModelSpec::new(Mode::Multi, 1, 2, vec![v(&[1.0]), v(&[0.5])], 1.0).unwrap();
        let spec = WarmStartSpec {
            n: 1,
            source: WarmStartSource::ExplicitData {
                rows: vec![
                    vec![WarmRow { x: vec![1.0], y: 3.0 }],
                    vec![WarmRow { x: vec![2.0], y: 1.0 }],
                ],
            },
        };
        let mut c = DrawCounter::default();
        let states = run_warm_start(
            &model,
            &spec,
            &AdversarySpec::LowerBound2,
            &PerturbationSpec::None,
            0,
            &mut c,
        )
        .unwrap();
        assert_eq!(states[0].beta_hat()[0], 3.0);
        assert_eq!(states[1].beta_hat()[0], 0.5);
        assert_eq!(c.0, 0);
    }

    fn single_spec(sigma: f64, s: f64, horizon: usize, k: usize) -> EpisodeSpec {
        let means: Vec<Vec<f64>> = (0..k).map(|i| vec![0.5 * (i as f64 + 1.0) / k as f64, 0.3]).collect();
        EpisodeSpec {
            model: single_model(&[0.6, -0.8], k, s),
            adversary: AdversarySpec::FixedMeans { means },
            perturbation: PerturbationSpec::Gaussian { sigma },
            warm_start: WarmStartSpec::none(),
            horizon,
        }
    }

    #[test]
    fn one_arm_has_zero_regret() {
        let trace = run_episode(&single_spec(0.1, 1.0, 200, 1), 9).unwrap();
        assert!(trace.rows.iter().all(|r| r.inst_regret == 0.0));
    }

    #[test]
    fn noise_free_single_mode_stops_regretting_at_full_rank() {
        let trace = run_episode(&single_spec(0.1, 0.0, 100, 3), 4).unwrap();
        let full = trace.rows.iter().position(|r| r.lambda_min > 1e-9).unwrap();
        assert!(full < 10);
        assert!(trace.rows[full..]
            .iter()
            .all(|r| r.inst_regret == 0.0 && r.beta_err[0] < 1e-8));
    }

    #[test]
    fn trace_bookkeeping() {
        let spec = EpisodeSpec {
            model: ModelSpec::new(
                Mode::Multi,
                2,
                3,
                vec![v(&[0.6, 0.0]), v(&[0.0, 0.6]), v(&[0.4, 0.4])],
                1.0,
            )
            .unwrap(),
            adversary: AdversarySpec::FixedMeans {
                means: vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]],
            },
            perturbation: PerturbationSpec::Gaussian { sigma: 0.2 },
            warm_start: WarmStartSpec::perturbed(7),
            horizon: 500,
        };
        let trace = run_episode(&spec, 11).unwrap();
        assert_eq!(trace.pulls_per_arm().iter().sum::<usize>(), 500);
        assert_eq!(trace.optimal_per_arm().iter().sum::<usize>(), 500);
        assert_eq!(trace.reward_draws, 500 + 3 * 7);
        let mut prev = 0.0;
        for r in &trace.rows {
            assert!(r.inst_regret >= 0.0 && r.cum_regret >= prev);
            prev = r.cum_regret;
        }
    }

    #[test]
    fn regret_decomposition_holds_on_traces() {
        for seed in 0..5 {
            let trace = run_episode(&single_spec(0.1, 1.0, 2_000, 3), seed).unwrap();
            for t_min in [1, 10, 100, 1_000, 2_000] {
                let lhs = trace.cumulative();
                assert!(lhs <= trace.decomposition_bound(t_min) + 1e-9);
            }
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let spec = single_spec(0.1, 1.0, 300, 3);
        assert_eq!(run_episode(&spec, 2).unwrap(), run_episode(&spec, 2).unwrap());
        assert_ne!(run_episode(&spec, 2).unwrap(), run_episode(&spec, 3).unwrap());
    }

    #[test]
    fn n_min_matches_direct_evaluation() {
        let got = n_min(0.05, 2.0, 5, 3, 0.01).unwrap();
        // 320 * 4 / 0.01 = 128000; 320 * 4 * 5 * 3 / 0.05 = 384000.
        let expected = (128.0 * (192.0 * 3.0 / 0.05f64).ln()).max(128_000.0 * 384_000f64.ln());
        assert!((got - expected).abs() < 1e-9 * expected);
        assert_eq!(got.ceil() as u64, expected.ceil() as u64);
    }

    #[test]
    fn n_min_second_case_halves_when_lambda_doubles() {
        let a = n_min(0.05, 2.0, 5, 3, 0.01).unwrap();
        let b = n_min(0.05, 2.0, 5, 3, 0.02).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn n_star_dominates_n_min_half_delta() {
        for &(delta, lambda0, alpha) in &[(0.05, 0.01, 0.1), (0.5, 1.0, 1.0), (0.01, 0.5, 0.01)] {
            let p = WarmStartParams {
                delta,
                r: 1.5,
                d: 4,
                k: 2,
                lambda0,
                alpha,
                min_beta_norm: 0.5,
                sigma: 0.1,
                s: 1.0,
            };
            let sizes = warm_start_size_formulas(&p).unwrap();
            let half = n_min(delta / 2.0, 1.5, 4, 2, lambda0).unwrap().ceil() as u64;
            assert!(sizes.n_star >= half);
            assert!(sizes.n_min <= half);
        }
        let bad = WarmStartParams {
            delta: 0.0,
            r: 1.0,
            d: 1,
            k: 1,
            lambda0: 1.0,
            alpha: 1.0,
            min_beta_norm: 1.0,
            sigma: 1.0,
            s: 1.0,
        };
        assert!(warm_start_size_formulas(&bad).is_err());
    }
}
