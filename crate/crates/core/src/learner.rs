//! Backward-induction batch Q-learning with spectral-filter stage regressions
//! and data-driven choice of the regularization parameter.
//!
//! For `t = T, …, 1` the learner builds targets
//! `y_{i,t} = r_{i,t} + max_a ⟨θ_{t+1}, x(s_{i,t+1}, a)⟩` (with `θ_{T+1} = 0`),
//! then fits `θ_t = g_λ(Σ̂_t) Ê[x y]` on a geometric grid
//! `λ_k = q_t q^k, k = 1..=K`. The grid is scanned from `k = K` (smallest λ)
//! towards `k = 1`; the first `k` whose consecutive-estimate difference
//! `‖(Σ̂ + λ_{k+1} I)^{1/2} (θ_{λ_{k+1}} − θ_{λ_k})‖` reaches the threshold
//! `C_ada · 84 ((T−t+2) M + Φ_{t+1}) (1 + C_x) W(λ_{k+1}) log²(2/δ)` is
//! selected; if none does, `k = K`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{empirical_covariance, split_indices, BatchDataset, StageDesign};
use crate::linalg::{check_len, dot, sub, Matrix, SpectralDecomposition};
use crate::spectral::{
    apply_filter, empirical_effective_dimension, weighted_half_norm, FilterKind, FilterSpec,
};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How the grid length `K` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BudgetRule {
    /// `K = budget`.
    Fixed,
    /// `K = min(budget, max(1, ⌈log_q(C_sa / (q_t √|D|_γ))⌉))`.
    TheoryCapped,
}

/// Constants of the adaptive selection rule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AdaptiveConfig {
    /// Grid ratio `q ∈ (0, 1)`.
    pub q: f64,
    /// Grid anchor `q_t`: `λ_k = q_t q^k`.
    pub q0_per_stage: f64,
    pub budget: usize,
    pub budget_rule: BudgetRule,
    pub c_ada: f64,
    pub delta: f64,
    pub c_x: f64,
    /// `M`, the bound on `|r_t|`. [`train`] overwrites it with the dataset's bound.
    pub reward_bound: f64,
    pub b0: f64,
    pub c0: f64,
    pub gamma0: f64,
    pub c_tilde: f64,
    pub c0_effdim: f64,
    /// Stand-in for `‖θ*‖₂` inside `c₁*`; only matters when `c0 > 0`.
    pub theta_norm_hint: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self::for_filter(FilterKind::Tikhonov)
    }
}

impl AdaptiveConfig {
    /// Experiment defaults for `kind`.
    pub fn for_filter(kind: FilterKind) -> Self {
        let (q0, c_ada) = match kind {
            FilterKind::Tikhonov => (100.0, 0.5e-5),
            FilterKind::GradientDescent => (100.0, 1e-5),
            FilterKind::Cutoff => (30.0, 1e-4),
        };
        AdaptiveConfig {
            q: 0.9,
            q0_per_stage: q0,
            budget: 100,
            budget_rule: BudgetRule::Fixed,
            c_ada,
            delta: 0.5,
            c_x: 1.0,
            reward_bound: 1.0,
            b0: 2.0,
            c0: 0.0,
            gamma0: 1.0,
            c_tilde: 0.25,
            c0_effdim: 1.0,
            theta_norm_hint: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::domain(m));
        if !(self.q > 0.0 && self.q < 1.0) {
            return fail("q must lie in (0, 1)");
        }
        if !(self.q0_per_stage > 0.0) {
            return fail("q0_per_stage must be positive");
        }
        if self.budget == 0 {
            return fail("budget must be at least 1");
        }
        if !(self.c_ada >= 0.0) || !self.c_ada.is_finite() {
            return fail("c_ada must be nonnegative and finite");
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return fail("delta must lie in (0, 0.5]");
        }
        if !(self.c_x > 0.0) || !(self.reward_bound > 0.0) {
            return fail("c_x and reward_bound must be positive");
        }
        if !(self.b0 > 0.0) || !(self.c0 >= 0.0) || !(self.gamma0 > 0.0) {
            return fail("mixing constants need b0 > 0, c0 >= 0, gamma0 > 0");
        }
        if !(self.c_tilde > 0.0 && self.c_tilde < 0.5) {
            return fail("c_tilde must lie in (0, 0.5)");
        }
        if !(self.c0_effdim >= 1.0) {
            return fail("c0_effdim must be at least 1");
        }
        if !(self.theta_norm_hint >= 0.0) {
            return fail("theta_norm_hint must be nonnegative");
        }
        Ok(())
    }

    fn log_two_over_delta(&self) -> f64 {
        libm::log(2.0 / self.delta)
    }

    /// `c₁* = c₀ b₀ max{ √2 max{M + 2 C_x ‖θ*‖, C_x} / (2 C_x M), 1/C_x }`.
    pub fn c1_star(&self) -> f64 {
        let cx = self.c_x;
        let m = self.reward_bound;
        let inner = (m + 2.0 * cx * self.theta_norm_hint).max(cx);
        let a = core::f64::consts::SQRT_2 * inner / (2.0 * cx * m);
        self.c0 * self.b0 * a.max(1.0 / cx)
    }

    /// `C_sa = 21 C_x (1 + 2 C_x)(√C₀ + 1) / c̃ · log(2/δ)`.
    pub fn c_sa(&self) -> f64 {
        21.0 * self.c_x * (1.0 + 2.0 * self.c_x) * (libm::sqrt(self.c0_effdim) + 1.0) / self.c_tilde
            * self.log_two_over_delta()
    }

    /// The `C_ada` value implied by the error analysis for filter constant `b`.
    pub fn theory_c_ada(&self, b: f64) -> f64 {
        let c = self.c_tilde;
        8.0 * b * libm::sqrt((1.0 - c) / (1.0 - 2.0 * c)) * libm::sqrt(1.0 / (1.0 - 2.0 * c))
    }

    /// `λ_k = q_t q^k`.
    pub fn grid_lambda(&self, k: usize) -> f64 {
        self.q0_per_stage * libm::pow(self.q, k as f64)
    }
}

fn mixing_denominator(log_arg: f64, gamma0: f64) -> f64 {
    let l = if log_arg > 0.0 { libm::log(log_arg) } else { f64::NEG_INFINITY };
    2.0 * libm::pow(l.max(1.0), 1.0 / gamma0)
}

/// Effective sample size `|D|_γ = |D| b₀ / (2 max{1, log(c₁* |D|)}^{1/γ₀})`.
pub fn effective_sample_size(n: usize, cfg: &AdaptiveConfig) -> f64 {
    let n = n as f64;
    n * cfg.b0 / mixing_denominator(cfg.c1_star() * n, cfg.gamma0)
}

/// `ℓ₃ = |D| b₀ / (2 max{1, log(b₀ c₀ |D| 2√d / C_x)}^{1/γ₀})`.
pub fn ell3(n: usize, d: usize, cfg: &AdaptiveConfig) -> f64 {
    let n = n as f64;
    let arg = cfg.b0 * cfg.c0 * n * 2.0 * libm::sqrt(d as f64) / cfg.c_x;
    n * cfg.b0 / mixing_denominator(arg, cfg.gamma0)
}

/// The variance proxy `W(λ)` entering the threshold.
pub fn compute_w(
    decomp: &SpectralDecomposition,
    lambda: f64,
    n: usize,
    d: usize,
    cfg: &AdaptiveConfig,
) -> Result<f64> {
    let n_emp = empirical_effective_dimension(decomp, lambda)?;
    let dg = effective_sample_size(n, cfg);
    let l3 = ell3(n, d, cfg);
    let cx = cfg.c_x;
    let lead = 1.0 + 4.0 * (13.0 * cx / libm::sqrt(lambda * l3) + 21.0 * cx * cx / (lambda * l3));
    let root_n = libm::sqrt(n_emp).max(1.0);
    Ok(lead * root_n / libm::sqrt(dg) + 1.0 / (dg * libm::sqrt(lambda)))
}

/// Grid length `K` for a sample of size `n`.
pub fn grid_budget(n: usize, cfg: &AdaptiveConfig) -> usize {
    match cfg.budget_rule {
        BudgetRule::Fixed => cfg.budget,
        BudgetRule::TheoryCapped => {
            let ratio = cfg.c_sa() / (cfg.q0_per_stage * libm::sqrt(effective_sample_size(n, cfg)));
            let k = libm::log(ratio) / libm::log(cfg.q);
            // Absorb round-off so that an exact power of q maps to its exponent.
            let k = libm::ceil(k - 1e-9);
            if !(k >= 1.0) {
                1
            } else if k >= cfg.budget as f64 {
                cfg.budget
            } else {
                k as usize
            }
        }
    }
}

/// Right-hand side of the stopping test at stage `t` of `T`.
pub fn adaptive_threshold(t: usize, horizon: usize, phi_next: f64, w: f64, cfg: &AdaptiveConfig) -> f64 {
    let remaining = (horizon + 2 - t) as f64;
    let l = cfg.log_two_over_delta();
    cfg.c_ada * 84.0 * (remaining * cfg.reward_bound + phi_next) * (1.0 + cfg.c_x) * w * l * l
}

fn check_theta(dataset: &BatchDataset, theta: &[f64]) -> Result<()> {
    check_len(dataset.feature_dim(), theta.len())?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("next-stage parameter"));
    }
    Ok(())
}

/// `max_a ⟨θ, x(state, a)⟩` over the candidate actions.
pub fn max_action_value(dataset: &BatchDataset, state: &[f64], theta: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for a in 0..dataset.action_table().len() {
        best = best.max(dot(&dataset.features(state, a)?, theta));
    }
    Ok(best)
}

fn continuation_values(dataset: &BatchDataset, t: usize, theta_next: &[f64]) -> Result<Vec<f64>> {
    check_theta(dataset, theta_next)?;
    if t == 0 || t > dataset.horizon() {
        return Err(Error::Index { index: t, len: dataset.horizon() });
    }
    if t == dataset.horizon() {
        if theta_next.iter().any(|&v| v != 0.0) {
            return Err(Error::domain("the parameter after the final stage is zero by definition"));
        }
        return Ok(vec![0.0; dataset.len()]);
    }
    (0..dataset.len())
        .map(|i| {
            let s = dataset.next_state(i, t).expect("stage below horizon");
            max_action_value(dataset, s, theta_next)
        })
        .collect()
}

/// Regression targets `y_{i,t} = r_{i,t} + max_a ⟨θ_{t+1}, x(s_{i,t+1}, a)⟩`.
///
/// The continuation uses the logged stage-`t+1` state; at the final stage
/// `theta_next` must be zero and `y = r`.
pub fn construct_targets(dataset: &BatchDataset, t: usize, theta_next: &[f64]) -> Result<Vec<f64>> {
    let cont = continuation_values(dataset, t, theta_next)?;
    Ok(dataset
        .trajectories()
        .iter()
        .zip(cont)
        .map(|(tr, c)| tr.rewards[t - 1] + c)
        .collect())
}

/// `Φ_{t+1}`: the largest `|⟨θ_{t+1}, x(s_{i,t+1}, a)⟩|` over trajectories and
/// candidate actions; zero at the final stage.
pub fn phi_bound(dataset: &BatchDataset, t: usize, theta_next: &[f64]) -> Result<f64> {
    check_theta(dataset, theta_next)?;
    if t == 0 || t > dataset.horizon() {
        return Err(Error::Index { index: t, len: dataset.horizon() });
    }
    if t == dataset.horizon() {
        return Ok(0.0);
    }
    let mut phi = 0.0f64;
    for i in 0..dataset.len() {
        let s = dataset.next_state(i, t).expect("stage below horizon");
        for a in 0..dataset.action_table().len() {
            phi = phi.max(dot(&dataset.features(s, a)?, theta_next).abs());
        }
    }
    Ok(phi)
}

/// Decomposed covariance and cross moment of one stage regression, shared by
/// every grid point.
#[derive(Debug, Clone)]
pub struct StageProblem {
    pub decomp: SpectralDecomposition,
    pub cross_moment: Vec<f64>,
    pub n: usize,
}

impl StageProblem {
    pub fn new(design: &StageDesign, targets: &[f64]) -> Result<Self> {
        if design.n() == 0 {
            return Err(Error::Empty("design"));
        }
        check_len(design.n(), targets.len())?;
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        let decomp = SpectralDecomposition::new(&empirical_covariance(design)?)?;
        Ok(StageProblem { decomp, cross_moment: design.cross_moment(targets)?, n: design.n() })
    }

    pub fn dim(&self) -> usize {
        self.decomp.dim()
    }

    pub fn fit(&self, kind: FilterKind, lambda: f64) -> Result<Vec<f64>> {
        apply_filter(&self.decomp, kind, lambda, &self.cross_moment)
    }
}

/// `θ = g_λ(Σ̂) Ê[x y]`.
pub fn fit_stage(design: &StageDesign, targets: &[f64], kind: FilterKind, lambda: f64) -> Result<Vec<f64>> {
    StageProblem::new(design, targets)?.fit(kind, lambda)
}

/// Trace of the adaptive scan at one stage. Vectors are aligned and in scan
/// order (`k = K, K−1, …, 1`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageFitReport {
    pub stage: usize,
    pub grid: Vec<(usize, f64)>,
    pub diff_norms: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub phi_next: f64,
    pub selected_k: usize,
    pub selected_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub k: usize,
    pub theta: Vec<f64>,
    pub report: StageFitReport,
}

/// Adaptive choice of `λ` for one stage regression.
pub fn select_lambda(
    problem: &StageProblem,
    kind: FilterKind,
    t: usize,
    horizon: usize,
    phi_next: f64,
    cfg: &AdaptiveConfig,
) -> Result<Selection> {
    let n = problem.n;
    let d = problem.dim();
    let big_k = grid_budget(n, cfg);
    let fit = |k: usize| {
        problem
            .fit(kind, cfg.grid_lambda(k))
            .and_then(|th| {
                if th.iter().all(|v| v.is_finite()) {
                    Ok(th)
                } else {
                    Err(Error::NonFinite("stage estimate"))
                }
            })
            .map_err(|e| Error::GridPoint { k, source: alloc::boxed::Box::new(e) })
    };

    let mut grid = Vec::with_capacity(big_k);
    let mut diff_norms = Vec::with_capacity(big_k);
    let mut thresholds = Vec::with_capacity(big_k);
    let mut selected = None;
    let mut upper = fit(big_k + 1)?;
    for k in (1..=big_k).rev() {
        let lambda_next = cfg.grid_lambda(k + 1);
        let current = fit(k)?;
        let diff = weighted_half_norm(&problem.decomp, lambda_next, &sub(&upper, &current))?;
        let w = compute_w(&problem.decomp, lambda_next, n, d, cfg)?;
        let tau = adaptive_threshold(t, horizon, phi_next, w, cfg);
        grid.push((k, cfg.grid_lambda(k)));
        diff_norms.push(diff);
        thresholds.push(tau);
        if selected.is_none() && diff >= tau {
            selected = Some((k, current.clone()));
        }
        upper = current;
    }
    let (k, theta) = match selected {
        Some(s) => s,
        None => (big_k, fit(big_k)?),
    };
    let lambda = cfg.grid_lambda(k);
    Ok(Selection {
        lambda,
        k,
        theta,
        report: StageFitReport {
            stage: t,
            grid,
            diff_norms,
            thresholds,
            phi_next,
            selected_k: k,
            selected_lambda: lambda,
        },
    })
}

/// Estimator that produced a [`ModelBundle`].
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Spectral(FilterSpec),
    LeastSquares,
    Lasso,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Spectral(f) => f.kind.name(),
            Method::LeastSquares => "ls",
            Method::Lasso => "lasso",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub t: usize,
    pub theta: Vec<f64>,
    /// Selected regularization; 0 for least squares.
    pub lambda: f64,
    /// Selected grid index; 0 for baselines.
    pub k: usize,
}

/// Learned per-stage parameters `θ_1..θ_T` with their training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub horizon: usize,
    pub feature_dim: usize,
    pub method: Method,
    /// Ordered by stage, `stages[t - 1].t == t`.
    pub stages: Vec<StageParams>,
    pub config: Option<AdaptiveConfig>,
    pub seed: u64,
    pub format_version: u32,
}

impl ModelBundle {
    pub fn theta(&self, t: usize) -> Option<&[f64]> {
        self.stages.get(t.wrapping_sub(1)).map(|s| s.theta.as_slice())
    }

    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.stages.iter().map(|s| s.theta.clone()).collect()
    }

    /// All-zero parameters of the right shape.
    pub fn zeros(horizon: usize, feature_dim: usize, method: Method) -> Self {
        ModelBundle {
            horizon,
            feature_dim,
            method,
            stages: (1..=horizon)
                .map(|t| StageParams { t, theta: vec![0.0; feature_dim], lambda: 0.0, k: 0 })
                .collect(),
            config: None,
            seed: 0,
            format_version: MODEL_FORMAT_VERSION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != self.horizon {
            return Err(Error::invalid("model has the wrong number of stages"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::invalid(alloc::format!("stage record {i} is labelled t={}", s.t)));
            }
            check_len(self.feature_dim, s.theta.len())?;
            if s.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model parameters"));
            }
        }
        Ok(())
    }
}

/// Runs backward induction with a per-stage estimator returning `(θ_t, λ_t, k_t)`.
fn backward_induction(
    dataset: &BatchDataset,
    mut stage_fit: impl FnMut(usize, &StageDesign, &[f64], &[f64]) -> Result<(Vec<f64>, f64, usize)>,
) -> Result<Vec<StageParams>> {
    let horizon = dataset.horizon();
    let d = dataset.feature_dim();
    let mut next = vec![0.0; d];
    let mut stages = Vec::with_capacity(horizon);
    for t in (1..=horizon).rev() {
        let mut run = || -> Result<StageParams> {
            let design = dataset.stage_design(t)?;
            let targets = construct_targets(dataset, t, &next)?;
            let (theta, lambda, k) = stage_fit(t, &design, &targets, &next)?;
            Ok(StageParams { t, theta, lambda, k })
        };
        let params = run().map_err(|e| e.at_stage(t))?;
        next = params.theta.clone();
        stages.push(params);
    }
    stages.reverse();
    Ok(stages)
}

/// The adaptive spectral Q-learner.
pub fn train(
    dataset: &BatchDataset,
    filter: &FilterSpec,
    cfg: &AdaptiveConfig,
) -> Result<(ModelBundle, Vec<StageFitReport>)> {
    filter.validate()?;
    let mut cfg = cfg.clone();
    cfg.reward_bound = dataset.reward_bound();
    cfg.validate()?;
    let horizon = dataset.horizon();
    let mut reports = Vec::with_capacity(horizon);
    let stages = backward_induction(dataset, |t, design, targets, next| {
        let phi = phi_bound(dataset, t, next)?;
        let problem = StageProblem::new(design, targets)?;
        let sel = select_lambda(&problem, filter.kind, t, horizon, phi, &cfg)?;
        reports.push(sel.report);
        Ok((sel.theta, sel.lambda, sel.k))
    })?;
    reports.reverse();
    Ok((
        ModelBundle {
            horizon,
            feature_dim: dataset.feature_dim(),
            method: Method::Spectral(filter.clone()),
            stages,
            config: Some(cfg),
            seed: 0,
            format_version: MODEL_FORMAT_VERSION,
        },
        reports,
    ))
}

/// Minimum-norm least squares via the eigendecomposition of `Σ̂`, dropping
/// directions with `σ ≤ 1e-10 σ_max`.
pub fn fit_least_squares(design: &StageDesign, targets: &[f64]) -> Result<Vec<f64>> {
    let problem = StageProblem::new(design, targets)?;
    Ok(least_squares_from(&problem))
}

fn least_squares_from(problem: &StageProblem) -> Vec<f64> {
    let tol = 1e-10 * problem.decomp.max_eigenvalue();
    problem
        .decomp
        .apply_fn(&problem.cross_moment, |s| if s > tol && s > 0.0 { 1.0 / s } else { 0.0 })
        .expect("dimensions fixed at construction")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub theta: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iters` ran out before the coordinate change fell below `tol`.
    pub converged: bool,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `(1/n)‖y − Xθ‖² + λ‖θ‖₁`.
pub fn fit_lasso(
    design: &StageDesign,
    targets: &[f64],
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::domain("lasso penalty must be nonnegative"));
    }
    if design.n() == 0 {
        return Err(Error::Empty("design"));
    }
    check_len(design.n(), targets.len())?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let gram = empirical_covariance(design)?;
    let c = design.cross_moment(targets)?;
    Ok(lasso_gram(&gram, &c, lambda, max_iters, tol))
}

fn lasso_gram(gram: &Matrix, c: &[f64], lambda: f64, max_iters: usize, tol: f64) -> LassoFit {
    let d = c.len();
    let mut theta = vec![0.0; d];
    // g = G θ, maintained incrementally.
    let mut g = vec![0.0; d];
    let half = 0.5 * lambda;
    for it in 1..=max_iters {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let a = gram[(j, j)];
            if a <= 0.0 {
                continue;
            }
            let rho = c[j] - g[j] + a * theta[j];
            let new = soft_threshold(rho, half) / a;
            let delta = new - theta[j];
            if delta != 0.0 {
                for (gk, &gjk) in g.iter_mut().zip(gram.row(j)) {
                    *gk += delta * gjk;
                }
                theta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return LassoFit { theta, iterations: it, converged: true };
        }
    }
    LassoFit { theta, iterations: max_iters, converged: false }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LassoConfig {
    pub grid: Vec<f64>,
    /// Fraction of each stage's rows held out to pick λ from the grid.
    pub validation_fraction: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            grid: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2],
            validation_fraction: 0.2,
            seed: 0,
            max_iters: 5000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    LeastSquares,
    Lasso(LassoConfig),
}

fn rmse(design: &StageDesign, theta: &[f64], targets: &[f64]) -> f64 {
    let n = design.n();
    let s: f64 = (0..n)
        .map(|i| {
            let e = dot(design.rows.row(i), theta) - targets[i];
            e * e
        })
        .sum();
    libm::sqrt(s / n as f64)
}

fn lasso_stage(design: &StageDesign, targets: &[f64], cfg: &LassoConfig) -> Result<(Vec<f64>, f64)> {
    let fit_all = |lambda: f64| fit_lasso(design, targets, lambda, cfg.max_iters, cfg.tol).map(|f| f.theta);
    match cfg.grid.as_slice() {
        [] => Err(Error::Empty("lasso grid")),
        [only] => Ok((fit_all(*only)?, *only)),
        grid => {
            let (fit_idx, val_idx) = split_indices(design.n(), 1.0 - cfg.validation_fraction, cfg.seed)?;
            let fit_design = design.select_rows(&fit_idx);
            let fit_targets: Vec<f64> = fit_idx.iter().map(|&i| targets[i]).collect();
            let val_design = design.select_rows(&val_idx);
            let val_targets: Vec<f64> = val_idx.iter().map(|&i| targets[i]).collect();
            let gram = empirical_covariance(&fit_design)?;
            let c = fit_design.cross_moment(&fit_targets)?;
            let mut best = (f64::INFINITY, grid[0]);
            for &lambda in grid {
                if !(lambda >= 0.0) {
                    return Err(Error::domain("lasso penalty must be nonnegative"));
                }
                let theta = lasso_gram(&gram, &c, lambda, cfg.max_iters, cfg.tol).theta;
                let err = rmse(&val_design, &theta, &val_targets);
                if err < best.0 {
                    best = (err, lambda);
                }
            }
            Ok((fit_all(best.1)?, best.1))
        }
    }
}

/// Backward induction with a baseline estimator at every stage.
pub fn train_baseline(dataset: &BatchDataset, baseline: &Baseline) -> Result<ModelBundle> {
    let (method, stages) = match baseline {
        Baseline::LeastSquares => (
            Method::LeastSquares,
            backward_induction(dataset, |_, design, targets, _| {
                Ok((fit_least_squares(design, targets)?, 0.0, 0))
            })?,
        ),
        Baseline::Lasso(cfg) => (
            Method::Lasso,
            backward_induction(dataset, |_, design, targets, _| {
                let (theta, lambda) = lasso_stage(design, targets, cfg)?;
                Ok((theta, lambda, 0))
            })?,
        ),
    };
    Ok(ModelBundle {
        horizon: dataset.horizon(),
        feature_dim: dataset.feature_dim(),
        method,
        stages,
        config: None,
        seed: match baseline {
            Baseline::Lasso(cfg) => cfg.seed,
            Baseline::LeastSquares => 0,
        },
        format_version: MODEL_FORMAT_VERSION,
    })
}

/// The four weighted norms of the error decomposition, all measured in
/// `‖(Σ + λI)^{1/2} ·‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    /// `θ⋄ − θ*`: noise-free targets against the truth.
    pub bias: f64,
    /// `θ⋄ − θ̂`: sampling noise in the exact-continuation targets.
    pub variance: f64,
    /// `θ − θ̂`: error from using the estimated next-stage parameter.
    pub multistage: f64,
    /// `θ − θ*`.
    pub total: f64,
}

/// Splits the stage error into bias, variance and multi-stage parts using the
/// three auxiliary fits on `targets_y` (estimated continuation),
/// `targets_ystar` (true continuation) and `targets_noisefree` (`E[y*|x]`).
#[allow(clippy::too_many_arguments)]
pub fn error_decomposition_diagnostic(
    design: &StageDesign,
    targets_y: &[f64],
    targets_ystar: &[f64],
    targets_noisefree: &[f64],
    lambda: f64,
    kind: FilterKind,
    theta_star: &[f64],
    sigma_true: &Matrix,
) -> Result<ErrorDecomposition> {
    let d = design.dim();
    check_len(d, theta_star.len())?;
    check_len(d, sigma_true.rows())?;
    check_len(d, sigma_true.cols())?;
    let problem = StageProblem::new(design, targets_y)?;
    let theta = problem.fit(kind, lambda)?;
    let hat = apply_filter(&problem.decomp, kind, lambda, &design.cross_moment(targets_ystar)?)?;
    let diamond = apply_filter(&problem.decomp, kind, lambda, &design.cross_moment(targets_noisefree)?)?;
    let truth = SpectralDecomposition::new(sigma_true)?;
    let norm = |v: Vec<f64>| weighted_half_norm(&truth, lambda, &v);
    Ok(ErrorDecomposition {
        bias: norm(sub(&diamond, theta_star))?,
        variance: norm(sub(&diamond, &hat))?,
        multistage: norm(sub(&theta, &hat))?,
        total: norm(sub(&theta, theta_star))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;

    fn cfg() -> AdaptiveConfig {
        AdaptiveConfig::for_filter(FilterKind::Tikhonov)
    }

    #[test]
    fn effective_sample_size_collapses_without_mixing() {
        assert_eq!(effective_sample_size(1000, &cfg()), 1000.0);
        assert_eq!(ell3(1000, 72, &cfg()), 1000.0);
        let mut c = cfg();
        c.b0 = 4.0;
        assert_eq!(effective_sample_size(10, &c), 20.0);
    }

    #[test]
    fn effective_sample_size_with_log_factor() {
        let mut c = cfg();
        c.c0 = 1.0;
        // choose c0 so that c1* n = e^e
        let target = libm::exp(core::f64::consts::E);
        c.c0 = target / (c.c1_star() * 1000.0);
        let v = effective_sample_size(1000, &c);
        assert!((v - 1000.0 / core::f64::consts::E).abs() < 1e-9);
        let small = effective_sample_size(10, &c);
        let mid = effective_sample_size(100, &c);
        assert!(small <= mid && mid <= v);
    }

    #[test]
    fn ell3_with_log_factor() {
        let mut c = cfg();
        let n = 1000;
        let d = 4;
        // b0 c0 n 2√d / C_x = e²  →  ℓ₃ = n b0 / (2·2)
        c.c0 = libm::exp(2.0) / (c.b0 * n as f64 * 2.0 * 2.0);
        let v = ell3(n, d, &c);
        assert!((v - n as f64 * c.b0 / 4.0).abs() < 1e-9);
        assert!(v <= n as f64 * c.b0 / 2.0);
    }

    #[test]
    fn threshold_examples() {
        let mut c = cfg();
        c.c_ada = 0.0;
        assert_eq!(adaptive_threshold(1, 3, 0.5, 1.0, &c), 0.0);
        c.c_ada = 1.0;
        c.reward_bound = 1.0;
        c.delta = 2.0 / core::f64::consts::E;
        let v = adaptive_threshold(4, 4, 0.0, 0.5, &c);
        assert!((v - 168.0).abs() < 1e-9);
        let doubled = adaptive_threshold(4, 4, 0.0, 1.0, &c);
        assert!((doubled - 2.0 * v).abs() < 1e-9);
    }

    #[test]
    fn budget_rules() {
        let mut c = cfg();
        assert_eq!(grid_budget(500, &c), 100);
        c.budget_rule = BudgetRule::TheoryCapped;
        // C_sa / (q_t √n) = 0.9^5 exactly
        let n = 400;
        c.q0_per_stage = c.c_sa() / (libm::pow(0.9, 5.0) * 20.0);
        assert_eq!(grid_budget(n, &c), 5);
        c.q0_per_stage = 1e-9;
        assert_eq!(grid_budget(n, &c), 1);
        c.q0_per_stage = 1e9;
        assert_eq!(grid_budget(n, &c), 100);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.q = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.c_tilde = 0.5;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.delta = 0.7;
        assert!(c.validate().is_err());
        assert!(cfg().theory_c_ada(1.0) > 8.0);
    }

    fn two_action_dataset() -> BatchDataset {
        // state (1,0); actions e1-like so that feature = normalize(1,0,a)
        let tr = Trajectory {
            states: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            actions: vec![0, 1],
            rewards: vec![1.0, 0.0],
        };
        BatchDataset::new(
            vec![tr],
            2,
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            2.0,
            true,
        )
        .unwrap()
    }

    #[test]
    fn targets_enumerate_actions() {
        let ds = two_action_dataset();
        // features of next state with action 0 / 1 are e3 / e4
        let theta = [0.0, 0.0, 0.2, -0.1];
        let y = construct_targets(&ds, 1, &theta).unwrap();
        assert!((y[0] - 1.2).abs() < 1e-15);
        let neg = [0.0, 0.0, -0.2, 0.1];
        let y = construct_targets(&ds, 1, &neg).unwrap();
        assert!((y[0] - 1.1).abs() < 1e-15);
        assert_eq!(construct_targets(&ds, 1, &[0.0; 4]).unwrap(), [1.0]);
        assert_eq!(construct_targets(&ds, 2, &[0.0; 4]).unwrap(), [0.0]);
        assert!(construct_targets(&ds, 2, &theta).is_err());
        assert!(construct_targets(&ds, 1, &[0.0; 3]).is_err());
    }

    #[test]
    fn phi_examples() {
        let ds = two_action_dataset();
        assert_eq!(phi_bound(&ds, 1, &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(phi_bound(&ds, 1, &[0.0, 0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(phi_bound(&ds, 2, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn lasso_kill_condition() {
        let design = StageDesign {
            stage: 1,
            rows: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]).unwrap(),
            rewards: vec![0.0; 3],
        };
        let y = [0.3, -0.2, 0.5];
        let c = design.cross_moment(&y).unwrap();
        let lmax = 2.0 * c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fit = fit_lasso(&design, &y, lmax, 100, 1e-12).unwrap();
        assert_eq!(fit.theta, [0.0, 0.0]);
        assert!(fit.converged);
        assert!(fit_lasso(&design, &y, -1.0, 10, 1e-9).is_err());
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let design = StageDesign {
            stage: 1,
            rows: Matrix::from_rows(&[[1.0, 0.9], [0.9, 1.0], [0.5, 0.4]]).unwrap(),
            rewards: vec![0.0; 3],
        };
        let fit = fit_lasso(&design, &[1.0, -1.0, 0.3], 1e-6, 1, 1e-15).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn least_squares_minimum_norm() {
        let zero = StageDesign { stage: 1, rows: Matrix::zeros(3, 2), rewards: vec![0.0; 3] };
        assert_eq!(fit_least_squares(&zero, &[1.0, 2.0, 3.0]).unwrap(), [0.0, 0.0]);
        let line = StageDesign {
            stage: 1,
            rows: Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            rewards: vec![0.0; 2],
        };
        let th = fit_least_squares(&line, &[0.7, -0.7]).unwrap();
        assert!((th[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn stage_fit_edge_cases() {
        let design = StageDesign {
            stage: 1,
            rows: Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            rewards: vec![0.0; 2],
        };
        assert_eq!(fit_stage(&design, &[0.0, 0.0], FilterKind::Tikhonov, 0.1).unwrap(), [0.0, 0.0]);
        // every eigenvalue is 0.5 < λ
        assert_eq!(fit_stage(&design, &[1.0, 2.0], FilterKind::Cutoff, 0.6).unwrap(), [0.0, 0.0]);
        assert!(matches!(
            fit_stage(&design, &[f64::NAN, 0.0], FilterKind::Cutoff, 0.6),
            Err(Error::NonFinite(_))
        ));
    }
}
