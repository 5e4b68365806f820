//! Greedy policies and the evaluation metrics: parameter gap, policy gap,
//! simulated cumulative reward, an offline value estimate, and the
//! value-suboptimality bound.

use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::data::{feature_vector, BatchDataset};
use crate::env::{episode_rng, GroundTruth, SyntheticEnv};
use crate::learner::{max_action_value, ModelBundle};
use crate::linalg::{check_len, dot, sub};
use crate::{Error, Result};

/// Chooses an action index from the stage and state features.
pub trait Policy {
    fn action(&self, t: usize, state: &[f64], rng: &mut dyn RngCore) -> Result<usize>;
}

/// `π_t(s) = argmax_a ⟨x(s, a), θ_t⟩`, ties to the lowest index.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    thetas: Vec<Vec<f64>>,
    action_table: Vec<Vec<f64>>,
    normalize: bool,
}

impl GreedyPolicy {
    pub fn new(thetas: Vec<Vec<f64>>, action_table: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        if action_table.is_empty() {
            return Err(Error::Empty("action table"));
        }
        let d = thetas.first().map_or(0, Vec::len);
        if thetas.iter().any(|t| t.len() != d) {
            return Err(Error::invalid("stage parameters differ in length"));
        }
        let da = action_table[0].len();
        if d < da || action_table.iter().any(|a| a.len() != da) {
            return Err(Error::invalid("action features do not fit the parameter dimension"));
        }
        Ok(GreedyPolicy { thetas, action_table, normalize })
    }

    pub fn from_model(model: &ModelBundle, action_table: Vec<Vec<f64>>, normalize: bool) -> Result<Self> {
        model.validate()?;
        Self::new(model.thetas(), action_table, normalize)
    }

    /// Greedy in the true parameters of a synthetic environment.
    pub fn oracle(env: &SyntheticEnv) -> Self {
        let truth = env.ground_truth();
        GreedyPolicy {
            thetas: truth.stage_thetas().to_vec(),
            action_table: env.action_pool.clone(),
            normalize: true,
        }
    }

    pub fn horizon(&self) -> usize {
        self.thetas.len()
    }

    pub fn act(&self, t: usize, state: &[f64]) -> Result<usize> {
        let theta = self
            .thetas
            .get(t.wrapping_sub(1))
            .ok_or(Error::Index { index: t, len: self.thetas.len() })?;
        check_len(theta.len(), state.len() + self.action_table[0].len())?;
        let mut best = (0, f64::NEG_INFINITY);
        for (a, feats) in self.action_table.iter().enumerate() {
            let score = dot(&feature_vector(state, feats, self.normalize)?, theta);
            if score > best.1 {
                best = (a, score);
            }
        }
        Ok(best.0)
    }
}

impl Policy for GreedyPolicy {
    fn action(&self, t: usize, state: &[f64], _rng: &mut dyn RngCore) -> Result<usize> {
        self.act(t, state)
    }
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn action(&self, _t: usize, _state: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        if self.n_actions == 0 {
            return Err(Error::Empty("action set"));
        }
        Ok(rng.gen_range(0..self.n_actions))
    }
}

/// `sqrt((1/T) Σ_t ‖θ̂_t − θ*_t‖²)`.
pub fn parameter_gap(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_len(truth.len(), estimated.len())?;
    if estimated.is_empty() {
        return Err(Error::Empty("parameter sequence"));
    }
    let mut acc = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        check_len(t.len(), e.len())?;
        let diff = sub(e, t);
        acc += dot(&diff, &diff);
    }
    Ok(libm::sqrt(acc / estimated.len() as f64))
}

/// Per-stage mean squared difference between targets built from the learned
/// and the true next-stage parameters on `eval`, index `t - 1`.
pub fn policy_gap_by_stage(model: &ModelBundle, truth: &GroundTruth, eval: &BatchDataset) -> Result<Vec<f64>> {
    model.validate()?;
    let horizon = eval.horizon();
    if truth.horizon() != horizon || model.horizon != horizon {
        return Err(Error::invalid("model, ground truth and dataset horizons disagree"));
    }
    check_len(eval.feature_dim(), model.feature_dim)?;
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        if t == horizon {
            // θ̂_{T+1} = θ*_{T+1} = 0
            out.push(0.0);
            continue;
        }
        let est = model.theta(t + 1).expect("validated horizon");
        let tru = &truth.theta_star[t];
        let mut acc = 0.0;
        for i in 0..eval.len() {
            let s = eval.next_state(i, t).expect("stage below horizon");
            let e = max_action_value(eval, s, est)? - max_action_value(eval, s, tru)?;
            acc += e * e;
        }
        out.push(acc / eval.len() as f64);
    }
    Ok(out)
}

/// `sqrt((1/T) Σ_t mean_i (ŷ_{i,t} − y_{i,t})²)`.
pub fn policy_gap(model: &ModelBundle, truth: &GroundTruth, eval: &BatchDataset) -> Result<f64> {
    let per_stage = policy_gap_by_stage(model, truth, eval)?;
    Ok(libm::sqrt(per_stage.iter().sum::<f64>() / per_stage.len() as f64))
}

/// Mean undiscounted return of `policy` over `n_episodes` seeded episodes.
pub fn rollout_reward(policy: &dyn Policy, env: &SyntheticEnv, n_episodes: usize, seed: u64) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::Empty("episode count"));
    }
    let mut total = 0.0;
    for i in 0..n_episodes {
        let mut rng = episode_rng(seed, i);
        let mut s = env.initial_state(&mut rng);
        for t in 1..=env.horizon() {
            let a = policy.action(t, &env.state_features(s), &mut rng)?;
            if a >= env.n_actions() {
                return Err(Error::Index { index: a, len: env.n_actions() });
            }
            let (r, next) = env.step(t, s, a, &mut rng);
            total += r;
            s = next;
        }
    }
    Ok(total / n_episodes as f64)
}

/// Model-implied initial value `mean_i max_a ⟨θ_1, x(s_{i,1}, a)⟩`.
pub fn direct_value_estimate(model: &ModelBundle, dataset: &BatchDataset) -> Result<f64> {
    let theta = model.theta(1).ok_or(Error::Empty("model"))?;
    check_len(dataset.feature_dim(), theta.len())?;
    let mut acc = 0.0;
    for tr in dataset.trajectories() {
        acc += max_action_value(dataset, &tr.states[0], theta)?;
    }
    Ok(acc / dataset.len() as f64)
}

/// `Σ_t 2 μ^{t/2} ‖θ̂_t − θ*_t‖_{Σ̂_t}` with `Σ̂_t` from `dataset` and `μ` the
/// number of candidate actions.
pub fn comparison_diagnostic(estimated: &[Vec<f64>], truth: &[Vec<f64>], dataset: &BatchDataset) -> Result<f64> {
    check_len(dataset.horizon(), estimated.len())?;
    check_len(dataset.horizon(), truth.len())?;
    let mu = dataset.action_table().len() as f64;
    let mut bound = 0.0;
    for t in 1..=dataset.horizon() {
        let diff = sub(&estimated[t - 1], &truth[t - 1]);
        check_len(dataset.feature_dim(), diff.len())?;
        let design = dataset.stage_design(t)?;
        let mut q = 0.0;
        for i in 0..design.n() {
            let p = dot(design.rows.row(i), &diff);
            q += p * p;
        }
        let weighted = libm::sqrt(q / design.n() as f64);
        bound += 2.0 * libm::pow(mu, t as f64 / 2.0) * weighted;
    }
    Ok(bound)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageMetrics {
    pub t: usize,
    pub parameter_error: f64,
    pub policy_mse: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub method: alloc::string::String,
    pub parameter_gap: f64,
    pub policy_gap: f64,
    pub cumulative_reward: f64,
    pub per_stage: Vec<StageMetrics>,
}

/// How the reward column of a [`MetricsReport`] is produced.
pub enum RewardSource<'a> {
    Rollout { env: &'a SyntheticEnv, episodes: usize, seed: u64 },
    DirectValue,
}

/// All metrics of `model` against known parameters on `eval`.
pub fn evaluate(
    model: &ModelBundle,
    truth: &GroundTruth,
    eval: &BatchDataset,
    reward: RewardSource<'_>,
) -> Result<MetricsReport> {
    let estimated = model.thetas();
    let stage_truth = truth.stage_thetas();
    let parameter_gap = parameter_gap(&estimated, stage_truth)?;
    let mse = policy_gap_by_stage(model, truth, eval)?;
    let policy_gap = libm::sqrt(mse.iter().sum::<f64>() / mse.len() as f64);
    let cumulative_reward = match reward {
        RewardSource::Rollout { env, episodes, seed } => {
            let policy = GreedyPolicy::from_model(model, env.action_pool.clone(), true)?;
            rollout_reward(&policy, env, episodes, seed)?
        }
        RewardSource::DirectValue => direct_value_estimate(model, eval)?,
    };
    let per_stage = (1..=model.horizon)
        .map(|t| {
            let diff = sub(&estimated[t - 1], &stage_truth[t - 1]);
            StageMetrics {
                t,
                parameter_error: libm::sqrt(dot(&diff, &diff)),
                policy_mse: mse[t - 1],
                lambda: model.stages[t - 1].lambda,
            }
        })
        .collect();
    let report = MetricsReport {
        method: model.method.name().into(),
        parameter_gap,
        policy_gap,
        cumulative_reward,
        per_stage,
    };
    if !(report.parameter_gap.is_finite() && report.policy_gap.is_finite() && report.cumulative_reward.is_finite()) {
        return Err(Error::NonFinite("metrics"));
    }
    Ok(report)
}
