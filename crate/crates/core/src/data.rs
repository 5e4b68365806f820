//! Logged trajectories, the batch dataset, and per-stage regression designs.
//!
//! Stages are numbered `1..=T` throughout the public API. The feature vector
//! for stage `t` is the concatenation of the logged state features and the
//! chosen action's features, unit-normalized when the dataset asks for it.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{norm2, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One state feature vector per stage.
    pub states: Vec<Vec<f64>>,
    /// Index into the dataset's action table, per stage.
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// `concat(state, action)`, divided by its Euclidean norm when `normalize`.
pub fn feature_vector(state: &[f64], action: &[f64], normalize: bool) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(state.len() + action.len());
    x.extend_from_slice(state);
    x.extend_from_slice(action);
    if normalize {
        let n = norm2(&x);
        if n == 0.0 {
            return Err(Error::Degenerate("zero feature vector cannot be normalized"));
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("feature vector"));
        }
        for v in &mut x {
            *v /= n;
        }
    }
    Ok(x)
}

/// Immutable collection of logged trajectories over a shared action table.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    trajectories: Vec<Trajectory>,
    horizon: usize,
    state_dim: usize,
    action_dim: usize,
    action_table: Vec<Vec<f64>>,
    reward_bound: f64,
    normalize: bool,
    feature_mask: Option<Vec<bool>>,
}

impl BatchDataset {
    /// Validates and wraps the parts.
    pub fn new(
        trajectories: Vec<Trajectory>,
        horizon: usize,
        state_dim: usize,
        action_table: Vec<Vec<f64>>,
        reward_bound: f64,
        normalize: bool,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if trajectories.is_empty() {
            return Err(Error::Empty("dataset has no trajectories"));
        }
        if action_table.is_empty() {
            return Err(Error::Empty("action table"));
        }
        if !(reward_bound > 0.0) || !reward_bound.is_finite() {
            return Err(Error::invalid("reward bound must be positive and finite"));
        }
        let action_dim = action_table[0].len();
        for (a, row) in action_table.iter().enumerate() {
            if row.len() != action_dim {
                return Err(Error::invalid(alloc::format!(
                    "action {a} has {} features, expected {action_dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(alloc::format!("action {a} has non-finite features")));
            }
        }
        if state_dim + action_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let ds = BatchDataset {
            trajectories,
            horizon,
            state_dim,
            action_dim,
            action_table,
            reward_bound,
            normalize,
            feature_mask: None,
        };
        for (i, tr) in ds.trajectories.iter().enumerate() {
            ds.validate_trajectory(tr).map_err(|e| match e {
                Error::Invalid(msg) => Error::invalid(alloc::format!("trajectory {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(ds)
    }

    /// Checks one trajectory against this dataset's declared shape.
    pub fn validate_trajectory(&self, tr: &Trajectory) -> Result<()> {
        let t = self.horizon;
        if tr.states.len() != t || tr.actions.len() != t || tr.rewards.len() != t {
            return Err(Error::invalid(alloc::format!(
                "expected {t} states/actions/rewards, got {}/{}/{}",
                tr.states.len(),
                tr.actions.len(),
                tr.rewards.len()
            )));
        }
        for (s, state) in tr.states.iter().enumerate() {
            if state.len() != self.state_dim {
                return Err(Error::invalid(alloc::format!(
                    "state at stage {} has {} features, expected {}",
                    s + 1,
                    state.len(),
                    self.state_dim
                )));
            }
            if state.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(alloc::format!("non-finite state at stage {}", s + 1)));
            }
        }
        for (s, &a) in tr.actions.iter().enumerate() {
            if a >= self.action_table.len() {
                return Err(Error::invalid(alloc::format!(
                    "action {a} at stage {} is not in the action table (size {})",
                    s + 1,
                    self.action_table.len()
                )));
            }
        }
        for (s, &r) in tr.rewards.iter().enumerate() {
            if !r.is_finite() || r.abs() > self.reward_bound {
                return Err(Error::invalid(alloc::format!(
                    "reward {r} at stage {} violates |r| <= {}",
                    s + 1,
                    self.reward_bound
                )));
            }
        }
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn action_table(&self) -> &[Vec<f64>] {
        &self.action_table
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn normalize(&self) -> bool {
        self.normalize
    }

    pub fn feature_mask(&self) -> Option<&[bool]> {
        self.feature_mask.as_deref()
    }

    /// Same data with features outside `mask` zeroed in every design row and
    /// every candidate feature vector.
    pub fn with_feature_mask(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.feature_dim() {
            return Err(Error::Shape { expected: self.feature_dim(), found: mask.len() });
        }
        let mut ds = self.clone();
        ds.feature_mask = Some(mask);
        Ok(ds)
    }

    /// Keeps the trajectories at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("subset"));
        }
        let mut trajectories = Vec::with_capacity(indices.len());
        for &i in indices {
            let tr = self
                .trajectories
                .get(i)
                .ok_or(Error::Index { index: i, len: self.trajectories.len() })?;
            trajectories.push(tr.clone());
        }
        Ok(BatchDataset { trajectories, ..self.clone_header() })
    }

    fn clone_header(&self) -> Self {
        BatchDataset {
            trajectories: Vec::new(),
            horizon: self.horizon,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            action_table: self.action_table.clone(),
            reward_bound: self.reward_bound,
            normalize: self.normalize,
            feature_mask: self.feature_mask.clone(),
        }
    }

    /// Feature vector for `state` paired with action `action`, honoring the
    /// normalization flag and feature mask.
    pub fn features(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        let a = self
            .action_table
            .get(action)
            .ok_or(Error::Index { index: action, len: self.action_table.len() })?;
        let mut x = feature_vector(state, a, self.normalize)?;
        if let Some(mask) = &self.feature_mask {
            for (v, &keep) in x.iter_mut().zip(mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
        Ok(x)
    }

    /// Feature vectors of `state` paired with every candidate action.
    pub fn candidate_features(&self, state: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.action_table.len()).map(|a| self.features(state, a)).collect()
    }

    fn check_stage(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::Index { index: t, len: self.horizon });
        }
        Ok(())
    }

    /// Logged state of trajectory `i` entering stage `t + 1`, or `None` at the
    /// final stage.
    pub fn next_state(&self, i: usize, t: usize) -> Option<&[f64]> {
        if t < self.horizon {
            self.trajectories.get(i).map(|tr| tr.states[t].as_slice())
        } else {
            None
        }
    }

    /// Materializes `{x_{i,t}, r_{i,t}}` for stage `t`.
    pub fn stage_design(&self, t: usize) -> Result<StageDesign> {
        self.check_stage(t)?;
        let d = self.feature_dim();
        let mut rows = Matrix::zeros(self.len(), d);
        let mut rewards = Vec::with_capacity(self.len());
        for (i, tr) in self.trajectories.iter().enumerate() {
            let x = self.features(&tr.states[t - 1], tr.actions[t - 1])?;
            rows.row_mut(i).copy_from_slice(&x);
            rewards.push(tr.rewards[t - 1]);
        }
        Ok(StageDesign { stage: t, rows, rewards })
    }
}

/// The regression problem at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDesign {
    pub stage: usize,
    /// `n × d`, one feature vector per trajectory.
    pub rows: Matrix,
    pub rewards: Vec<f64>,
}

impl StageDesign {
    pub fn n(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// `Ê[x y] = (1/n) Σ x_i y_i`.
    pub fn cross_moment(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if self.n() == 0 {
            return Err(Error::Empty("design"));
        }
        let mut b = self.rows.transpose_mul_vec(targets)?;
        let inv = 1.0 / self.n() as f64;
        for v in &mut b {
            *v *= inv;
        }
        Ok(b)
    }

    /// Same design restricted to the given rows.
    pub fn select_rows(&self, idx: &[usize]) -> StageDesign {
        let rows = Matrix::from_fn(idx.len(), self.dim(), |r, c| self.rows[(idx[r], c)]);
        let rewards = idx.iter().map(|&i| self.rewards[i]).collect();
        StageDesign { stage: self.stage, rows, rewards }
    }
}

/// `Σ̂ = (1/n) Σ x_i x_iᵀ`.
pub fn empirical_covariance(design: &StageDesign) -> Result<Matrix> {
    let n = design.n();
    if n == 0 {
        return Err(Error::Empty("design"));
    }
    let d = design.dim();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        let x = design.rows.row(i);
        for r in 0..d {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for c in r..d {
                cov[(r, c)] += xr * x[c];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for r in 0..d {
        for c in r..d {
            let v = cov[(r, c)] * inv;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    Ok(cov)
}

/// Deterministic shuffled partition into `(train, test)`, each keeping the
/// original trajectory order.
pub fn split(dataset: &BatchDataset, train_fraction: f64, seed: u64) -> Result<(BatchDataset, BatchDataset)> {
    let idx = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.subset(&idx.0)?, dataset.subset(&idx.1)?))
}

/// Index form of [`split`].
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::domain(alloc::format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::domain(alloc::format!(
            "split of {n} trajectories at {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
