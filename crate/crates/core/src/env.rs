//! Synthetic video-recommendation environments with known linear optimal
//! Q-functions.
//!
//! A fixed user watches a sequence of videos. The state at stage `t` is
//! `(user features, current video features)`; choosing candidate `a` appends
//! the action features to form `x_t` (unit-normalized), and the next state
//! shows video `a`. The reward is
//!
//! ```text
//! r_t = u_t + ε_t + ⟨x_t, θ*_t⟩ − max_a' ⟨x(s_{t+1}, a'), θ*_{t+1}⟩,
//! u_t ~ U(low, high),  ε_t ~ N(0, σ²),  θ*_{T+1} = 0,
//! ```
//!
//! so the Bellman target `y*_t = r_t + V*_{t+1}(s_{t+1}) = u_t + ⟨x_t, θ*_t⟩ + ε_t`
//! is linear in `x_t` and `θ*_t` is exactly the optimal stage-`t` parameter.
//!
//! Randomness comes from `ChaCha8Rng` (rand_chacha 0.3) with Gaussian draws
//! from `rand_distr` 0.4's `StandardNormal` ziggurat sampler. Pools and
//! parameters use stream 0 of the environment seed; episode `i` of a
//! generated batch uses stream `i + 1` of the batch seed, so episodes are
//! independent of generation order.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{feature_vector, BatchDataset, Trajectory};
use crate::linalg::{dot, norm2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ThetaMode {
    /// A fresh `θ*_t` per stage, half of the entries near +1 and half near −1.
    TimeVarying,
    /// One parameter, equal weight on every feature, shared by all stages.
    Static,
}

/// Logging policy used to generate batch data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Behavior {
    #[default]
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct EnvSpec {
    pub n_users: usize,
    pub n_actions: usize,
    pub d_video: usize,
    pub d_user: usize,
    pub d_action: usize,
    pub horizon: usize,
    pub noise_sd: f64,
    pub reward_low: f64,
    pub reward_high: f64,
    pub theta_mode: ThetaMode,
}

impl EnvSpec {
    /// Performance-comparison environment: 10 users, 30 videos, d = 72, T = 20.
    pub fn a1() -> Self {
        EnvSpec {
            n_users: 10,
            n_actions: 30,
            d_video: 28,
            d_user: 20,
            d_action: 24,
            horizon: 20,
            noise_sd: 0.5,
            reward_low: -0.5,
            reward_high: 0.5,
            theta_mode: ThetaMode::TimeVarying,
        }
    }

    /// Interpretability environment: 5-dimensional blocks, T = 6, static θ*.
    pub fn a2() -> Self {
        EnvSpec {
            d_video: 5,
            d_user: 5,
            d_action: 5,
            horizon: 6,
            theta_mode: ThetaMode::Static,
            ..Self::a1()
        }
    }

    pub fn state_dim(&self) -> usize {
        self.d_user + self.d_video
    }

    pub fn feature_dim(&self) -> usize {
        self.d_user + self.d_video + self.d_action
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_actions == 0 || self.horizon == 0 {
            return Err(Error::domain("environment needs users, actions and a positive horizon"));
        }
        if self.d_video == 0 || self.d_user == 0 || self.d_action == 0 {
            return Err(Error::domain("feature blocks must be nonempty"));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::domain("noise_sd must be nonnegative"));
        }
        if !(self.reward_low <= self.reward_high) || !self.reward_high.is_finite() || !self.reward_low.is_finite() {
            return Err(Error::domain("reward range must satisfy low <= high"));
        }
        Ok(())
    }
}

/// `θ*` draw: first `⌈d/2⌉` entries from `N(1, 0.2²)`, the rest from
/// `N(−1, 0.2²)`, then unit-normalized.
pub fn sample_theta_star<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::domain("theta* needs at least two entries"));
    }
    let half = d.div_ceil(2);
    let mut theta: Vec<f64> = (0..d)
        .map(|j| {
            let z: f64 = rng.sample(StandardNormal);
            let mean = if j < half { 1.0 } else { -1.0 };
            mean + 0.2 * z
        })
        .collect();
    let n = norm2(&theta);
    for v in &mut theta {
        *v /= n;
    }
    Ok(theta)
}

fn gaussian_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Known parameters for a generated batch; `theta_star[t - 1]` is `θ*_t` and
/// the last entry is the terminal zero vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruth {
    pub theta_star: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn horizon(&self) -> usize {
        self.theta_star.len().saturating_sub(1)
    }

    /// `θ*_1..θ*_T`.
    pub fn stage_thetas(&self) -> &[Vec<f64>] {
        &self.theta_star[..self.horizon()]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticEnv {
    pub spec: EnvSpec,
    pub user_pool: Vec<Vec<f64>>,
    /// One video per candidate action.
    pub video_pool: Vec<Vec<f64>>,
    pub action_pool: Vec<Vec<f64>>,
    /// `T + 1` entries, the last one zero.
    pub theta_star: Vec<Vec<f64>>,
}

/// Position of an episode: which user is watching which video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub user: usize,
    pub video: usize,
}

impl SyntheticEnv {
    /// Draws pools and parameters from `seed`.
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_pool = gaussian_rows(spec.n_users, spec.d_user, &mut rng);
        let video_pool = gaussian_rows(spec.n_actions, spec.d_video, &mut rng);
        let action_pool = gaussian_rows(spec.n_actions, spec.d_action, &mut rng);
        let d = spec.feature_dim();
        let mut theta_star = match spec.theta_mode {
            ThetaMode::TimeVarying => (0..spec.horizon)
                .map(|_| sample_theta_star(d, &mut rng))
                .collect::<Result<Vec<_>>>()?,
            ThetaMode::Static => {
                let w = 1.0 / libm::sqrt(d as f64);
                vec![vec![w; d]; spec.horizon]
            }
        };
        theta_star.push(vec![0.0; d]);
        Ok(SyntheticEnv { spec, user_pool, video_pool, action_pool, theta_star })
    }

    /// Assembles an environment from explicit pools and stage parameters
    /// (`θ*_1..θ*_T`; the terminal zero is appended).
    pub fn from_parts(
        spec: EnvSpec,
        user_pool: Vec<Vec<f64>>,
        video_pool: Vec<Vec<f64>>,
        action_pool: Vec<Vec<f64>>,
        stage_thetas: Vec<Vec<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let shape_ok = |pool: &[Vec<f64>], rows: usize, cols: usize| {
            pool.len() == rows && pool.iter().all(|r| r.len() == cols && r.iter().all(|v| v.is_finite()))
        };
        if !shape_ok(&user_pool, spec.n_users, spec.d_user)
            || !shape_ok(&video_pool, spec.n_actions, spec.d_video)
            || !shape_ok(&action_pool, spec.n_actions, spec.d_action)
            || !shape_ok(&stage_thetas, spec.horizon, spec.feature_dim())
        {
            return Err(Error::invalid("pool or parameter shapes do not match the spec"));
        }
        let mut theta_star = stage_thetas;
        theta_star.push(vec![0.0; spec.feature_dim()]);
        Ok(SyntheticEnv { spec, user_pool, video_pool, action_pool, theta_star })
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth { theta_star: self.theta_star.clone() }
    }

    /// `θ*_t` for `t ∈ 1..=T+1`.
    pub fn theta(&self, t: usize) -> &[f64] {
        &self.theta_star[t - 1]
    }

    pub fn state_features(&self, s: EnvState) -> Vec<f64> {
        let mut v = self.user_pool[s.user].clone();
        v.extend_from_slice(&self.video_pool[s.video]);
        v
    }

    pub fn features(&self, s: EnvState, action: usize) -> Vec<f64> {
        feature_vector(&self.state_features(s), &self.action_pool[action], true)
            .expect("Gaussian pools are nonzero almost surely")
    }

    /// `Q*_t(s, a) = ⟨x(s, a), θ*_t⟩`.
    pub fn q_star(&self, t: usize, s: EnvState, action: usize) -> f64 {
        dot(&self.features(s, action), self.theta(t))
    }

    /// `V*_t(s) = max_a Q*_t(s, a)`; zero past the horizon.
    pub fn v_star(&self, t: usize, s: EnvState) -> f64 {
        if t > self.horizon() {
            return 0.0;
        }
        (0..self.n_actions()).map(|a| self.q_star(t, s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        EnvState { user: rng.gen_range(0..self.spec.n_users), video: rng.gen_range(0..self.n_actions()) }
    }

    fn reward_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = if self.spec.reward_high > self.spec.reward_low {
            rng.gen_range(self.spec.reward_low..self.spec.reward_high)
        } else {
            self.spec.reward_low
        };
        let z: f64 = rng.sample(StandardNormal);
        u + self.spec.noise_sd * z
    }

    /// Takes `action` at stage `t`; returns the reward and next state.
    pub fn step<R: Rng + ?Sized>(&self, t: usize, s: EnvState, action: usize, rng: &mut R) -> (f64, EnvState) {
        let next = EnvState { user: s.user, video: action };
        let r = self.reward_noise(rng) + self.q_star(t, s, action) - self.v_star(t + 1, next);
        (r, next)
    }

    /// One draw of `y*_t = u + ⟨x, θ*_t⟩ + ε` for a fixed feature vector.
    pub fn observe_target<R: Rng + ?Sized>(&self, x: &[f64], t: usize, rng: &mut R) -> Result<f64> {
        if t == 0 || t > self.horizon() + 1 {
            return Err(Error::Index { index: t, len: self.horizon() + 1 });
        }
        if x.len() != self.spec.feature_dim() {
            return Err(Error::Shape { expected: self.spec.feature_dim(), found: x.len() });
        }
        Ok(self.reward_noise(rng) + dot(x, self.theta(t)))
    }

    /// Logs `n` episodes under `behavior`.
    pub fn generate_trajectories(
        &self,
        n: usize,
        behavior: Behavior,
        seed: u64,
    ) -> Result<(BatchDataset, GroundTruth)> {
        if n == 0 {
            return Err(Error::Empty("episode count"));
        }
        let horizon = self.horizon();
        let mut trajectories = Vec::with_capacity(n);
        let mut max_abs = 0.0f64;
        for i in 0..n {
            let mut rng = episode_rng(seed, i);
            let mut s = self.initial_state(&mut rng);
            let mut tr = Trajectory {
                states: Vec::with_capacity(horizon),
                actions: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
            };
            for t in 1..=horizon {
                let a = match behavior {
                    Behavior::UniformRandom => rng.gen_range(0..self.n_actions()),
                };
                let (r, next) = self.step(t, s, a, &mut rng);
                max_abs = max_abs.max(r.abs());
                tr.states.push(self.state_features(s));
                tr.actions.push(a);
                tr.rewards.push(r);
                s = next;
            }
            trajectories.push(tr);
        }
        let bound = declared_reward_bound(max_abs);
        let ds = BatchDataset::new(
            trajectories,
            horizon,
            self.spec.state_dim(),
            self.action_pool.clone(),
            bound,
            true,
        )?;
        Ok((ds, self.ground_truth()))
    }
}

/// Reward bound written into generated datasets: at least 1.5, rounded up to
/// a multiple of 0.5 above the largest observed reward.
pub fn declared_reward_bound(max_abs_reward: f64) -> f64 {
    (libm::ceil(2.0 * max_abs_reward) / 2.0).max(1.5)
}

/// Independent generator for episode `index` of a batch seeded with `seed`.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Convenience: a fresh seeded generator for ad-hoc draws.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
