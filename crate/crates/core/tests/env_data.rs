use spectral_q_core::data::{split, BatchDataset, Trajectory};
use spectral_q_core::env::{episode_rng, sample_theta_star, seeded_rng, Behavior, EnvSpec, SyntheticEnv, ThetaMode};
use spectral_q_core::learner::{
    construct_targets, fit_lasso, phi_bound, train, train_baseline, AdaptiveConfig, Baseline,
};
use spectral_q_core::linalg::dot;
use spectral_q_core::policy::{
    comparison_diagnostic, direct_value_estimate, parameter_gap, policy_gap, rollout_reward, GreedyPolicy,
    UniformPolicy,
};
use spectral_q_core::spectral::{FilterKind, FilterSpec};

fn small_spec() -> EnvSpec {
    EnvSpec {
        n_users: 40,
        n_actions: 6,
        d_video: 3,
        d_user: 3,
        d_action: 2,
        horizon: 3,
        ..EnvSpec::a1()
    }
}

#[test]
fn presets_have_the_published_shapes() {
    let a1 = EnvSpec::a1();
    assert_eq!((a1.n_users, a1.n_actions, a1.d_video, a1.d_user, a1.d_action), (10, 30, 28, 20, 24));
    assert_eq!((a1.horizon, a1.noise_sd, a1.feature_dim()), (20, 0.5, 72));
    let a2 = EnvSpec::a2();
    assert_eq!((a2.d_video, a2.d_user, a2.d_action, a2.horizon, a2.feature_dim()), (5, 5, 5, 6, 15));
    assert_eq!(a2.theta_mode, ThetaMode::Static);
    let env = SyntheticEnv::new(a2, 3).unwrap();
    assert!(env.theta_star[..6].windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn environments_are_reproducible_and_unit_norm() {
    let a = SyntheticEnv::new(EnvSpec::a1(), 7).unwrap();
    let b = SyntheticEnv::new(EnvSpec::a1(), 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, SyntheticEnv::new(EnvSpec::a1(), 8).unwrap());
    assert_eq!(a.theta_star.len(), 21);
    for th in &a.theta_star[..20] {
        assert!((dot(th, th).sqrt() - 1.0).abs() < 1e-12);
    }
    assert!(a.theta_star[20].iter().all(|&v| v == 0.0));
}

#[test]
fn theta_star_halves_have_opposite_signs() {
    for seed in 0..100 {
        let th = sample_theta_star(72, &mut seeded_rng(seed)).unwrap();
        let first: f64 = th[..36].iter().sum::<f64>() / 36.0;
        let second: f64 = th[36..].iter().sum::<f64>() / 36.0;
        assert!(first > 0.0 && second < 0.0);
        assert_eq!(th, sample_theta_star(72, &mut seeded_rng(seed)).unwrap());
    }
    assert!(sample_theta_star(1, &mut seeded_rng(0)).is_err());
}

#[test]
fn generated_batches_satisfy_dataset_invariants() {
    let env = SyntheticEnv::new(EnvSpec::a1(), 1).unwrap();
    let (ds, gt) = env.generate_trajectories(50, Behavior::UniformRandom, 2).unwrap();
    assert_eq!((ds.len(), ds.horizon(), ds.feature_dim()), (50, 20, 72));
    assert_eq!(gt.horizon(), 20);
    for t in 1..=20 {
        let design = ds.stage_design(t).unwrap();
        for i in 0..design.n() {
            let r = design.rows.row(i);
            assert!((dot(r, r).sqrt() - 1.0).abs() < 1e-10);
        }
    }
    for tr in ds.trajectories() {
        assert!(tr.rewards.iter().all(|r| r.abs() <= ds.reward_bound()));
        ds.validate_trajectory(tr).unwrap();
    }
    let (again, _) = env.generate_trajectories(50, Behavior::UniformRandom, 2).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn bellman_targets_are_linear_in_the_true_parameters() {
    // noise-free rewards: constructing targets with θ*_{t+1} gives exactly ⟨x_t, θ*_t⟩
    let spec = EnvSpec { noise_sd: 0.0, reward_low: 0.0, reward_high: 0.0, ..small_spec() };
    let env = SyntheticEnv::new(spec, 4).unwrap();
    let (ds, gt) = env.generate_trajectories(30, Behavior::UniformRandom, 5).unwrap();
    for t in 1..=ds.horizon() {
        let y = construct_targets(&ds, t, &gt.theta_star[t]).unwrap();
        let design = ds.stage_design(t).unwrap();
        for i in 0..ds.len() {
            assert!((y[i] - dot(design.rows.row(i), &gt.theta_star[t - 1])).abs() < 1e-12);
        }
    }
}

#[test]
fn least_squares_recovers_noise_free_parameters() {
    let spec = EnvSpec { noise_sd: 0.0, reward_low: 0.0, reward_high: 0.0, ..small_spec() };
    let env = SyntheticEnv::new(spec, 6).unwrap();
    let (ds, gt) = env.generate_trajectories(400, Behavior::UniformRandom, 7).unwrap();
    let model = train_baseline(&ds, &Baseline::LeastSquares).unwrap();
    for t in 1..=ds.horizon() {
        let err: f64 = model.theta(t).unwrap().iter().zip(&gt.theta_star[t - 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "stage {t}: {err}");
    }
}

#[test]
fn observed_targets_concentrate_on_the_linear_mean() {
    let env = SyntheticEnv::new(small_spec(), 8).unwrap();
    let x = env.features(spectral_q_core::env::EnvState { user: 0, video: 1 }, 2);
    let mean = dot(&x, env.theta(1));
    let mut rng = seeded_rng(9);
    let draws = 100_000;
    let avg: f64 = (0..draws).map(|_| env.observe_target(&x, 1, &mut rng).unwrap()).sum::<f64>() / draws as f64;
    assert!((avg - mean).abs() < 3.0 * (0.5 + 0.29) / (draws as f64).sqrt());

    let quiet = SyntheticEnv::new(EnvSpec { noise_sd: 0.0, ..small_spec() }, 8).unwrap();
    let last = quiet.observe_target(&x, quiet.horizon() + 1, &mut rng).unwrap();
    assert!((-0.5..=0.5).contains(&last));
}

#[test]
fn oracle_policy_dominates_and_telescopes() {
    let spec = EnvSpec { noise_sd: 0.0, reward_low: 0.0, reward_high: 0.0, ..small_spec() };
    let env = SyntheticEnv::new(spec, 10).unwrap();
    let oracle = GreedyPolicy::oracle(&env);
    let best = rollout_reward(&oracle, &env, 200, 11).unwrap();
    let random = rollout_reward(&UniformPolicy { n_actions: env.n_actions() }, &env, 200, 11).unwrap();
    assert!(best >= random);
    // with zero noise the optimal return telescopes to V*_1 at the start state
    let mut expect = 0.0;
    for i in 0..200 {
        let s = env.initial_state(&mut episode_rng(11, i));
        expect += env.v_star(1, s);
    }
    assert!((best - expect / 200.0).abs() < 1e-10);
}

#[test]
fn metrics_on_the_truth_vanish() {
    let env = SyntheticEnv::new(small_spec(), 12).unwrap();
    let (ds, gt) = env.generate_trajectories(20, Behavior::UniformRandom, 13).unwrap();
    let mut model = train_baseline(&ds, &Baseline::LeastSquares).unwrap();
    for (s, th) in model.stages.iter_mut().zip(gt.stage_thetas()) {
        s.theta = th.clone();
    }
    assert_eq!(parameter_gap(&model.thetas(), gt.stage_thetas()).unwrap(), 0.0);
    assert_eq!(policy_gap(&model, &gt, &ds).unwrap(), 0.0);
    assert_eq!(comparison_diagnostic(&model.thetas(), gt.stage_thetas(), &ds).unwrap(), 0.0);
    assert!(direct_value_estimate(&model, &ds).unwrap().is_finite());
}

#[test]
fn trained_models_beat_the_zero_model_on_a_well_posed_batch() {
    let env = SyntheticEnv::new(small_spec(), 14).unwrap();
    let (ds, gt) = env.generate_trajectories(300, Behavior::UniformRandom, 15).unwrap();
    let zero = parameter_gap(&vec![vec![0.0; 8]; 3], gt.stage_thetas()).unwrap();
    for kind in FilterKind::ALL {
        let (model, reports) = train(&ds, &FilterSpec::new(kind), &AdaptiveConfig::for_filter(kind)).unwrap();
        assert_eq!(reports.len(), 3);
        for (r, s) in reports.iter().zip(&model.stages) {
            assert_eq!(r.selected_lambda, s.lambda);
            assert!(r.grid.iter().any(|&(k, l)| k == s.k && l == s.lambda));
        }
        let gap = parameter_gap(&model.thetas(), gt.stage_thetas()).unwrap();
        assert!(gap.is_finite() && gap < zero, "{kind}: {gap} vs {zero}");
        let again = train(&ds, &FilterSpec::new(kind), &AdaptiveConfig::for_filter(kind)).unwrap().0;
        assert_eq!(model, again);
    }
}

#[test]
fn targets_are_bounded_by_reward_plus_phi() {
    let env = SyntheticEnv::new(small_spec(), 16).unwrap();
    let (ds, gt) = env.generate_trajectories(40, Behavior::UniformRandom, 17).unwrap();
    for t in 1..ds.horizon() {
        let next = &gt.theta_star[t];
        let y = construct_targets(&ds, t, next).unwrap();
        let bound = ds.reward_bound() + phi_bound(&ds, t, next).unwrap();
        assert!(y.iter().all(|v| v.abs() <= bound + 1e-12));
    }
}

#[test]
fn lasso_kkt_conditions_hold() {
    let env = SyntheticEnv::new(small_spec(), 18).unwrap();
    let (ds, _) = env.generate_trajectories(200, Behavior::UniformRandom, 19).unwrap();
    let design = ds.stage_design(ds.horizon()).unwrap();
    let y = design.rewards.clone();
    let lambda = 0.01;
    let fit = fit_lasso(&design, &y, lambda, 20_000, 1e-12).unwrap();
    assert!(fit.converged);
    let n = design.n() as f64;
    for j in 0..design.dim() {
        let mut g = 0.0;
        for i in 0..design.n() {
            let row = design.rows.row(i);
            g += row[j] * (y[i] - dot(row, &fit.theta));
        }
        g /= n;
        if fit.theta[j] == 0.0 {
            assert!(g.abs() <= lambda / 2.0 + 1e-8);
        } else {
            assert!((g - lambda / 2.0 * fit.theta[j].signum()).abs() < 1e-6);
        }
    }
}

#[test]
fn split_halves_a_thousand_trajectories() {
    let tr = Trajectory { states: vec![vec![1.0]], actions: vec![0], rewards: vec![0.0] };
    let ds = BatchDataset::new(vec![tr; 1000], 1, 1, vec![vec![1.0]], 1.0, true).unwrap();
    let (a, b) = split(&ds, 0.5, 7).unwrap();
    assert_eq!((a.len(), b.len()), (500, 500));
    assert!(split(&ds, 1.0, 7).is_err());
}
