//! Independent dense-algebra oracles for the spectral machinery and learners.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spectral_q_core::data::{empirical_covariance, BatchDataset, StageDesign, Trajectory};
use spectral_q_core::learner::{
    construct_targets, error_decomposition_diagnostic, fit_least_squares, fit_stage, train, train_baseline,
    AdaptiveConfig, Baseline,
};
use spectral_q_core::linalg::{Matrix, SpectralDecomposition};
use spectral_q_core::spectral::{
    apply_filter, empirical_effective_dimension, weighted_half_norm, FilterKind, FilterSpec,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)])
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize, extra_ridge: f64) -> Matrix {
    let b = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let mut a = b.matmul(&b.transpose()).unwrap();
    for i in 0..d {
        a[(i, i)] += extra_ridge;
    }
    a
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> StageDesign {
    let mut rows = Matrix::zeros(n, d);
    for i in 0..n {
        let x = gaussian(rng, d);
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..d {
            rows[(i, j)] = x[j] / norm;
        }
    }
    StageDesign { stage: 1, rows, rewards: gaussian(rng, n) }
}

fn rel_err(a: &[f64], b: &DVector<f64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.norm().max(1e-300)
}

#[test]
fn decomposition_reconstructs_random_psd() {
    let mut r = rng(1);
    for d in [1, 2, 6, 15] {
        let a = random_psd(&mut r, d, 0.0);
        let dec = SpectralDecomposition::new(&a).unwrap();
        let recon = dec.reconstruct();
        let mut diff = 0.0;
        for i in 0..d {
            for j in 0..d {
                diff += (recon[(i, j)] - a[(i, j)]).powi(2);
            }
        }
        assert!(diff.sqrt() <= 1e-10 * a.frobenius_norm(), "d={d}");
        let u = to_na(dec.eigenvectors());
        let gram = u.transpose() * &u;
        assert!((gram - DMatrix::identity(d, d)).amax() <= 1e-10);
        assert!(dec.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        let mut oracle: Vec<f64> = to_na(&a).symmetric_eigenvalues().iter().copied().collect();
        oracle.sort_by(f64::total_cmp);
        for (x, y) in dec.eigenvalues().iter().zip(&oracle) {
            assert!((x - y.max(0.0)).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn tikhonov_matches_dense_ridge_solve() {
    let mut r = rng(2);
    for _ in 0..20 {
        let d = r.gen_range(2..=10);
        let sigma = random_psd(&mut r, d, 0.5);
        let v = gaussian(&mut r, d);
        let lambda = 10f64.powf(r.gen_range(-3.0..0.0));
        let dec = SpectralDecomposition::new(&sigma).unwrap();
        let got = apply_filter(&dec, FilterKind::Tikhonov, lambda, &v).unwrap();
        let m = to_na(&sigma) + DMatrix::identity(d, d) * lambda;
        let want = m.lu().solve(&DVector::from_vec(v)).unwrap();
        assert!(rel_err(&got, &want) < 1e-8);
    }
}

#[test]
fn cutoff_below_spectrum_is_the_inverse() {
    let mut r = rng(3);
    for _ in 0..20 {
        let d = r.gen_range(2..=8);
        let sigma = random_psd(&mut r, d, 1.0);
        let dec = SpectralDecomposition::new(&sigma).unwrap();
        let lambda = 0.5 * dec.eigenvalues()[0];
        let v = gaussian(&mut r, d);
        let got = apply_filter(&dec, FilterKind::Cutoff, lambda, &v).unwrap();
        let want = to_na(&sigma).lu().solve(&DVector::from_vec(v)).unwrap();
        assert!(rel_err(&got, &want) < 1e-8);
    }
}

#[test]
fn effective_dimension_matches_trace_oracle() {
    let mut r = rng(4);
    for _ in 0..10 {
        let sigma = random_psd(&mut r, 5, 0.0);
        let dec = SpectralDecomposition::new(&sigma).unwrap();
        let s = to_na(&sigma);
        let inv = (&s + DMatrix::identity(5, 5) * 0.1).try_inverse().unwrap();
        let want = (&s * inv).trace();
        let got = empirical_effective_dimension(&dec, 0.1).unwrap();
        assert!((got - want).abs() < 1e-10 * want.max(1.0));
    }
}

#[test]
fn weighted_half_norm_matches_matrix_square_root() {
    let mut r = rng(5);
    for _ in 0..10 {
        let d = 6;
        let sigma = random_psd(&mut r, d, 0.0);
        let dec = SpectralDecomposition::new(&sigma).unwrap();
        let v = gaussian(&mut r, d);
        let shifted = to_na(&sigma) + DMatrix::identity(d, d) * 0.2;
        let eig = shifted.symmetric_eigen();
        let root = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()))
            * eig.eigenvectors.transpose();
        let want = (root * DVector::from_vec(v.clone())).norm();
        let got = weighted_half_norm(&dec, 0.2, &v).unwrap();
        assert!((got - want).abs() < 1e-9 * want.max(1.0));
    }
}

#[test]
fn covariance_matches_naive_summation() {
    let mut r = rng(6);
    let design = random_design(&mut r, 20, 6);
    let got = empirical_covariance(&design).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let mut acc = 0.0;
            for k in 0..20 {
                acc += design.rows[(k, i)] * design.rows[(k, j)];
            }
            assert!((got[(i, j)] - acc / 20.0).abs() < 1e-12);
        }
    }
}

#[test]
fn fit_stage_tikhonov_equals_normal_equations() {
    let mut r = rng(7);
    for _ in 0..50 {
        let d = r.gen_range(1..=20);
        let n = r.gen_range(d..=200);
        let design = random_design(&mut r, n, d);
        let y = design.rewards.clone();
        let lambda = 10f64.powf(r.gen_range(-3.0..0.0));
        let got = fit_stage(&design, &y, FilterKind::Tikhonov, lambda).unwrap();
        let x = to_na(&design.rows);
        let lhs = x.transpose() * &x / n as f64 + DMatrix::identity(d, d) * lambda;
        let rhs = x.transpose() * DVector::from_vec(y) / n as f64;
        let want = lhs.lu().solve(&rhs).unwrap();
        assert!(rel_err(&got, &want) < 1e-8);
    }
}

#[test]
fn least_squares_matches_pseudo_inverse() {
    let mut r = rng(8);
    for (n, d) in [(50, 5), (4, 9), (30, 30)] {
        let design = random_design(&mut r, n, d);
        let y = design.rewards.clone();
        let got = fit_least_squares(&design, &y).unwrap();
        let x = to_na(&design.rows);
        let want = x.clone().pseudo_inverse(1e-10).unwrap() * DVector::from_vec(y);
        assert!(rel_err(&got, &want) < 1e-7, "n={n} d={d}");
    }
}

fn random_dataset(r: &mut ChaCha8Rng, n: usize, horizon: usize, ds: usize, da: usize, na: usize) -> BatchDataset {
    let table: Vec<Vec<f64>> = (0..na).map(|_| gaussian(r, da)).collect();
    let trajectories = (0..n)
        .map(|_| Trajectory {
            states: (0..horizon).map(|_| gaussian(r, ds)).collect(),
            actions: (0..horizon).map(|_| r.gen_range(0..na)).collect(),
            rewards: (0..horizon).map(|_| r.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    BatchDataset::new(trajectories, horizon, ds, table, 1.0, true).unwrap()
}

#[test]
fn singleton_grid_tikhonov_equals_dense_ridge_q_learner() {
    let mut r = rng(9);
    let ds = random_dataset(&mut r, 80, 4, 3, 2, 5);
    let mut cfg = AdaptiveConfig::for_filter(FilterKind::Tikhonov);
    cfg.budget = 1;
    let lambda = cfg.grid_lambda(1);
    let (model, _) = train(&ds, &FilterSpec::tikhonov(), &cfg).unwrap();

    // independent backward induction with explicit features and dense solves
    let d = ds.feature_dim();
    let feat = |s: &[f64], a: &[f64]| {
        let mut x: Vec<f64> = s.iter().chain(a).copied().collect();
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= n);
        DVector::from_vec(x)
    };
    let mut next = DVector::zeros(d);
    for t in (1..=ds.horizon()).rev() {
        let mut lhs = DMatrix::identity(d, d) * lambda;
        let mut rhs = DVector::zeros(d);
        let n = ds.len() as f64;
        for tr in ds.trajectories() {
            let x = feat(&tr.states[t - 1], &ds.action_table()[tr.actions[t - 1]]);
            let cont = if t == ds.horizon() {
                0.0
            } else {
                ds.action_table()
                    .iter()
                    .map(|a| feat(&tr.states[t], a).dot(&next))
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            lhs += &x * x.transpose() / n;
            rhs += &x * (tr.rewards[t - 1] + cont) / n;
        }
        let theta = lhs.lu().solve(&rhs).unwrap();
        assert!(rel_err(model.theta(t).unwrap(), &theta) < 1e-8, "stage {t}");
        next = theta;
    }
}

#[test]
fn single_stage_training_equals_direct_fit() {
    let mut r = rng(10);
    let ds = random_dataset(&mut r, 60, 1, 4, 3, 6);
    let design = ds.stage_design(1).unwrap();
    let targets = construct_targets(&ds, 1, &vec![0.0; ds.feature_dim()]).unwrap();
    assert_eq!(targets, design.rewards);
    let ls = train_baseline(&ds, &Baseline::LeastSquares).unwrap();
    assert_eq!(ls.theta(1).unwrap(), fit_least_squares(&design, &targets).unwrap().as_slice());
}

#[test]
fn error_decomposition_recomputed_from_scratch() {
    let mut r = rng(11);
    let d = 5;
    let design = random_design(&mut r, 40, d);
    let theta_star = gaussian(&mut r, d);
    let clean: Vec<f64> = (0..40).map(|i| design.rows.row(i).iter().zip(&theta_star).map(|(a, b)| a * b).sum()).collect();
    let ystar: Vec<f64> = clean.iter().map(|v| v + 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = ystar.iter().map(|v| v + 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
    let sigma_true = Matrix::from_diagonal(&[0.2; 5]);
    let lambda = 0.05;
    let dec =
        error_decomposition_diagnostic(&design, &y, &ystar, &clean, lambda, FilterKind::Tikhonov, &theta_star, &sigma_true)
            .unwrap();

    let x = to_na(&design.rows);
    let lhs = x.transpose() * &x / 40.0 + DMatrix::identity(d, d) * lambda;
    let solve = |t: &[f64]| lhs.clone().lu().solve(&(x.transpose() * DVector::from_column_slice(t) / 40.0)).unwrap();
    let (theta, hat, diamond) = (solve(&y), solve(&ystar), solve(&clean));
    let ts = DVector::from_vec(theta_star);
    let w = (0.2f64 + lambda).sqrt();
    assert!((dec.bias - w * (&diamond - &ts).norm()).abs() < 1e-10);
    assert!((dec.variance - w * (&diamond - &hat).norm()).abs() < 1e-10);
    assert!((dec.multistage - w * (&theta - &hat).norm()).abs() < 1e-10);
    assert!((dec.total - w * (&theta - &ts).norm()).abs() < 1e-10);
}
