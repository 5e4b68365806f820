//! Experiment plumbing shared by the commands: seeded generation, fitting by
//! method name, evaluation and the methods × seeds comparison grid.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use spectral_q_core::data::{split, BatchDataset};
use spectral_q_core::env::{GroundTruth, SyntheticEnv};
use spectral_q_core::interpret::{clipped_counts, clipped_weights, WeightEntry};
use spectral_q_core::learner::{train, train_baseline, Baseline, ModelBundle, StageFitReport};
use spectral_q_core::policy::{evaluate, MetricsReport, RewardSource};
use spectral_q_core::spectral::FilterSpec;

use crate::config::{MethodName, RewardMode, RunConfig};
use crate::error::{CliError, CliResult};

/// Seeds for each random stage of one run, derived from the run seed by
/// fixed offsets so that every stage can be reproduced in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedPlan {
    pub env: u64,
    pub data: u64,
    pub eval: u64,
    pub split: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        SeedPlan {
            env: seed,
            data: seed.wrapping_add(1000),
            eval: seed.wrapping_add(2000),
            split: seed.wrapping_add(3000),
        }
    }
}

/// A synthetic environment with its logged batch, split for training and
/// evaluation.
#[derive(Debug, Clone)]
pub struct Generated {
    pub env: SyntheticEnv,
    pub truth: GroundTruth,
    pub train: BatchDataset,
    /// `None` when `train_fraction` is 1.
    pub test: Option<BatchDataset>,
}

impl Generated {
    /// Held-out data when there is any, the training batch otherwise.
    pub fn eval_set(&self) -> &BatchDataset {
        self.test.as_ref().unwrap_or(&self.train)
    }
}

pub fn generate(cfg: &RunConfig, seed: u64) -> CliResult<Generated> {
    let plan = SeedPlan::new(seed);
    let env = SyntheticEnv::new(cfg.env.clone(), plan.env).map_err(|e| CliError::core("environment", e))?;
    let (all, truth) = env
        .generate_trajectories(cfg.data.n_trajectories, cfg.data.behavior, plan.data)
        .map_err(|e| CliError::core("generating trajectories", e))?;
    let (train, test) = if cfg.data.train_fraction >= 1.0 {
        (all, None)
    } else {
        let (a, b) = split(&all, cfg.data.train_fraction, plan.split).map_err(|e| CliError::core("split", e))?;
        (a, Some(b))
    };
    Ok(Generated { env, truth, train, test })
}

/// Trains `method` on `ds`. Baselines return an empty trace.
pub fn fit(ds: &BatchDataset, method: MethodName, cfg: &RunConfig) -> CliResult<(ModelBundle, Vec<StageFitReport>)> {
    let ctx = format!("training {}", method.name());
    let (mut model, trace) = match (method, method.filter()) {
        (_, Some(kind)) => train(ds, &FilterSpec::new(kind), &cfg.learner.adaptive(kind)),
        (MethodName::Ls, None) => train_baseline(ds, &Baseline::LeastSquares).map(|m| (m, Vec::new())),
        (_, None) => train_baseline(ds, &Baseline::Lasso(cfg.lasso.clone())).map(|m| (m, Vec::new())),
    }
    .map_err(|e| CliError::core(&ctx, e))?;
    model.seed = cfg.seed;
    Ok((model, trace))
}

pub fn reward_source<'a>(cfg: &RunConfig, env: Option<&'a SyntheticEnv>, seed: u64) -> CliResult<RewardSource<'a>> {
    match (cfg.eval.reward, env) {
        (RewardMode::Rollout, Some(env)) => {
            Ok(RewardSource::Rollout { env, episodes: cfg.eval.episodes, seed: SeedPlan::new(seed).eval })
        }
        (RewardMode::Rollout, None) => {
            Err(CliError::config("eval.reward = rollout needs an environment (--env), or set eval.reward=direct"))
        }
        (RewardMode::Direct, _) => Ok(RewardSource::DirectValue),
    }
}

/// Mean absolute coefficient error over all stages and features.
pub fn weight_error(model: &ModelBundle, truth: &GroundTruth) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (est, tru) in model.thetas().iter().zip(truth.stage_thetas()) {
        for (a, b) in est.iter().zip(tru) {
            acc += (a - b).abs();
            n += 1;
        }
    }
    acc / n.max(1) as f64
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order
/// and the first failure (by index) is returned.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> CliResult<R> + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<CliResult<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for slot in slots.into_inner().expect("no worker panicked") {
        match slot {
            Some(r) => out.push(r?),
            // skipped after an earlier failure, which the loop has already returned
            None => unreachable!("tasks are only skipped after a failure"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub seed: u64,
    pub parameter_gap: f64,
    pub policy_gap: f64,
    pub reward: f64,
    /// Mean absolute coefficient error against the true parameters.
    pub weight_error: f64,
    /// Coefficients of this model flagged by the pooled clipped-weight rule.
    pub clipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    /// `"mean"` or `"sd"` (sample standard deviation; 0 for one seed).
    pub stat: String,
    pub parameter_gap: f64,
    pub policy_gap: f64,
    pub reward: f64,
    pub weight_error: f64,
    pub clipped: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareResult {
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    pub summary: Vec<SummaryRow>,
    /// Flag totals per method over every seed, pooled across all methods.
    pub clipped_counts: Vec<(String, usize)>,
    pub clip_pct: f64,
    pub metrics: Vec<MetricsReport>,
}

impl CompareResult {
    pub fn summary_for(&self, method: MethodName, stat: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method.name() && r.stat == stat)
    }

    pub fn rows_for(&self, method: MethodName) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(move |r| r.method == method.name())
    }

    pub fn to_csv(&self) -> String {
        let timing = self.rows.iter().any(|r| r.wall_clock_s.is_some());
        let mut out = String::from("method,seed,parameter_gap,policy_gap,reward,weight_error,clipped");
        out.push_str(if timing { ",wall_clock_s\n" } else { "\n" });
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.method, r.seed, r.parameter_gap, r.policy_gap, r.reward, r.weight_error, r.clipped
            ));
            if let Some(w) = r.wall_clock_s {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.method, r.stat, r.parameter_gap, r.policy_gap, r.reward, r.weight_error, r.clipped
            ));
            if let Some(w) = r.wall_clock_s {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Cell {
    model: ModelBundle,
    metrics: MetricsReport,
    weight_error: f64,
    seconds: f64,
}

/// Trains and scores every configured method on `compare.seeds` generated
/// problems, seeds `cfg.seed, cfg.seed + 1, …`.
pub fn compare(cfg: &RunConfig, jobs: usize, timing: bool) -> CliResult<CompareResult> {
    let seeds: Vec<u64> = (0..cfg.compare.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let problems = par_map(&seeds, jobs, |&s| generate(cfg, s))?;
    let methods = &cfg.compare.methods;
    let tasks: Vec<(usize, usize)> =
        (0..methods.len()).flat_map(|m| (0..seeds.len()).map(move |s| (m, s))).collect();
    let cells = par_map(&tasks, jobs, |&(m, s)| {
        let g = &problems[s];
        let run_cfg = RunConfig { seed: seeds[s], ..cfg.clone() };
        let start = Instant::now();
        let (model, _) = fit(&g.train, methods[m], &run_cfg)?;
        let seconds = start.elapsed().as_secs_f64();
        let reward = reward_source(cfg, Some(&g.env), seeds[s])?;
        let metrics = evaluate(&model, &g.truth, g.eval_set(), reward)
            .map_err(|e| CliError::core(&format!("evaluating {}", methods[m].name()), e))?;
        let weight_error = weight_error(&model, &g.truth);
        Ok(Cell { model, metrics, weight_error, seconds })
    })?;

    let mut entries = Vec::new();
    let mut spans = Vec::with_capacity(cells.len());
    for (&(m, _), c) in tasks.iter().zip(&cells) {
        let start = entries.len();
        entries.extend(WeightEntry::from_model(methods[m].name(), &c.model));
        spans.push(start..entries.len());
    }
    let flags = clipped_weights(&entries, cfg.report.clip_pct);
    let counts = clipped_counts(&entries, &flags);

    let rows: Vec<CompareRow> = tasks
        .iter()
        .zip(&cells)
        .zip(&spans)
        .map(|((&(m, s), c), span)| CompareRow {
            method: methods[m].name().to_string(),
            seed: seeds[s],
            parameter_gap: c.metrics.parameter_gap,
            policy_gap: c.metrics.policy_gap,
            reward: c.metrics.cumulative_reward,
            weight_error: c.weight_error,
            clipped: flags[span.clone()].iter().filter(|f| f.is_some()).count(),
            wall_clock_s: timing.then_some(c.seconds),
        })
        .collect();

    let mut summary = Vec::new();
    for &method in methods {
        let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.method == method.name()).collect();
        let col = |f: fn(&CompareRow) -> f64| mean_sd(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
        let pg = col(|r| r.parameter_gap);
        let po = col(|r| r.policy_gap);
        let rw = col(|r| r.reward);
        let we = col(|r| r.weight_error);
        let cl = col(|r| r.clipped as f64);
        let wc = timing.then(|| col(|r| r.wall_clock_s.unwrap_or(0.0)));
        for (stat, pick) in [("mean", 0usize), ("sd", 1)] {
            let get = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
            summary.push(SummaryRow {
                method: method.name().to_string(),
                stat: stat.to_string(),
                parameter_gap: get(pg),
                policy_gap: get(po),
                reward: get(rw),
                weight_error: get(we),
                clipped: get(cl),
                wall_clock_s: wc.map(get),
            });
        }
    }

    Ok(CompareResult {
        seeds,
        rows,
        summary,
        clipped_counts: counts,
        clip_pct: cfg.report.clip_pct,
        metrics: cells.into_iter().map(|c| c.metrics).collect(),
    })
}
