//! The five subcommands. Each builds its outputs in memory and commits them
//! atomically only after every step has succeeded.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spectral_q_core::data::BatchDataset;
use spectral_q_core::env::SyntheticEnv;
use spectral_q_core::interpret::{
    clipped_counts, clipped_weights, contribution_proportions, topk_feature_rewards, ClipFlag, ContributionReport,
    WeightEntry,
};
use spectral_q_core::learner::{train, Method, ModelBundle};
use spectral_q_core::policy::{direct_value_estimate, evaluate, rollout_reward, GreedyPolicy, MetricsReport};

use crate::config::{MethodName, RewardMode, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, Outputs};
use crate::pipeline::{self, SeedPlan};

/// Resolved paths and runtime switches for one invocation.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    pub env: Option<PathBuf>,
    pub jobs: usize,
    pub timing: bool,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str, command: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::config(format!("{command}: missing required path --{flag}")))
}

fn config_file(cfg: &RunConfig) -> Vec<u8> {
    io::to_json(cfg)
}

/// `gen`: environment, ground truth and the train/test batches.
pub fn gen(cfg: &RunConfig, inv: &Invocation) -> CliResult<Outputs> {
    let out = required(&inv.out, "out", "gen")?;
    let g = pipeline::generate(cfg, cfg.seed)?;
    let mut o = Outputs::new();
    o.add(out.join("env.json"), io::to_json(&g.env));
    o.add(out.join("ground_truth.json"), io::to_json(&g.truth));
    let mut put = |name: &str, ds: &BatchDataset| {
        let (h, t) = io::dataset_files(ds);
        o.add(out.join(name).join(io::HEADER_FILE), h);
        o.add(out.join(name).join(io::TRAJECTORIES_FILE), t);
    };
    put("train", &g.train);
    if let Some(test) = &g.test {
        put("test", test);
    }
    o.add(out.join("config.json"), config_file(cfg));
    Ok(o)
}

/// `train`: model bundle plus the per-stage selection trace.
pub fn train_cmd(cfg: &RunConfig, inv: &Invocation) -> CliResult<Outputs> {
    let out = required(&inv.out, "out", "train")?;
    let ds = io::load_dataset_dir(required(&inv.dataset, "dataset", "train")?)?;
    let (model, trace) = pipeline::fit(&ds, cfg.method, cfg)?;
    let mut o = Outputs::new();
    o.add(out.join("model.json"), io::model_json(&model));
    o.add(out.join("trace.json"), io::to_json(&trace));
    o.add(out.join("config.json"), config_file(cfg));
    Ok(o)
}

#[derive(Debug, Clone, Serialize)]
struct OfflineMetrics {
    method: String,
    direct_value: f64,
    n_trajectories: usize,
}

pub fn metrics_csv(m: &MetricsReport) -> String {
    format!(
        "method,parameter_gap,policy_gap,cumulative_reward\n{},{},{},{}\n",
        m.method, m.parameter_gap, m.policy_gap, m.cumulative_reward
    )
}

/// `eval`: full metrics against an environment's ground truth, or the
/// model-implied value alone when no environment is given.
pub fn eval(cfg: &RunConfig, inv: &Invocation) -> CliResult<Outputs> {
    let out = required(&inv.out, "out", "eval")?;
    let model_path = inv
        .models
        .first()
        .ok_or_else(|| CliError::config("eval: missing required path --model"))?;
    if inv.models.len() > 1 {
        return Err(CliError::config("eval: expects exactly one --model"));
    }
    let model = io::load_model(model_path)?;
    let ds = io::load_dataset_dir(required(&inv.dataset, "dataset", "eval")?)?;
    let mut o = Outputs::new();
    match &inv.env {
        Some(p) => {
            let env = io::load_env(p)?;
            let reward = pipeline::reward_source(cfg, Some(&env), cfg.seed)?;
            let m = evaluate(&model, &env.ground_truth(), &ds, reward).map_err(|e| CliError::core("evaluation", e))?;
            o.add(out.join("metrics.json"), io::to_json(&m));
            o.add(out.join("metrics.csv"), metrics_csv(&m).into_bytes());
        }
        None => {
            let v = direct_value_estimate(&model, &ds).map_err(|e| CliError::core("evaluation", e))?;
            if !v.is_finite() {
                return Err(CliError::Numeric("evaluation: direct value is not finite".into()));
            }
            let m = OfflineMetrics { method: model.method.name().into(), direct_value: v, n_trajectories: ds.len() };
            o.add(out.join("metrics.json"), io::to_json(&m));
            o.add(out.join("metrics.csv"), format!("method,direct_value\n{},{}\n", m.method, m.direct_value).into_bytes());
        }
    }
    o.add(out.join("config.json"), config_file(cfg));
    Ok(o)
}

#[derive(Debug, Clone, Serialize)]
struct LabeledContribution {
    label: String,
    method: String,
    report: ContributionReport,
}

#[derive(Debug, Clone, Serialize)]
struct CurvePoint {
    k: usize,
    reward: f64,
}

#[derive(Debug, Clone, Serialize)]
struct LabeledCurve {
    label: String,
    curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize)]
struct ClipSummary {
    pct: f64,
    counts: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Serialize)]
struct Report {
    contributions: Vec<LabeledContribution>,
    clipped: ClipSummary,
    topk: Vec<LabeledCurve>,
}

/// Retrains `model`'s estimator, reusing its stored adaptive constants.
fn retrain(model: &ModelBundle, cfg: &RunConfig, ds: &BatchDataset) -> CliResult<ModelBundle> {
    match (&model.method, &model.config) {
        (Method::Spectral(spec), Some(ac)) => {
            let (mut m, _) = train(ds, spec, ac).map_err(|e| CliError::core("retraining", e))?;
            m.seed = model.seed;
            Ok(m)
        }
        _ => {
            let method = MethodName::from_name(model.method.name()).expect("model methods are CLI methods");
            Ok(pipeline::fit(ds, method, cfg)?.0)
        }
    }
}

fn score(model: &ModelBundle, cfg: &RunConfig, env: Option<&SyntheticEnv>, ds: &BatchDataset) -> CliResult<f64> {
    let v = match (cfg.eval.reward, env) {
        (RewardMode::Rollout, Some(env)) => {
            let policy = GreedyPolicy::from_model(model, env.action_pool.clone(), true)?;
            rollout_reward(&policy, env, cfg.eval.episodes, SeedPlan::new(cfg.seed).eval)?
        }
        _ => direct_value_estimate(model, ds)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Numeric("top-k reward is not finite".into()))
    }
}

fn flag_name(f: Option<ClipFlag>) -> &'static str {
    match f {
        Some(ClipFlag::Top) => "top",
        Some(ClipFlag::Bottom) => "bottom",
        None => "",
    }
}

/// `report`: contribution proportions, pooled clipped-weight flags and,
/// with `report.ks` and a dataset, top-k feature reward curves.
pub fn report(cfg: &RunConfig, inv: &Invocation) -> CliResult<Outputs> {
    let out = required(&inv.out, "out", "report")?;
    if inv.models.is_empty() {
        return Err(CliError::config("report: missing required path --model"));
    }
    let models = inv.models.iter().map(|p| io::load_model(p)).collect::<CliResult<Vec<_>>>()?;
    let mut labels: Vec<String> = Vec::new();
    for m in &models {
        let base = m.method.name().to_string();
        let dup = labels.iter().filter(|l| l.split('@').next() == Some(base.as_str())).count();
        labels.push(if dup == 0 { base } else { format!("{base}@{dup}") });
    }
    let groups = cfg.report.groups.as_deref();

    let mut contributions = Vec::new();
    let mut contrib_csv = String::from("model,method,feature,proportion,rank\n");
    for (m, label) in models.iter().zip(&labels) {
        let r = contribution_proportions(m, groups).map_err(|e| CliError::core(&format!("contributions of {label}"), e))?;
        let mut rank = vec![0usize; r.proportions.len()];
        for (pos, &u) in r.ranking.iter().enumerate() {
            rank[u] = pos + 1;
        }
        for (u, p) in r.proportions.iter().enumerate() {
            let name = match &r.groups {
                Some(g) => g[u].name.clone(),
                None => format!("x{u}"),
            };
            contrib_csv.push_str(&format!("{label},{},{name},{p},{}\n", m.method.name(), rank[u]));
        }
        contributions.push(LabeledContribution { label: label.clone(), method: m.method.name().into(), report: r });
    }

    let entries: Vec<WeightEntry> = models.iter().zip(&labels).flat_map(|(m, l)| WeightEntry::from_model(l, m)).collect();
    let flags = clipped_weights(&entries, cfg.report.clip_pct);
    let mut clip_csv = String::from("model,feature,stage,value,flag\n");
    for (e, f) in entries.iter().zip(&flags) {
        clip_csv.push_str(&format!("{},{},{},{},{}\n", e.method, e.feature, e.stage, e.value, flag_name(*f)));
    }
    let clipped = ClipSummary { pct: cfg.report.clip_pct, counts: clipped_counts(&entries, &flags) };

    let mut topk = Vec::new();
    let mut o = Outputs::new();
    if !cfg.report.ks.is_empty() {
        let ds_path = inv
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::config("report: report.ks needs the training data (--dataset)"))?;
        let ds = io::load_dataset_dir(ds_path)?;
        let env = inv.env.as_deref().map(io::load_env).transpose()?;
        let mut csv = String::from("model,k,reward\n");
        for ((m, label), c) in models.iter().zip(&labels).zip(&contributions) {
            // keep CLI errors intact through the core callback signature
            let failure: RefCell<Option<CliError>> = RefCell::new(None);
            let stash = |e: CliError| {
                let msg = e.to_string();
                failure.borrow_mut().get_or_insert(e);
                spectral_q_core::Error::Invalid(msg)
            };
            let curve = topk_feature_rewards(
                &ds,
                &c.report,
                &cfg.report.ks,
                |masked| retrain(m, cfg, masked).map_err(stash),
                |fitted| score(fitted, cfg, env.as_ref(), &ds).map_err(stash),
            );
            let curve = match (curve, failure.into_inner()) {
                (Ok(c), _) => c,
                (Err(_), Some(e)) => return Err(e),
                (Err(e), None) => return Err(CliError::core(&format!("top-k curve of {label}"), e)),
            };
            for &(k, r) in &curve {
                csv.push_str(&format!("{label},{k},{r}\n"));
            }
            topk.push(LabeledCurve { label: label.clone(), curve: curve.into_iter().map(|(k, reward)| CurvePoint { k, reward }).collect() });
        }
        o.add(out.join("topk.csv"), csv.into_bytes());
    }

    o.add(out.join("contributions.csv"), contrib_csv.into_bytes());
    o.add(out.join("clipped.csv"), clip_csv.into_bytes());
    o.add(out.join("report.json"), io::to_json(&Report { contributions, clipped, topk }));
    o.add(out.join("config.json"), config_file(cfg));
    Ok(o)
}

/// `compare`: the methods × seeds table with mean/sd summary rows.
pub fn compare(cfg: &RunConfig, inv: &Invocation) -> CliResult<Outputs> {
    let out = required(&inv.out, "out", "compare")?;
    let result = pipeline::compare(cfg, inv.jobs, inv.timing)?;
    let mut o = Outputs::new();
    o.add(out.join("compare.csv"), result.to_csv().into_bytes());
    o.add(out.join("compare.json"), io::to_json(&result));
    o.add(out.join("config.json"), config_file(cfg));
    Ok(o)
}
