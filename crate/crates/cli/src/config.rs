//! Run configuration: built-in defaults, experiment presets, a JSON config
//! file and `key=value` overrides, merged in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use spectral_q_core::env::{Behavior, EnvSpec};
use spectral_q_core::interpret::FeatureGroup;
use spectral_q_core::learner::{AdaptiveConfig, BudgetRule, LassoConfig};
use spectral_q_core::spectral::FilterKind;

use crate::error::{CliError, CliResult};

/// Environment variable consulted when no layer sets a seed.
pub const SEED_ENV: &str = "SBLQ_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    A1Performance,
    A2Interpretability,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::A1Performance => "a1-performance",
            Preset::A2Interpretability => "a2-interpretability",
        }
    }

    fn layer(self) -> Value {
        let env = match self {
            Preset::A1Performance => EnvSpec::a1(),
            Preset::A2Interpretability => EnvSpec::a2(),
        };
        serde_json::json!({
            "env": env,
            "data": { "n_trajectories": 1000, "train_fraction": 0.5 },
            "learner": LearnerConfig::default(),
            "report": { "clip_pct": 0.05 },
            "compare": { "seeds": 5 },
        })
    }
}

/// Estimators the CLI can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Ls,
    Lasso,
    Tikhonov,
    GradientDescent,
    Cutoff,
}

impl MethodName {
    pub const ALL: [MethodName; 5] =
        [MethodName::Ls, MethodName::Lasso, MethodName::Tikhonov, MethodName::GradientDescent, MethodName::Cutoff];

    pub fn name(self) -> &'static str {
        match self {
            MethodName::Ls => "ls",
            MethodName::Lasso => "lasso",
            MethodName::Tikhonov => "tikhonov",
            MethodName::GradientDescent => "gradient-descent",
            MethodName::Cutoff => "cutoff",
        }
    }

    pub fn filter(self) -> Option<FilterKind> {
        match self {
            MethodName::Tikhonov => Some(FilterKind::Tikhonov),
            MethodName::GradientDescent => Some(FilterKind::GradientDescent),
            MethodName::Cutoff => Some(FilterKind::Cutoff),
            MethodName::Ls | MethodName::Lasso => None,
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// One value per spectral filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerFilter {
    pub tikhonov: f64,
    #[serde(rename = "gradient-descent")]
    pub gradient_descent: f64,
    pub cutoff: f64,
}

impl PerFilter {
    pub fn get(&self, kind: FilterKind) -> f64 {
        match kind {
            FilterKind::Tikhonov => self.tikhonov,
            FilterKind::GradientDescent => self.gradient_descent,
            FilterKind::Cutoff => self.cutoff,
        }
    }

    fn from_fn(f: impl Fn(FilterKind) -> f64) -> Self {
        PerFilter {
            tikhonov: f(FilterKind::Tikhonov),
            gradient_descent: f(FilterKind::GradientDescent),
            cutoff: f(FilterKind::Cutoff),
        }
    }
}

/// Adaptive-rule constants, with the filter-specific ones keyed by filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub q: f64,
    pub q0: PerFilter,
    pub c_ada: PerFilter,
    pub budget: usize,
    pub budget_rule: BudgetRule,
    pub delta: f64,
    pub c_x: f64,
    pub b0: f64,
    pub c0: f64,
    pub gamma0: f64,
    pub c_tilde: f64,
    pub c0_effdim: f64,
    pub theta_norm_hint: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        let base = AdaptiveConfig::default();
        LearnerConfig {
            q: base.q,
            q0: PerFilter::from_fn(|k| AdaptiveConfig::for_filter(k).q0_per_stage),
            c_ada: PerFilter::from_fn(|k| AdaptiveConfig::for_filter(k).c_ada),
            budget: base.budget,
            budget_rule: base.budget_rule,
            delta: base.delta,
            c_x: base.c_x,
            b0: base.b0,
            c0: base.c0,
            gamma0: base.gamma0,
            c_tilde: base.c_tilde,
            c0_effdim: base.c0_effdim,
            theta_norm_hint: base.theta_norm_hint,
        }
    }
}

impl LearnerConfig {
    pub fn adaptive(&self, kind: FilterKind) -> AdaptiveConfig {
        AdaptiveConfig {
            q: self.q,
            q0_per_stage: self.q0.get(kind),
            budget: self.budget,
            budget_rule: self.budget_rule,
            c_ada: self.c_ada.get(kind),
            delta: self.delta,
            c_x: self.c_x,
            b0: self.b0,
            c0: self.c0,
            gamma0: self.gamma0,
            c_tilde: self.c_tilde,
            c0_effdim: self.c0_effdim,
            theta_norm_hint: self.theta_norm_hint,
            ..AdaptiveConfig::for_filter(kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_trajectories: usize,
    pub train_fraction: f64,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Simulated return of the greedy policy; needs an environment.
    Rollout,
    /// Model-implied value on the logged initial states.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub reward: RewardMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub clip_pct: f64,
    pub ks: Vec<usize>,
    pub groups: Option<Vec<FeatureGroup>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: usize,
    pub methods: Vec<MethodName>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub model: Vec<PathBuf>,
    pub env: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub seed: u64,
    pub method: MethodName,
    pub env: EnvSpec,
    pub data: DataConfig,
    pub learner: LearnerConfig,
    pub lasso: LassoConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
    pub compare: CompareConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            seed: 0,
            method: MethodName::Tikhonov,
            env: EnvSpec::a1(),
            data: DataConfig { n_trajectories: 1000, train_fraction: 0.5, behavior: Behavior::UniformRandom },
            learner: LearnerConfig::default(),
            lasso: LassoConfig::default(),
            eval: EvalConfig { episodes: 1000, reward: RewardMode::Rollout },
            report: ReportConfig { clip_pct: 0.05, ks: Vec::new(), groups: None },
            compare: CompareConfig { seeds: 5, methods: MethodName::ALL.to_vec() },
            paths: PathsConfig::default(),
        }
    }
}

type LockedField = (&'static str, fn(&RunConfig, &RunConfig) -> bool);

/// Fields a preset pins to the published experiment constants.
const LOCKED: [LockedField; 3] = [
    ("learner.q0", |a, b| a.learner.q0 == b.learner.q0),
    ("learner.c_ada", |a, b| a.learner.c_ada == b.learner.c_ada),
    ("learner.budget", |a, b| a.learner.budget == b.learner.budget),
];

/// Where a configuration comes from, lowest precedence first after defaults.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    /// `dotted.key=value`; values parse as JSON, falling back to a string.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    /// Value of [`SEED_ENV`], if set.
    pub env_seed: Option<String>,
}

impl ConfigSources {
    pub fn from_process_env(mut self) -> Self {
        self.env_seed = std::env::var(SEED_ENV).ok();
        self
    }
}

fn merge(base: &mut Value, layer: &Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, l) => *b = l.clone(),
    }
}

fn parse_override(item: &str) -> CliResult<Value> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("override `{item}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut out = value;
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), out);
        out = Value::Object(m);
    }
    Ok(out)
}

fn parse_preset(name: &str) -> CliResult<Preset> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| {
        CliError::config(format!("preset: unknown preset `{name}` (expected a1-performance or a2-interpretability)"))
    })
}

fn decode(value: Value) -> CliResult<RunConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("{path}: {}", e.into_inner()))
    })
}

fn read_file(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::config(format!("config {}: top level must be an object", path.display())));
    }
    Ok(value)
}

/// Builds the effective configuration.
///
/// Precedence: defaults < preset < `SBLQ_SEED` (seed only) < file <
/// overrides < `--seed`. A preset's locked fields may be restated but not
/// changed.
pub fn resolve(sources: &ConfigSources) -> CliResult<RunConfig> {
    let defaults = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let file = sources.file.as_deref().map(read_file).transpose()?;
    let overrides = sources.overrides.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;

    let file_preset = match file.as_ref().and_then(|f| f.get("preset")) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_preset(s)?),
        Some(other) => return Err(CliError::config(format!("preset: expected a string, found {other}"))),
    };
    let flag_preset = sources.preset.as_deref().map(parse_preset).transpose()?;
    let preset = match (flag_preset, file_preset) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::config(format!(
                "preset: --preset {} conflicts with config file preset {}",
                a.name(),
                b.name()
            )))
        }
        (a, b) => a.or(b),
    };

    let mut merged = defaults;
    if let Some(p) = preset {
        merge(&mut merged, &p.layer());
        merged["preset"] = serde_json::to_value(p).expect("preset serializes");
    }
    let preset_only = decode(merged.clone())?;

    let seed_set = sources.seed.is_some()
        || file.as_ref().is_some_and(|f| f.get("seed").is_some())
        || overrides.iter().any(|o| o.get("seed").is_some());
    if !seed_set {
        if let Some(raw) = &sources.env_seed {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}: `{raw}` is not an unsigned 64-bit integer")))?;
            merged["seed"] = Value::from(seed);
        }
    }
    if let Some(f) = &file {
        merge(&mut merged, f);
    }
    for o in &overrides {
        merge(&mut merged, o);
    }
    if let Some(seed) = sources.seed {
        merged["seed"] = Value::from(seed);
    }
    if preset.is_some() {
        merged["preset"] = serde_json::to_value(preset).expect("preset serializes");
    }
    let cfg = decode(merged)?;

    if let Some(p) = preset {
        for (field, same) in LOCKED {
            if !same(&cfg, &preset_only) {
                return Err(CliError::config(format!("{field}: locked by preset {}", p.name())));
            }
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Range checks that the type system does not express.
pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    let bad = |field: &str, msg: &str| Err(CliError::config(format!("{field}: {msg}")));
    cfg.env.validate().map_err(|e| CliError::config(format!("env: {e}")))?;
    for kind in FilterKind::ALL {
        cfg.learner.adaptive(kind).validate().map_err(|e| CliError::config(format!("learner ({kind}): {e}")))?;
    }
    if cfg.data.n_trajectories == 0 {
        return bad("data.n_trajectories", "must be at least 1");
    }
    if !(cfg.data.train_fraction > 0.0 && cfg.data.train_fraction <= 1.0) {
        return bad("data.train_fraction", "must lie in (0, 1]");
    }
    if cfg.eval.episodes == 0 {
        return bad("eval.episodes", "must be at least 1");
    }
    if !(cfg.report.clip_pct > 0.0 && cfg.report.clip_pct < 0.5) {
        return bad("report.clip_pct", "must lie in (0, 0.5)");
    }
    if cfg.report.ks.contains(&0) {
        return bad("report.ks", "entries must be at least 1");
    }
    if cfg.compare.seeds == 0 {
        return bad("compare.seeds", "must be at least 1");
    }
    if cfg.compare.methods.is_empty() {
        return bad("compare.methods", "must name at least one method");
    }
    if cfg.lasso.grid.is_empty() || cfg.lasso.grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return bad("lasso.grid", "must be a nonempty list of finite nonnegative penalties");
    }
    if !(cfg.lasso.validation_fraction > 0.0 && cfg.lasso.validation_fraction < 1.0) {
        return bad("lasso.validation_fraction", "must lie in (0, 1)");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources() -> ConfigSources {
        ConfigSources::default()
    }

    #[test]
    fn a1_preset_carries_the_experiment_constants() {
        let cfg = resolve(&ConfigSources { preset: Some("a1-performance".into()), ..sources() }).unwrap();
        assert_eq!(cfg.learner.q0, PerFilter { tikhonov: 100.0, gradient_descent: 100.0, cutoff: 30.0 });
        assert_eq!(cfg.learner.c_ada, PerFilter { tikhonov: 0.5e-5, gradient_descent: 1e-5, cutoff: 1e-4 });
        assert_eq!((cfg.learner.budget, cfg.env.horizon, cfg.data.n_trajectories), (100, 20, 1000));
        assert_eq!(cfg.preset, Some(Preset::A1Performance));
    }

    #[test]
    fn overrides_beat_file_beats_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"preset":"a2-interpretability","learner":{"q":0.7},"eval":{"episodes":10}}"#).unwrap();
        let cfg = resolve(&ConfigSources {
            file: Some(path),
            overrides: vec!["learner.q=0.8".into(), "method=cutoff".into()],
            ..sources()
        })
        .unwrap();
        assert_eq!(cfg.learner.q, 0.8);
        assert_eq!(cfg.eval.episodes, 10);
        assert_eq!(cfg.method, MethodName::Cutoff);
        assert_eq!(cfg.env, EnvSpec::a2());
        let mut expect = resolve(&ConfigSources { preset: Some("a2-interpretability".into()), ..sources() }).unwrap();
        expect.learner.q = 0.8;
        expect.eval.episodes = 10;
        expect.method = MethodName::Cutoff;
        assert_eq!(cfg, expect);
    }

    #[test]
    fn unknown_keys_are_rejected_by_path() {
        let err = resolve(&ConfigSources { overrides: vec!["learner.qq=1".into()], ..sources() }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learner"), "{err}");
        assert!(err.to_string().contains("qq"), "{err}");
        let err = resolve(&ConfigSources { overrides: vec!["eval.episodes=\"many\"".into()], ..sources() }).unwrap_err();
        assert!(err.to_string().starts_with("eval.episodes"), "{err}");
    }

    #[test]
    fn locked_fields_conflict_with_presets() {
        let locked = ConfigSources {
            preset: Some("a1-performance".into()),
            overrides: vec!["learner.c_ada.cutoff=0.1".into()],
            ..sources()
        };
        let err = resolve(&locked).unwrap_err();
        assert!(err.to_string().contains("learner.c_ada"), "{err}");
        // restating the preset value is fine, and without a preset anything goes
        let same = ConfigSources { overrides: vec!["learner.budget=100".into()], ..locked.clone() };
        assert!(resolve(&same).is_ok());
        assert!(resolve(&ConfigSources { preset: None, ..locked }).is_ok());
    }

    #[test]
    fn seed_precedence() {
        let env_only = ConfigSources { env_seed: Some("41".into()), ..sources() };
        assert_eq!(resolve(&env_only).unwrap().seed, 41);
        let with_set = ConfigSources { overrides: vec!["seed=5".into()], ..env_only.clone() };
        assert_eq!(resolve(&with_set).unwrap().seed, 5);
        let with_flag = ConfigSources { seed: Some(9), ..with_set };
        assert_eq!(resolve(&with_flag).unwrap().seed, 9);
        let bad = ConfigSources { env_seed: Some("x".into()), ..sources() };
        assert_eq!(resolve(&bad).unwrap_err().exit_code(), 2);
        assert_eq!(resolve(&sources()).unwrap().seed, 0);
    }

    #[test]
    fn range_and_preset_errors() {
        for o in ["data.train_fraction=0", "report.clip_pct=0.5", "learner.q=1.5", "compare.methods=[]", "bad"] {
            let e = resolve(&ConfigSources { overrides: vec![o.into()], ..sources() }).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{o}");
        }
        assert!(resolve(&ConfigSources { preset: Some("a3".into()), ..sources() }).is_err());
    }

    #[test]
    fn learner_config_round_trips_into_adaptive() {
        let l = LearnerConfig::default();
        for k in FilterKind::ALL {
            assert_eq!(l.adaptive(k), AdaptiveConfig::for_filter(k));
        }
    }
}
