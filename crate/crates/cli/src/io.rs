//! On-disk formats: dataset header + JSON Lines trajectories, model bundles,
//! environments and ground truth, plus atomic output staging.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spectral_q_core::data::{BatchDataset, Trajectory};
use spectral_q_core::env::{GroundTruth, SyntheticEnv};
use spectral_q_core::learner::{AdaptiveConfig, Method, ModelBundle, StageParams, MODEL_FORMAT_VERSION};
use spectral_q_core::spectral::{FilterKind, FilterSpec};

use crate::error::{CliError, CliResult};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "header.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub horizon: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub reward_bound: f64,
    pub normalize: bool,
    pub action_table: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        CliError::data(format!("{}: line {}: field `{field}`: {inner}", path.display(), inner.line()))
    })
}

pub fn header_of(ds: &BatchDataset) -> DatasetHeader {
    DatasetHeader {
        version: DATASET_FORMAT_VERSION,
        horizon: ds.horizon(),
        state_dim: ds.state_dim(),
        action_dim: ds.action_dim(),
        reward_bound: ds.reward_bound(),
        normalize: ds.normalize(),
        action_table: ds.action_table().to_vec(),
    }
}

fn check_record(h: &DatasetHeader, r: &TrajectoryRecord) -> Result<(), String> {
    let len = |field: &str, found: usize, expected: usize| {
        if found == expected {
            Ok(())
        } else {
            Err(format!("field `{field}` has length {found}, expected {expected}"))
        }
    };
    len("states", r.states.len(), h.horizon)?;
    len("actions", r.actions.len(), h.horizon)?;
    len("rewards", r.rewards.len(), h.horizon)?;
    for (t, s) in r.states.iter().enumerate() {
        len(&format!("states[{t}]"), s.len(), h.state_dim)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(format!("field `states[{t}]` is not finite"));
        }
    }
    for (t, &a) in r.actions.iter().enumerate() {
        if a >= h.action_table.len() {
            return Err(format!("field `actions[{t}]` = {a} is outside the action table of {}", h.action_table.len()));
        }
    }
    for (t, &v) in r.rewards.iter().enumerate() {
        if !v.is_finite() || v.abs() > h.reward_bound {
            return Err(format!("field `rewards[{t}]` = {v} violates the reward bound {}", h.reward_bound));
        }
    }
    Ok(())
}

/// Reads a dataset from its header and trajectory files.
pub fn load_dataset(header_path: &Path, trajectories_path: &Path) -> CliResult<BatchDataset> {
    let header: DatasetHeader = parse_json(header_path, &read(header_path)?)?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(CliError::data(format!(
            "{}: field `version`: unsupported version {}",
            header_path.display(),
            header.version
        )));
    }
    let text = read(trajectories_path)?;
    let mut trajectories = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: TrajectoryRecord = {
            let de = &mut serde_json::Deserializer::from_str(line);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let field = e.path().to_string();
                CliError::data(format!(
                    "{}: line {lineno}: field `{field}`: {}",
                    trajectories_path.display(),
                    e.into_inner()
                ))
            })?
        };
        check_record(&header, &rec)
            .map_err(|m| CliError::data(format!("{}: line {lineno}: {m}", trajectories_path.display())))?;
        trajectories.push(Trajectory { states: rec.states, actions: rec.actions, rewards: rec.rewards });
    }
    let ds = BatchDataset::new(
        trajectories,
        header.horizon,
        header.state_dim,
        header.action_table,
        header.reward_bound,
        header.normalize,
    )
    .map_err(|e| CliError::data(format!("{}: {e}", trajectories_path.display())))?;
    if ds.action_dim() != header.action_dim {
        return Err(CliError::data(format!(
            "{}: field `action_dim` is {}, but action table rows have {}",
            header_path.display(),
            header.action_dim,
            ds.action_dim()
        )));
    }
    Ok(ds)
}

/// Reads `header.json` and `trajectories.jsonl` from `dir`.
pub fn load_dataset_dir(dir: &Path) -> CliResult<BatchDataset> {
    load_dataset(&dir.join(HEADER_FILE), &dir.join(TRAJECTORIES_FILE))
}

pub fn dataset_files(ds: &BatchDataset) -> (Vec<u8>, Vec<u8>) {
    let header = to_json(&header_of(ds));
    let mut lines = Vec::new();
    for tr in ds.trajectories() {
        let rec = TrajectoryRecord { states: tr.states.clone(), actions: tr.actions.clone(), rewards: tr.rewards.clone() };
        serde_json::to_writer(&mut lines, &rec).expect("records serialize");
        lines.push(b'\n');
    }
    (header, lines)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub t: usize,
    pub lambda: f64,
    pub k: usize,
    pub theta: Vec<f64>,
}

/// Serialized [`ModelBundle`]. `config` holds the adaptive constants for
/// spectral filters and is `null` for the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub horizon: usize,
    pub feature_dim: usize,
    pub filter: String,
    pub stages: Vec<StageRecord>,
    pub config: Option<AdaptiveConfig>,
    pub seed: u64,
}

impl ModelFile {
    pub fn from_model(m: &ModelBundle) -> Self {
        ModelFile {
            version: m.format_version,
            horizon: m.horizon,
            feature_dim: m.feature_dim,
            filter: m.method.name().to_string(),
            stages: m
                .stages
                .iter()
                .map(|s| StageRecord { t: s.t, lambda: s.lambda, k: s.k, theta: s.theta.clone() })
                .collect(),
            config: m.config.clone(),
            seed: m.seed,
        }
    }

    pub fn into_model(self) -> Result<ModelBundle, String> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(format!("field `version`: unsupported version {}", self.version));
        }
        let method = match self.filter.as_str() {
            "ls" => Method::LeastSquares,
            "lasso" => Method::Lasso,
            other => {
                let kind: FilterKind = other.parse().map_err(|_| format!("field `filter`: unknown method `{other}`"))?;
                Method::Spectral(FilterSpec::new(kind))
            }
        };
        let m = ModelBundle {
            horizon: self.horizon,
            feature_dim: self.feature_dim,
            method,
            stages: self
                .stages
                .into_iter()
                .map(|s| StageParams { t: s.t, theta: s.theta, lambda: s.lambda, k: s.k })
                .collect(),
            config: self.config,
            seed: self.seed,
            format_version: self.version,
        };
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }
}

pub fn model_json(m: &ModelBundle) -> Vec<u8> {
    to_json(&ModelFile::from_model(m))
}

pub fn load_model(path: &Path) -> CliResult<ModelBundle> {
    let file: ModelFile = parse_json(path, &read(path)?)?;
    file.into_model().map_err(|m| CliError::data(format!("{}: {m}", path.display())))
}

pub fn load_env(path: &Path) -> CliResult<SyntheticEnv> {
    let env: SyntheticEnv = parse_json(path, &read(path)?)?;
    let bad = |m: String| CliError::data(format!("{}: {m}", path.display()));
    let mut thetas = env.theta_star;
    match thetas.pop() {
        Some(last) if last.iter().all(|&v| v == 0.0) => {}
        _ => return Err(bad("field `theta_star`: the terminal entry must be the zero vector".into())),
    }
    SyntheticEnv::from_parts(env.spec, env.user_pool, env.video_pool, env.action_pool, thetas)
        .map_err(|e| bad(e.to_string()))
}

pub fn load_ground_truth(path: &Path) -> CliResult<GroundTruth> {
    parse_json(path, &read(path)?)
}

/// Files produced by a command, written only once the command has succeeded.
///
/// Each file goes to a temporary sibling first and is renamed into place;
/// if any write fails, every file already committed by this set is removed.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut done: Vec<PathBuf> = Vec::new();
        let mut made_dirs: Vec<PathBuf> = Vec::new();
        for (path, bytes) in &self.files {
            if let Err(e) = write_atomic(path, bytes, &mut made_dirs) {
                for p in done.iter().rev() {
                    let _ = fs::remove_file(p);
                }
                for d in made_dirs.iter().rev() {
                    let _ = fs::remove_dir(d);
                }
                return Err(e);
            }
            done.push(path.clone());
        }
        Ok(done)
    }
}

fn write_atomic(path: &Path, bytes: &[u8], made_dirs: &mut Vec<PathBuf>) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut missing = Vec::new();
    let mut cur = Some(parent.as_path());
    while let Some(d) = cur {
        if d.as_os_str().is_empty() || d.exists() {
            break;
        }
        missing.push(d.to_path_buf());
        cur = d.parent();
    }
    fs::create_dir_all(&parent).map_err(|e| CliError::write(&parent, e))?;
    made_dirs.extend(missing.into_iter().rev());
    let mut tmp = tempfile::Builder::new()
        .prefix(".spectral-q-")
        .tempfile_in(&parent)
        .map_err(|e| CliError::write(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::write(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::write(path, e))?;
    tmp.persist(path).map_err(|e| CliError::write(path, e.error))?;
    Ok(())
}
