//! Feature contribution proportions, clipped-weight flagging and top-k
//! feature-subset reward curves.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::BatchDataset;
use crate::learner::ModelBundle;
use crate::{Error, Result};

/// Named sets of feature columns; importances are summed within a group.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

fn check_groups(groups: &[FeatureGroup], d: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Empty("feature groups"));
    }
    let mut seen = vec![false; d];
    for g in groups {
        if g.columns.is_empty() {
            return Err(Error::invalid(alloc::format!("feature group '{}' is empty", g.name)));
        }
        for &c in &g.columns {
            if c >= d {
                return Err(Error::Index { index: c, len: d });
            }
            if seen[c] {
                return Err(Error::invalid(alloc::format!("feature {c} belongs to more than one group")));
            }
            seen[c] = true;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContributionReport {
    /// One entry per feature, or per group when groups were given.
    pub proportions: Vec<f64>,
    /// `T × d` learned coefficients, row `t - 1` for stage `t`.
    pub per_stage_weights: Vec<Vec<f64>>,
    /// Indices into `proportions`, largest first; ties keep index order.
    pub ranking: Vec<usize>,
    pub groups: Option<Vec<FeatureGroup>>,
}

impl ContributionReport {
    /// Column mask keeping the `k` highest-ranked features or groups.
    pub fn top_k_mask(&self, k: usize) -> Result<Vec<bool>> {
        let units = self.ranking.len();
        if k == 0 || k > units {
            return Err(Error::domain(alloc::format!("k = {k} outside 1..={units}")));
        }
        let d = self.per_stage_weights.first().map_or(0, Vec::len);
        let mut mask = vec![false; d];
        for &u in &self.ranking[..k] {
            match &self.groups {
                Some(groups) => groups[u].columns.iter().for_each(|&c| mask[c] = true),
                None => mask[u] = true,
            }
        }
        Ok(mask)
    }
}

/// `importance_j = (1/T) Σ_t |θ_{t,j}|`, normalized to sum to one.
pub fn contribution_proportions(model: &ModelBundle, groups: Option<&[FeatureGroup]>) -> Result<ContributionReport> {
    if model.stages.is_empty() {
        return Err(Error::Empty("model"));
    }
    model.validate()?;
    let weights = model.thetas();
    let d = model.feature_dim;
    let horizon = weights.len() as f64;
    let mut importance = vec![0.0; d];
    for theta in &weights {
        for (acc, w) in importance.iter_mut().zip(theta) {
            *acc += w.abs() / horizon;
        }
    }
    let mut units = match groups {
        Some(gs) => {
            check_groups(gs, d)?;
            gs.iter().map(|g| g.columns.iter().map(|&c| importance[c]).sum()).collect()
        }
        None => importance,
    };
    let total: f64 = units.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("model coefficients"));
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("all coefficients are zero"));
    }
    units.iter_mut().for_each(|u| *u /= total);
    let mut ranking: Vec<usize> = (0..units.len()).collect();
    ranking.sort_by(|&a, &b| units[b].total_cmp(&units[a]).then(a.cmp(&b)));
    Ok(ContributionReport {
        proportions: units,
        per_stage_weights: weights,
        ranking,
        groups: groups.map(<[FeatureGroup]>::to_vec),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightEntry {
    pub method: String,
    pub feature: usize,
    pub stage: usize,
    pub value: f64,
}

impl WeightEntry {
    /// One entry per coefficient of `model`, tagged with `method`.
    pub fn from_model(method: &str, model: &ModelBundle) -> Vec<WeightEntry> {
        model
            .stages
            .iter()
            .flat_map(|s| {
                s.theta.iter().enumerate().map(move |(j, &value)| WeightEntry {
                    method: method.into(),
                    feature: j,
                    stage: s.t,
                    value,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ClipFlag {
    Top,
    Bottom,
}

/// Linear-interpolation quantile of an ascending slice, `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Flags, aligned with `entries`, for values strictly above the `1 - pct`
/// quantile or strictly below the `pct` quantile of the pooled values.
/// Non-finite values are never flagged and do not enter the pool.
pub fn clipped_weights(entries: &[WeightEntry], pct: f64) -> Vec<Option<ClipFlag>> {
    let mut pool: Vec<f64> = entries.iter().map(|e| e.value).filter(|v| v.is_finite()).collect();
    if pool.is_empty() || !(pct > 0.0 && pct < 0.5) {
        return vec![None; entries.len()];
    }
    pool.sort_by(f64::total_cmp);
    let low = quantile_sorted(&pool, pct);
    let high = quantile_sorted(&pool, 1.0 - pct);
    entries
        .iter()
        .map(|e| {
            if e.value > high {
                Some(ClipFlag::Top)
            } else if e.value < low {
                Some(ClipFlag::Bottom)
            } else {
                None
            }
        })
        .collect()
}

/// Number of flagged entries per method, in first-appearance order.
pub fn clipped_counts(entries: &[WeightEntry], flags: &[Option<ClipFlag>]) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (e, f) in entries.iter().zip(flags) {
        let idx = match out.iter().position(|(m, _)| *m == e.method) {
            Some(i) => i,
            None => {
                out.push((e.method.clone(), 0));
                out.len() - 1
            }
        };
        if f.is_some() {
            out[idx].1 += 1;
        }
    }
    out
}

/// For each `k` in order, retrains on `dataset` with all but the top-`k`
/// ranked features masked out and scores the result with `evaluate`.
pub fn topk_feature_rewards<Tr, Ev>(
    dataset: &BatchDataset,
    report: &ContributionReport,
    ks: &[usize],
    mut trainer: Tr,
    mut evaluate: Ev,
) -> Result<Vec<(usize, f64)>>
where
    Tr: FnMut(&BatchDataset) -> Result<ModelBundle>,
    Ev: FnMut(&ModelBundle) -> Result<f64>,
{
    let d = report.per_stage_weights.first().map_or(0, Vec::len);
    if d != dataset.feature_dim() {
        return Err(Error::Shape { expected: dataset.feature_dim(), found: d });
    }
    let masks = ks.iter().map(|&k| report.top_k_mask(k)).collect::<Result<Vec<_>>>()?;
    let mut curve = Vec::with_capacity(ks.len());
    for (&k, mask) in ks.iter().zip(masks) {
        let masked = dataset.with_feature_mask(mask)?;
        let model = trainer(&masked)?;
        curve.push((k, evaluate(&model)?));
    }
    Ok(curve)
}
