//! Occluded-epoch neural benchmark. Aligns binned recordings to frame times,
//! builds the five condition splits, computes the inter-animal consistency
//! ceiling, scores model latents against units, decodes ball state from
//! either population, and picks the best candidate feature set.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::metrics::{
    median_column_pearson, median_sem, neural_predictivity, MedianSem, NpConfig,
    PredictivityResult, Responses, TrainTest,
};
use crate::mpong::{context_indices, oracle_latents, ConditionSet, OracleKind};
use crate::rng::{keyed_rng, stream};
use crate::tensorio::{LatentDataset, NeuralDataset, TrialTensor};

/// One condition's recording, upsampled from bins to frame times.
#[derive(Debug, Clone)]
pub struct AlignedCondition {
    pub id: String,
    /// `[trials × n_frames × units]`.
    pub responses: TrialTensor,
    /// Frame indices of the occluded epoch.
    pub occluded: Range<usize>,
    /// Frames whose time fell outside the bin-center span and were clamped
    /// to the nearest bin.
    pub clamped_frames: usize,
}

#[derive(Debug, Clone)]
pub struct AlignedResponses {
    pub units: usize,
    pub conditions: Vec<AlignedCondition>,
}

impl AlignedResponses {
    pub fn n_conditions(&self) -> usize {
        self.conditions.len()
    }

    pub fn total_clamped(&self) -> usize {
        self.conditions.iter().map(|c| c.clamped_frames).sum()
    }

    /// Occluded-epoch slice of every condition, in condition order.
    pub fn occluded_tensors(&self) -> Vec<TrialTensor> {
        self.conditions
            .iter()
            .map(|c| {
                let t = &c.responses;
                let lo = c.occluded.start;
                let len = c.occluded.len();
                let mut data = Vec::with_capacity(t.trials * len * self.units);
                for trial in 0..t.trials {
                    for f in lo..lo + len {
                        for u in 0..self.units {
                            data.push(t.get(trial, f, u));
                        }
                    }
                }
                TrialTensor::new(t.trials, len, self.units, data)
                    .expect("slice shape follows from the source tensor")
            })
            .collect()
    }

    /// Units with not one finite value anywhere; they can enter no fit.
    pub fn all_nan_units(&self) -> Vec<usize> {
        (0..self.units)
            .filter(|&u| {
                self.conditions.iter().all(|c| {
                    let t = &c.responses;
                    (0..t.trials).all(|trial| (0..t.bins).all(|b| t.get(trial, b, u).is_nan()))
                })
            })
            .collect()
    }

    /// Copy with the given unit columns removed.
    pub fn without_units(&self, drop: &[usize]) -> AlignedResponses {
        let keep: Vec<usize> = (0..self.units).filter(|u| !drop.contains(u)).collect();
        let conditions = self
            .conditions
            .iter()
            .map(|c| {
                let t = &c.responses;
                let mut data = Vec::with_capacity(t.trials * t.bins * keep.len());
                for trial in 0..t.trials {
                    for b in 0..t.bins {
                        for &u in &keep {
                            data.push(t.get(trial, b, u));
                        }
                    }
                }
                AlignedCondition {
                    id: c.id.clone(),
                    responses: TrialTensor::new(t.trials, t.bins, keep.len(), data)
                        .expect("column subset keeps the tensor well-formed"),
                    occluded: c.occluded.clone(),
                    clamped_frames: c.clamped_frames,
                }
            })
            .collect();
        AlignedResponses { units: keep.len(), conditions }
    }
}

/// Per-unit, per-trial linear interpolation from bin centers to frame times.
/// Frames before the first or after the last bin center take the edge bin's
/// value and are counted as clamped. NaN trials stay NaN.
pub fn interpolate_bins(
    neural: &NeuralDataset,
    conditions: &ConditionSet,
) -> Result<AlignedResponses> {
    if conditions.is_empty() {
        return Err(Error::Empty("condition set is empty".into()));
    }
    let fps = conditions.spec.frame_rate;
    let bin_s = neural.bin_width_ms / 1000.0;
    let units = neural.total_units();
    let mut out = Vec::with_capacity(conditions.len());
    for cond in &conditions.conditions {
        let key = cond.key();
        let t = &neural
            .conditions
            .iter()
            .find(|n| n.id == key)
            .ok_or_else(|| Error::Misaligned(format!("no neural responses for {key}")))?
            .responses;
        if t.units != units {
            return Err(Error::Misaligned(format!(
                "{key} has {} units, dataset declares {units}",
                t.units
            )));
        }
        if cond.occluded_range().is_empty() {
            return Err(Error::InvalidArgument(format!("{key} has no occluded frames")));
        }
        let centers: Vec<f64> = (0..t.bins).map(|b| (b as f64 + 0.5) * bin_s).collect();
        let last = t.bins - 1;
        let mut data = vec![0.0f64; t.trials * cond.n_frames * units];
        let mut clamped = 0usize;
        for f in 0..cond.n_frames {
            let time = f as f64 / fps;
            let (lo, hi, w) = if time <= centers[0] {
                if time < centers[0] {
                    clamped += 1;
                }
                (0, 0, 0.0)
            } else if time >= centers[last] {
                if time > centers[last] {
                    clamped += 1;
                }
                (last, last, 0.0)
            } else {
                let hi = centers.partition_point(|&c| c < time);
                let lo = hi - 1;
                (lo, hi, (time - centers[lo]) / (centers[hi] - centers[lo]))
            };
            for trial in 0..t.trials {
                for u in 0..units {
                    let a = t.get(trial, lo, u);
                    let v = if lo == hi { a } else { a + w * (t.get(trial, hi, u) - a) };
                    data[(trial * cond.n_frames + f) * units + u] = v;
                }
            }
        }
        out.push(AlignedCondition {
            id: key,
            responses: TrialTensor::new(t.trials, cond.n_frames, units, data)?,
            occluded: cond.occluded_range(),
            clamped_frames: clamped,
        });
    }
    Ok(AlignedResponses { units, conditions: out })
}

/// Five (by default) 50/50 train-test partitions of condition indices,
/// a pure function of the seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub splits: Vec<TrainTest>,
}

pub fn make_split_plan(n_conditions: usize, n_splits: usize, seed: u64) -> Result<SplitPlan> {
    if n_conditions < 2 {
        return Err(Error::InvalidArgument(format!(
            "need ≥ 2 conditions to split, got {n_conditions}"
        )));
    }
    if n_splits == 0 {
        return Err(Error::InvalidArgument("need ≥ 1 split".into()));
    }
    let splits = (0..n_splits)
        .map(|s| {
            let mut idx: Vec<usize> = (0..n_conditions).collect();
            idx.shuffle(&mut keyed_rng(seed, &[stream::CONDITION_SPLIT, 0, s as u64]));
            let cut = n_conditions.div_ceil(2);
            let mut train = idx[..cut].to_vec();
            let mut test = idx[cut..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            TrainTest { train, test }
        })
        .collect();
    Ok(SplitPlan { seed, splits })
}

fn check_same_alignment(a: &AlignedResponses, b: &AlignedResponses) -> Result<()> {
    if a.n_conditions() != b.n_conditions() {
        return Err(Error::Misaligned(format!(
            "{} vs {} conditions",
            a.n_conditions(),
            b.n_conditions()
        )));
    }
    for (ca, cb) in a.conditions.iter().zip(&b.conditions) {
        if ca.id != cb.id || ca.occluded != cb.occluded {
            return Err(Error::Misaligned(format!(
                "condition {} vs {}: differing ids or occluded masks",
                ca.id, cb.id
            )));
        }
    }
    Ok(())
}

/// Inter-animal consistency: each animal's units predicted from the other's,
/// in both directions, on held-out occluded frames.
#[derive(Debug, Clone)]
pub struct ConsistencyCeiling {
    pub a_to_b: PredictivityResult,
    pub b_to_a: PredictivityResult,
    /// Median over the pooled per-unit values of both directions.
    pub pooled: MedianSem,
    /// All-NaN units dropped before fitting, per animal.
    pub excluded_a: Vec<usize>,
    pub excluded_b: Vec<usize>,
}

pub fn fit_internal_consistency(
    a: &AlignedResponses,
    b: &AlignedResponses,
    plan: &SplitPlan,
    cfg: &NpConfig,
) -> Result<ConsistencyCeiling> {
    check_same_alignment(a, b)?;
    let excluded_a = a.all_nan_units();
    let excluded_b = b.all_nan_units();
    let a_kept = Responses::Trials(a.without_units(&excluded_a).occluded_tensors());
    let b_kept = Responses::Trials(b.without_units(&excluded_b).occluded_tensors());
    let a_to_b = neural_predictivity(&a_kept, &b_kept, &plan.splits, cfg)?;
    let b_to_a = neural_predictivity(&b_kept, &a_kept, &plan.splits, cfg)?;
    let pooled_values: Vec<f64> =
        a_to_b.per_unit.iter().chain(&b_to_a.per_unit).copied().collect();
    Ok(ConsistencyCeiling {
        pooled: median_sem(&pooled_values),
        a_to_b,
        b_to_a,
        excluded_a,
        excluded_b,
    })
}

/// Predictivity of the given per-condition occluded-epoch features for every
/// unit, across the plan's splits.
pub fn model_predictivity(
    features: &[DMatrix<f64>],
    neural: &AlignedResponses,
    plan: &SplitPlan,
    cfg: &NpConfig,
) -> Result<PredictivityResult> {
    if features.len() != neural.n_conditions() {
        return Err(Error::Misaligned(format!(
            "{} feature blocks for {} conditions",
            features.len(),
            neural.n_conditions()
        )));
    }
    for (feat, cond) in features.iter().zip(&neural.conditions) {
        if feat.nrows() != cond.occluded.len() {
            return Err(Error::Misaligned(format!(
                "condition {}: {} feature rows for {} occluded frames",
                cond.id,
                feat.nrows(),
                cond.occluded.len()
            )));
        }
    }
    let source = Responses::Deterministic(features.to_vec());
    let target = Responses::Trials(neural.occluded_tensors());
    neural_predictivity(&source, &target, &plan.splits, cfg)
}

/// Model features aligned to each condition's occluded frames: teacher-force
/// the context frames picked by `context_indices`, roll the dynamics out one
/// context-spacing step at a time, and linearly interpolate the rollout back
/// onto frame times (anchored at the last visible latent).
pub fn occluded_model_features(
    latents: &LatentDataset,
    model: &DynamicsModel,
    conditions: &ConditionSet,
    t_context: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(conditions.len());
    for cond in &conditions.conditions {
        let key = cond.key();
        let item = latents
            .get(&key)
            .ok_or_else(|| Error::Misaligned(format!("no latents for {key}")))?;
        if item.frames() < cond.visible_len() {
            return Err(Error::Misaligned(format!(
                "{key}: {} latent frames, visible epoch needs {}",
                item.frames(),
                cond.visible_len()
            )));
        }
        let idx = context_indices(cond, t_context)?;
        let mut context = DMatrix::zeros(t_context, latents.d);
        for (k, &f) in idx.iter().enumerate() {
            context.row_mut(k).copy_from(&item.latents.row(f));
        }
        let delta = cond.visible_end as f64 / (t_context - 1) as f64;
        let n_occ = cond.occluded_range().len();
        let n_steps = (n_occ as f64 / delta).ceil() as usize;
        let roll = model.rollout(&context, n_steps)?;
        let anchor = item.latents.row(cond.visible_end).into_owned();
        let mut feat = DMatrix::zeros(n_occ, latents.d);
        for (row, f) in cond.occluded_range().enumerate() {
            let s = (f - cond.visible_end) as f64 / delta;
            let lo = (s.floor() as usize).min(n_steps);
            let hi = (lo + 1).min(n_steps);
            let w = s - lo as f64;
            let vlo = if lo == 0 { anchor.clone() } else { roll.latents.row(lo - 1).into_owned() };
            let vhi = roll.latents.row(hi - 1).into_owned();
            feat.row_mut(row).copy_from(&(vlo * (1.0 - w) + vhi * w));
        }
        out.push(feat);
    }
    Ok(out)
}

/// What drives the ball-state decode.
#[derive(Debug, Clone, Copy)]
pub enum DecodeSource<'a> {
    Neural(&'a AlignedResponses),
    /// Per-condition occluded-epoch feature blocks.
    Features(&'a [DMatrix<f64>]),
}

/// Decode of the ground-truth ball 4-vector (x, y, vx, vy in degrees) on
/// occluded frames, scored per quantity with the ball state as target.
#[derive(Debug, Clone)]
pub struct BallDecode {
    /// Per-quantity predictivity in (x, y, vx, vy) order.
    pub result: PredictivityResult,
    pub joint: MedianSem,
    pub position: MedianSem,
    pub velocity: MedianSem,
}

pub fn ball_decode(
    source: DecodeSource,
    conditions: &ConditionSet,
    plan: &SplitPlan,
    cfg: &NpConfig,
) -> Result<BallDecode> {
    let mut targets = Vec::with_capacity(conditions.len());
    for (i, cond) in conditions.conditions.iter().enumerate() {
        let traj = conditions.trajectory(i)?;
        let full = oracle_latents(&traj, OracleKind::PositionVelocity).latents;
        let occ = cond.occluded_range();
        targets.push(full.rows(occ.start, occ.len()).into_owned());
    }
    let src = match source {
        DecodeSource::Features(f) => {
            if f.len() != targets.len() {
                return Err(Error::Misaligned(format!(
                    "{} feature blocks for {} conditions",
                    f.len(),
                    targets.len()
                )));
            }
            Responses::Deterministic(f.to_vec())
        }
        DecodeSource::Neural(a) => {
            if a.n_conditions() != targets.len() {
                return Err(Error::Misaligned(format!(
                    "{} aligned conditions for {} conditions",
                    a.n_conditions(),
                    targets.len()
                )));
            }
            Responses::Trials(a.without_units(&a.all_nan_units()).occluded_tensors())
        }
    };
    // One decoder per split; the strength is tuned to the median over the
    // four quantities so no single coordinate dominates.
    let mut decode_cfg = cfg.clone();
    decode_cfg.cv_score = median_column_pearson;
    let result =
        neural_predictivity(&src, &Responses::Deterministic(targets), &plan.splits, &decode_cfg)?;
    Ok(BallDecode {
        joint: median_sem(&result.per_unit),
        position: median_sem(&result.per_unit[0..2]),
        velocity: median_sem(&result.per_unit[2..4]),
        result,
    })
}

#[derive(Debug, Clone)]
pub struct LayerScore {
    pub name: String,
    pub median: f64,
    pub sem: f64,
}

#[derive(Debug, Clone)]
pub struct LayerSelection {
    /// Index into the candidate list (first wins exact ties).
    pub chosen: usize,
    pub table: Vec<LayerScore>,
    /// Another candidate scored within 1e-9 of the chosen one.
    pub tie: bool,
}

/// Score every candidate feature set and keep the one with the best
/// cross-validated median predictivity.
pub fn select_best_layer(
    candidates: &[(String, Vec<DMatrix<f64>>)],
    neural: &AlignedResponses,
    plan: &SplitPlan,
    cfg: &NpConfig,
) -> Result<LayerSelection> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate feature sets".into()));
    }
    let mut table = Vec::with_capacity(candidates.len());
    for (name, feats) in candidates {
        let r = model_predictivity(feats, neural, plan, cfg)?;
        table.push(LayerScore { name: name.clone(), median: r.median, sem: r.sem });
    }
    let score = |m: f64| if m.is_finite() { m } else { f64::NEG_INFINITY };
    let mut chosen = 0;
    for i in 1..table.len() {
        if score(table[i].median) > score(table[chosen].median) {
            chosen = i;
        }
    }
    let tie = table
        .iter()
        .enumerate()
        .any(|(i, s)| i != chosen && (score(s.median) - score(table[chosen].median)).abs() <= 1e-9);
    Ok(LayerSelection { chosen, table, tie })
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

pub fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallDecodeSummary {
    pub joint: Option<f64>,
    pub position: Option<f64>,
    pub velocity: Option<f64>,
}

impl From<&BallDecode> for BallDecodeSummary {
    fn from(b: &BallDecode) -> Self {
        BallDecodeSummary {
            joint: finite_or_none(b.joint.median),
            position: finite_or_none(b.position.median),
            velocity: finite_or_none(b.velocity.median),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub median_np: Option<f64>,
    pub sem: Option<f64>,
    pub per_unit_csv_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_decode: Option<BallDecodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ceiling: Option<f64>,
    pub per_model: BTreeMap<String, ModelEval>,
    pub splits_seed: u64,
}
