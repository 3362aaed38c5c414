//! Object-contact-prediction behavioral pipeline: flatten observed context
//! plus model rollout into per-stimulus feature vectors, train a logistic
//! hit/no-hit readout, score held-out stimuli against human judgement
//! proportions per scenario, and aggregate across scenarios weighted by
//! scenario size.

use nalgebra::DMatrix;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::metrics::{self, WeightedStats};
use crate::regress::{logistic_fit, make_folds, FoldKind, LogisticModel};
use crate::tensorio::{HumanJudgements, LatentDataset};

/// Default number of observed context frames.
pub const DEFAULT_CONTEXT: usize = 7;
/// Default total feature length in frames (observed + simulated).
pub const DEFAULT_TOTAL: usize = 25;
/// Total optimizer iterations for the readout fit.
pub const READOUT_ITERS: usize = 20_000;

/// Per-stimulus feature matrix: each row is `total` frames of `d` latent
/// values, frame-major, the first `t_context` observed and the rest rolled
/// out closed-loop by the dynamics module under test. Stimuli keep the
/// dataset's order; labels and scenario names ride along for scoring.
#[derive(Debug, Clone)]
pub struct OcpFeatures {
    pub d: usize,
    pub t_context: usize,
    pub total: usize,
    pub ids: Vec<String>,
    pub scenarios: Vec<String>,
    /// Ground-truth contact labels (true = hit).
    pub labels: Vec<bool>,
    /// `[n_stimuli × total·d]`.
    pub x: DMatrix<f64>,
}

impl OcpFeatures {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The same stimuli restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> OcpFeatures {
        let mut x = DMatrix::zeros(indices.len(), self.x.ncols());
        for (row, &i) in indices.iter().enumerate() {
            x.row_mut(row).copy_from(&self.x.row(i));
        }
        OcpFeatures {
            d: self.d,
            t_context: self.t_context,
            total: self.total,
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            scenarios: indices.iter().map(|&i| self.scenarios[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            x,
        }
    }
}

/// Build observed+simulated features for every stimulus in the dataset.
///
/// The first `t_context` frames of each stimulus are taken as observed (the
/// dataset is assumed already subsampled to the working frame rate); the
/// remaining `total − t_context` frames come from a closed-loop rollout of
/// `model` warmed up on that context. Every stimulus must carry a contact
/// label.
pub fn build_features(
    latents: &LatentDataset,
    model: &DynamicsModel,
    t_context: usize,
    total: usize,
) -> Result<OcpFeatures> {
    if t_context < 1 {
        return Err(Error::InvalidArgument("need at least one observed frame".into()));
    }
    if total <= t_context {
        return Err(Error::InvalidArgument(format!(
            "total frames ({total}) must exceed the observed context ({t_context})"
        )));
    }
    if latents.d != model.d {
        return Err(Error::DimensionMismatch(format!(
            "dataset latents have d={} but the dynamics module expects d={}",
            latents.d, model.d
        )));
    }
    if latents.items.is_empty() {
        return Err(Error::Empty("latent dataset has no stimuli".into()));
    }
    let d = latents.d;
    let mut x = DMatrix::zeros(latents.items.len(), total * d);
    let mut ids = Vec::with_capacity(latents.items.len());
    let mut scenarios = Vec::with_capacity(latents.items.len());
    let mut labels = Vec::with_capacity(latents.items.len());
    for (row, item) in latents.items.iter().enumerate() {
        if item.frames() < t_context {
            return Err(Error::InsufficientContext {
                required: t_context,
                available: item.frames(),
            });
        }
        let label = item.label.ok_or_else(|| {
            Error::Misaligned(format!("stimulus {} carries no contact label", item.id))
        })?;
        let context = item.latents.rows(0, t_context).into_owned();
        let rollout = model.rollout(&context, total - t_context)?;
        for f in 0..t_context {
            for j in 0..d {
                x[(row, f * d + j)] = context[(f, j)];
            }
        }
        for f in 0..(total - t_context) {
            for j in 0..d {
                x[(row, (t_context + f) * d + j)] = rollout.latents[(f, j)];
            }
        }
        ids.push(item.id.clone());
        scenarios.push(item.scenario.clone().unwrap_or_default());
        labels.push(label != 0);
    }
    Ok(OcpFeatures { d, t_context, total, ids, scenarios, labels, x })
}

/// Fit the logistic hit/no-hit readout: stratified 5-fold CV on the binary
/// label picks the regularization strength, then a full refit runs for
/// [`READOUT_ITERS`] iterations.
pub fn train_readout(features: &OcpFeatures, seed: u64) -> Result<LogisticModel> {
    let strata: Vec<u64> = features.labels.iter().map(|&h| h as u64).collect();
    let plan = make_folds(&strata, 5, FoldKind::Stratified, seed)?;
    logistic_fit(&features.x, &features.labels, READOUT_ITERS, &plan)
}

/// One scenario's held-out score.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub n_stimuli: usize,
    /// Fraction of stimuli whose thresholded prediction matches the label.
    pub accuracy: f64,
    /// Pearson between model hit-probabilities and human proportion-hit;
    /// NaN when flagged.
    pub pearson_to_human: f64,
    /// True when the correlation is unusable: fewer than 3 stimuli or zero
    /// spread on either side.
    pub flagged: bool,
}

/// Score a trained readout on held-out features against human judgements.
pub fn evaluate(
    model: &LogisticModel,
    features: &OcpFeatures,
    judgements: &HumanJudgements,
) -> Result<Vec<ScenarioScore>> {
    let probs = model.predict_proba(&features.x);
    evaluate_probabilities(probs.as_slice(), features, judgements)
}

/// Scenario scores from raw hit-probabilities. Accuracy thresholds at 0.5
/// with ties (p = 0.5 exactly) resolving to no-hit; the correlation compares
/// probabilities to human proportion-hit across each scenario's stimuli.
pub fn evaluate_probabilities(
    probs: &[f64],
    features: &OcpFeatures,
    judgements: &HumanJudgements,
) -> Result<Vec<ScenarioScore>> {
    if probs.len() != features.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probabilities for {} stimuli",
            probs.len(),
            features.len()
        )));
    }
    // Scenario groups in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, scenario) in features.scenarios.iter().enumerate() {
        match order.iter().position(|s| s == scenario) {
            Some(g) => groups[g].push(i),
            None => {
                order.push(scenario.clone());
                groups.push(vec![i]);
            }
        }
    }
    let mut scores = Vec::with_capacity(order.len());
    for (scenario, members) in order.into_iter().zip(groups) {
        let mut correct = 0usize;
        let mut human = Vec::with_capacity(members.len());
        let mut predicted = Vec::with_capacity(members.len());
        for &i in &members {
            let judgement = judgements.get(&features.ids[i]).ok_or_else(|| {
                Error::Misaligned(format!("no human judgement for stimulus {}", features.ids[i]))
            })?;
            let hit = probs[i] > 0.5;
            if hit == features.labels[i] {
                correct += 1;
            }
            human.push(judgement.proportion);
            predicted.push(probs[i]);
        }
        let n_stimuli = members.len();
        let pearson = if n_stimuli < 3 {
            f64::NAN
        } else {
            metrics::pearson(&predicted, &human)?
        };
        scores.push(ScenarioScore {
            scenario,
            n_stimuli,
            accuracy: correct as f64 / n_stimuli as f64,
            pearson_to_human: pearson,
            flagged: !pearson.is_finite(),
        });
    }
    Ok(scores)
}

/// Cross-scenario aggregate, weighted by stimulus counts.
#[derive(Debug, Clone, Copy)]
pub struct OcpAggregate {
    pub accuracy: WeightedStats,
    /// Over unflagged scenarios only.
    pub pearson: WeightedStats,
    pub n_scenarios: usize,
    pub n_flagged: usize,
}

/// Weighted mean ± sem of accuracy and correlation over scenarios, weights
/// proportional to stimulus counts. Scores are reduced in scenario-name
/// order, so the result is exactly invariant to input ordering. Flagged
/// scenarios still contribute to the accuracy aggregate but are excluded
/// from the correlation aggregate.
pub fn aggregate(scores: &[ScenarioScore]) -> Result<OcpAggregate> {
    let mut sorted: Vec<&ScenarioScore> = scores.iter().collect();
    sorted.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    let acc: Vec<f64> = sorted.iter().map(|s| s.accuracy).collect();
    let acc_w: Vec<f64> = sorted.iter().map(|s| s.n_stimuli as f64).collect();
    let accuracy = metrics::weighted_mean_sem(&acc, &acc_w)?;
    let usable: Vec<&&ScenarioScore> = sorted.iter().filter(|s| !s.flagged).collect();
    let pearson = if usable.is_empty() {
        WeightedStats {
            weighted_mean: f64::NAN,
            variance: f64::NAN,
            effective_sample_size: 0.0,
            weighted_sem: f64::NAN,
        }
    } else {
        let r: Vec<f64> = usable.iter().map(|s| s.pearson_to_human).collect();
        let r_w: Vec<f64> = usable.iter().map(|s| s.n_stimuli as f64).collect();
        metrics::weighted_mean_sem(&r, &r_w)?
    };
    Ok(OcpAggregate {
        accuracy,
        pearson,
        n_scenarios: scores.len(),
        n_flagged: scores.len() - usable.len(),
    })
}

/// CSV report: one row per scenario plus an aggregate row.
pub fn scores_to_csv(scores: &[ScenarioScore], total: &OcpAggregate) -> String {
    let mut out = String::from("scenario,n,accuracy,pearson_to_human\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.scenario, s.n_stimuli, s.accuracy, s.pearson_to_human
        ));
    }
    let n_total: usize = scores.iter().map(|s| s.n_stimuli).sum();
    out.push_str(&format!(
        "aggregate,{},{},{}\n",
        n_total, total.accuracy.weighted_mean, total.pearson.weighted_mean
    ));
    out
}
