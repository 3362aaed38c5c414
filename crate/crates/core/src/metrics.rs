//! Statistical core: Pearson correlation, Spearman-Brown correction,
//! split-half trial averaging, reliability-adjusted neural predictivity, and
//! weighted aggregation statistics.
//!
//! Neural predictivity per unit, for one train-test split of conditions:
//!
//! ```text
//!                    Corr( L(S̄_test), Ā_test )
//! NP(S, A) = ─────────────────────────────────────────────
//!            sqrt( SB(Corr(L¹(S¹), L²(S²))) · SB(Corr(A¹, A²)) )
//! ```
//!
//! where S̄/Ā are full trial averages, (S¹, S²) and (A¹, A²) are trial-averaged
//! random split-halves, L maps S̄_train → Ā_train, L¹ maps S¹_train → A¹_train
//! (likewise L²), every correlation runs over held-out (condition × frame)
//! rows, and SB is the Spearman-Brown correction compensating the halved
//! trial counts. Deterministic sources reuse S for both halves; deterministic
//! targets make the target reliability term exactly 1. Draws are averaged,
//! then splits; non-positive reliability radicands yield flagged NaNs rather
//! than clipped values.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::regress::{make_folds, ridge_cv, ridge_fit, FoldKind};
use crate::rng::{keyed_rng, stream};
use crate::tensorio::TrialTensor;

/// Pearson correlation over equal-length slices. Zero spread or non-finite
/// inputs give NaN (callers treat NaN as a flagged value, not an error).
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "pearson inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs at least 2 samples, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        return Ok(f64::NAN);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Spearman-Brown step-up: the reliability a doubled measurement would have.
/// r = −1 is a pole and returns NaN.
pub fn spearman_brown(r: f64) -> f64 {
    if r == -1.0 {
        f64::NAN
    } else {
        2.0 * r / (1.0 + r)
    }
}

/// Randomly partition usable trials into two disjoint halves (sizes differ by
/// at most 1) and return their NaN-aware trial averages, `n_repeats` times.
pub fn split_half(
    trials: &TrialTensor,
    seed: u64,
    n_repeats: usize,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let usable: Vec<usize> = (0..trials.trials)
        .filter(|&t| trials.is_trial_usable(t))
        .collect();
    if usable.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "split-half needs at least 2 usable trials, got {}",
            usable.len()
        )));
    }
    Ok((0..n_repeats)
        .map(|r| split_half_once(trials, &usable, &mut keyed_rng(seed, &[stream::SPLIT_HALF, r as u64])))
        .collect())
}

fn split_half_once(
    trials: &TrialTensor,
    usable: &[usize],
    rng: &mut impl rand::Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut order = usable.to_vec();
    order.shuffle(rng);
    let cut = order.len().div_ceil(2);
    (
        trials.mean_over_trials(&order[..cut]),
        trials.mean_over_trials(&order[cut..]),
    )
}

// ---------------------------------------------------------------------------
// Neural predictivity
// ---------------------------------------------------------------------------

/// Per-condition response stacks entering the predictivity computation.
/// Row counts must agree with the paired `Responses` condition by condition;
/// rows are whatever axis the caller aligned (here: occluded frames).
#[derive(Debug, Clone)]
pub enum Responses {
    /// Trial-free sources/targets: models, oracles, ball state.
    Deterministic(Vec<DMatrix<f64>>),
    /// Trial-resolved recordings, `[trials × rows × units]` per condition.
    Trials(Vec<TrialTensor>),
}

impl Responses {
    pub fn n_conditions(&self) -> usize {
        match self {
            Responses::Deterministic(v) => v.len(),
            Responses::Trials(v) => v.len(),
        }
    }

    pub fn rows(&self, c: usize) -> usize {
        match self {
            Responses::Deterministic(v) => v[c].nrows(),
            Responses::Trials(v) => v[c].bins,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Responses::Deterministic(v) => v.first().map_or(0, |m| m.ncols()),
            Responses::Trials(v) => v.first().map_or(0, |t| t.units),
        }
    }

    fn mean(&self, c: usize) -> DMatrix<f64> {
        match self {
            Responses::Deterministic(v) => v[c].clone(),
            Responses::Trials(v) => {
                let usable: Vec<usize> =
                    (0..v[c].trials).filter(|&t| v[c].is_trial_usable(t)).collect();
                v[c].mean_over_trials(&usable)
            }
        }
    }

    /// Split-half averages for one condition; deterministic responses are
    /// their own both halves. `tag` separates source/target random streams.
    fn half_means(&self, c: usize, seed: u64, tag: u64, draw: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self {
            Responses::Deterministic(v) => Ok((v[c].clone(), v[c].clone())),
            Responses::Trials(v) => {
                let usable: Vec<usize> =
                    (0..v[c].trials).filter(|&t| v[c].is_trial_usable(t)).collect();
                if usable.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "condition {c} has {} usable trials; split-half needs 2",
                        usable.len()
                    )));
                }
                let mut rng = keyed_rng(seed, &[stream::SPLIT_HALF, tag, draw, c as u64]);
                Ok(split_half_once(&v[c], &usable, &mut rng))
            }
        }
    }
}

/// One 50/50 partition of condition indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainTest {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// How the ridge strength is chosen per train-test split.
#[derive(Debug, Clone)]
pub enum LambdaChoice {
    /// Grouped k-fold cross-validation over the grid on the train conditions.
    Cv { grid: Vec<f64>, folds: usize },
    /// Reuse an externally determined strength (e.g. the inter-animal fit).
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct NpConfig {
    pub lambda: LambdaChoice,
    /// Split-half draws averaged per train-test split.
    pub n_repeats: usize,
    pub seed: u64,
    /// Scorer the lambda cross-validation maximizes on held folds.
    pub cv_score: fn(&DMatrix<f64>, &DMatrix<f64>) -> f64,
}

impl Default for NpConfig {
    fn default() -> Self {
        NpConfig {
            lambda: LambdaChoice::Cv { grid: crate::regress::default_lambda_grid(), folds: 5 },
            n_repeats: 10,
            seed: 0,
            cv_score: mean_column_pearson,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictivityResult {
    /// Final NP per unit: mean over splits of the per-split draw averages.
    pub per_unit: Vec<f64>,
    /// `[split][unit]` NP values.
    pub per_split: Vec<Vec<f64>>,
    /// Count of flagged (NaN) draw/numerators per unit.
    pub flagged: Vec<usize>,
    pub lambda_per_split: Vec<f64>,
    pub median: f64,
    pub sem: f64,
    /// Units whose final value is NaN (excluded from median/sem).
    pub n_nan_units: usize,
}

impl PredictivityResult {
    /// CSV export: unit_id, animal, NP_mean, one column per split, flagged.
    pub fn to_csv(&self, units: &[(String, String)]) -> String {
        let n_splits = self.per_split.len();
        let mut out = String::from("unit_id,animal,np_mean");
        for s in 0..n_splits {
            out.push_str(&format!(",np_split_{s}"));
        }
        out.push_str(",flagged\n");
        for u in 0..self.per_unit.len() {
            let (id, animal) = units
                .get(u)
                .cloned()
                .unwrap_or_else(|| (format!("unit_{u:04}"), String::new()));
            out.push_str(&format!("{id},{animal},{}", fmt_nan(self.per_unit[u])));
            for s in 0..n_splits {
                out.push_str(&format!(",{}", fmt_nan(self.per_split[s][u])));
            }
            out.push_str(&format!(",{}\n", self.flagged[u]));
        }
        out
    }
}

fn fmt_nan(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// Mean over columns of the per-column Pearson between prediction and truth;
/// NaN columns are skipped. The default ridge CV scorer.
pub fn mean_column_pearson(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> f64 {
    let rs = finite_column_pearsons(pred, actual);
    if rs.is_empty() {
        f64::NEG_INFINITY
    } else {
        rs.iter().sum::<f64>() / rs.len() as f64
    }
}

/// Median over columns of the per-column Pearson; the ball-decode CV scorer.
pub fn median_column_pearson(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> f64 {
    let rs = finite_column_pearsons(pred, actual);
    if rs.is_empty() {
        f64::NEG_INFINITY
    } else {
        median_sem(&rs).median
    }
}

fn finite_column_pearsons(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Vec<f64> {
    (0..pred.ncols().min(actual.ncols()))
        .filter_map(|j| {
            let a: Vec<f64> = pred.column(j).iter().copied().collect();
            let b: Vec<f64> = actual.column(j).iter().copied().collect();
            pearson(&a, &b).ok().filter(|r| r.is_finite())
        })
        .collect()
}

fn stack_conditions(mats: &[DMatrix<f64>], conds: &[usize]) -> DMatrix<f64> {
    let rows: usize = conds.iter().map(|&c| mats[c].nrows()).sum();
    let cols = mats[conds[0]].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for &c in conds {
        out.rows_mut(at, mats[c].nrows()).copy_from(&mats[c]);
        at += mats[c].nrows();
    }
    out
}

fn row_groups(mats: &[DMatrix<f64>], conds: &[usize]) -> Vec<u64> {
    let mut groups = Vec::new();
    for &c in conds {
        groups.extend(std::iter::repeat_n(c as u64, mats[c].nrows()));
    }
    groups
}

fn column_pearson(a: &DMatrix<f64>, b: &DMatrix<f64>, j: usize) -> f64 {
    let x: Vec<f64> = a.column(j).iter().copied().collect();
    let y: Vec<f64> = b.column(j).iter().copied().collect();
    pearson(&x, &y).unwrap_or(f64::NAN)
}

fn column_has_spread(m: &DMatrix<f64>, j: usize) -> bool {
    let first = m[(0, j)];
    m.column(j).iter().any(|&v| v != first)
}

/// Correlation of a fitted prediction with its outcome. A prediction with no
/// variance carries no signal, so it scores exactly 0 rather than an
/// undefined correlation; degenerate sources (constant features, fully shrunk
/// fits) then report zero predictivity instead of a flagged unit.
fn prediction_pearson(pred: &DMatrix<f64>, actual: &DMatrix<f64>, j: usize) -> f64 {
    if !column_has_spread(pred, j) {
        return 0.0;
    }
    column_pearson(pred, actual, j)
}

/// Reliability-adjusted predictivity of `target` units from `source`
/// features, per unit, across the given train-test condition splits.
pub fn neural_predictivity(
    source: &Responses,
    target: &Responses,
    splits: &[TrainTest],
    cfg: &NpConfig,
) -> Result<PredictivityResult> {
    let nc = source.n_conditions();
    if nc == 0 || target.n_conditions() != nc {
        return Err(Error::Misaligned(format!(
            "source has {nc} conditions, target has {}",
            target.n_conditions()
        )));
    }
    for c in 0..nc {
        if source.rows(c) != target.rows(c) {
            return Err(Error::Misaligned(format!(
                "condition {c}: source has {} rows, target has {}",
                source.rows(c),
                target.rows(c)
            )));
        }
    }
    if splits.is_empty() {
        return Err(Error::Empty("no train-test splits given".into()));
    }
    for (si, split) in splits.iter().enumerate() {
        if split.train.is_empty() || split.test.is_empty() {
            return Err(Error::InvalidArgument(format!("split {si} has an empty side")));
        }
        if split.train.iter().chain(&split.test).any(|&c| c >= nc) {
            return Err(Error::InvalidArgument(format!("split {si} references a missing condition")));
        }
        if split.train.iter().any(|c| split.test.contains(c)) {
            return Err(Error::InvalidArgument(format!("split {si} overlaps train and test")));
        }
    }
    if cfg.n_repeats == 0 {
        return Err(Error::InvalidArgument("n_repeats must be ≥ 1".into()));
    }

    let n_units = target.dims();
    let source_means: Vec<DMatrix<f64>> = (0..nc).map(|c| source.mean(c)).collect();
    let target_means: Vec<DMatrix<f64>> = (0..nc).map(|c| target.mean(c)).collect();

    // Per split: selected lambda, numerator correlations, and the stacked
    // train/test row layout reused by every draw.
    let mut lambda_per_split = Vec::with_capacity(splits.len());
    let mut numerators: Vec<Vec<f64>> = Vec::with_capacity(splits.len());
    for (si, split) in splits.iter().enumerate() {
        let x_train = stack_conditions(&source_means, &split.train);
        let y_train = stack_conditions(&target_means, &split.train);
        let lambda = match &cfg.lambda {
            LambdaChoice::Fixed(l) => *l,
            LambdaChoice::Cv { grid, folds } => {
                let groups = row_groups(&source_means, &split.train);
                let plan = make_folds(
                    &groups,
                    *folds,
                    FoldKind::Grouped,
                    keyed_rng(cfg.seed, &[stream::CONDITION_SPLIT, si as u64]).random(),
                )?;
                ridge_cv(&x_train, &y_train, grid, &plan, cfg.cv_score)?.0
            }
        };
        lambda_per_split.push(lambda);
        let l = ridge_fit(&x_train, &y_train, lambda)?;
        let pred = l.predict(&stack_conditions(&source_means, &split.test));
        let actual = stack_conditions(&target_means, &split.test);
        numerators.push((0..n_units).map(|u| prediction_pearson(&pred, &actual, u)).collect());
    }

    let mut sum: Vec<Vec<f64>> = vec![vec![0.0; n_units]; splits.len()];
    let mut count: Vec<Vec<usize>> = vec![vec![0; n_units]; splits.len()];
    let mut flagged: Vec<usize> = vec![0; n_units];

    for draw in 0..cfg.n_repeats as u64 {
        let mut source_halves = Vec::with_capacity(nc);
        let mut target_halves = Vec::with_capacity(nc);
        for c in 0..nc {
            source_halves.push(source.half_means(c, cfg.seed, 1, draw)?);
            target_halves.push(target.half_means(c, cfg.seed, 0, draw)?);
        }
        let s1: Vec<DMatrix<f64>> = source_halves.iter().map(|h| h.0.clone()).collect();
        let s2: Vec<DMatrix<f64>> = source_halves.iter().map(|h| h.1.clone()).collect();
        let a1: Vec<DMatrix<f64>> = target_halves.iter().map(|h| h.0.clone()).collect();
        let a2: Vec<DMatrix<f64>> = target_halves.iter().map(|h| h.1.clone()).collect();

        for (si, split) in splits.iter().enumerate() {
            let l1 = ridge_fit(
                &stack_conditions(&s1, &split.train),
                &stack_conditions(&a1, &split.train),
                lambda_per_split[si],
            )?;
            let l2 = ridge_fit(
                &stack_conditions(&s2, &split.train),
                &stack_conditions(&a2, &split.train),
                lambda_per_split[si],
            )?;
            let p1 = l1.predict(&stack_conditions(&s1, &split.test));
            let p2 = l2.predict(&stack_conditions(&s2, &split.test));
            let a1_test = stack_conditions(&a1, &split.test);
            let a2_test = stack_conditions(&a2, &split.test);
            for u in 0..n_units {
                let map_rel = if column_has_spread(&p1, u) && column_has_spread(&p2, u) {
                    spearman_brown(column_pearson(&p1, &p2, u))
                } else {
                    0.0
                };
                let tgt_rel = spearman_brown(column_pearson(&a1_test, &a2_test, u));
                let radicand = map_rel * tgt_rel;
                if numerators[si][u] == 0.0 {
                    // No measured correlation: zero predictivity regardless of
                    // the (possibly also degenerate) reliability normalizer.
                    count[si][u] += 1;
                    continue;
                }
                let np = numerators[si][u] / radicand.sqrt();
                if radicand > 0.0 && np.is_finite() {
                    sum[si][u] += np;
                    count[si][u] += 1;
                } else {
                    flagged[u] += 1;
                }
            }
        }
    }

    let per_split: Vec<Vec<f64>> = (0..splits.len())
        .map(|si| {
            (0..n_units)
                .map(|u| {
                    if count[si][u] > 0 {
                        sum[si][u] / count[si][u] as f64
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    let per_unit: Vec<f64> = (0..n_units)
        .map(|u| {
            let finite: Vec<f64> = per_split.iter().map(|s| s[u]).filter(|v| v.is_finite()).collect();
            if finite.is_empty() {
                f64::NAN
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            }
        })
        .collect();
    let stats = median_sem(&per_unit);
    Ok(PredictivityResult {
        median: stats.median,
        sem: stats.sem,
        n_nan_units: stats.n_nan,
        per_unit,
        per_split,
        flagged,
        lambda_per_split,
    })
}

// ---------------------------------------------------------------------------
// Aggregation statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedStats {
    pub weighted_mean: f64,
    pub variance: f64,
    pub effective_sample_size: f64,
    pub weighted_sem: f64,
}

/// Weighted mean / variance / effective sample size / s.e.m., exactly:
/// mean = Σwx/Σw; variance = Σw(x−mean)²/Σw; ESS = (Σw)²/Σw²;
/// sem = sqrt(variance / ESS).
pub fn weighted_mean_sem(x: &[f64], w: &[f64]) -> Result<WeightedStats> {
    if x.is_empty() {
        return Err(Error::Empty("weighted_mean_sem got no groups".into()));
    }
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values vs {} weights",
            x.len(),
            w.len()
        )));
    }
    if w.iter().any(|&wi| !(wi.is_finite() && wi > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive and finite".into()));
    }
    let w_sum: f64 = w.iter().sum();
    let weighted_mean = x.iter().zip(w).map(|(xi, wi)| wi * xi).sum::<f64>() / w_sum;
    let variance = x
        .iter()
        .zip(w)
        .map(|(xi, wi)| wi * (xi - weighted_mean) * (xi - weighted_mean))
        .sum::<f64>()
        / w_sum;
    let effective_sample_size = w_sum * w_sum / w.iter().map(|wi| wi * wi).sum::<f64>();
    Ok(WeightedStats {
        weighted_mean,
        variance,
        effective_sample_size,
        weighted_sem: (variance / effective_sample_size).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianSem {
    pub median: f64,
    /// Sample standard deviation over √n, on the finite subset.
    pub sem: f64,
    pub n_finite: usize,
    pub n_nan: usize,
}

/// Median and standard error of the mean over the finite entries; NaNs are
/// excluded and counted. A single value has sem 0 by convention.
pub fn median_sem(values: &[f64]) -> MedianSem {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n_nan = values.len() - finite.len();
    let n = finite.len();
    if n == 0 {
        return MedianSem { median: f64::NAN, sem: f64::NAN, n_finite: 0, n_nan };
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    };
    let sem = if n < 2 {
        0.0
    } else {
        let mean = finite.iter().sum::<f64>() / n as f64;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    MedianSem { median, sem, n_finite: n, n_nan }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn pearson_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.981).abs() < 1e-3, "r = {r}");
    }

    #[test]
    fn pearson_edge_cases() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap().is_nan());
        assert!(pearson(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]).unwrap().is_nan());
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_brown_fixed_points_and_monotonicity() {
        assert_eq!(spearman_brown(1.0), 1.0);
        assert_eq!(spearman_brown(0.0), 0.0);
        assert!((spearman_brown(1.0 / 3.0) - 0.5).abs() < 1e-15);
        assert!(spearman_brown(-1.0).is_nan());
        let mut prev = f64::NEG_INFINITY;
        let mut r = -0.99;
        while r <= 1.0 {
            let sb = spearman_brown(r);
            assert!(sb > prev, "not monotone at r = {r}");
            prev = sb;
            r += 0.01;
        }
    }

    fn noisy_trials(
        signal: &DMatrix<f64>,
        n_trials: usize,
        sigma: f64,
        seed: u64,
    ) -> TrialTensor {
        let mut rng = keyed_rng(seed, &[0x7e57]);
        let (bins, units) = signal.shape();
        let mut data = Vec::with_capacity(n_trials * bins * units);
        for _ in 0..n_trials {
            for b in 0..bins {
                for u in 0..units {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    data.push(signal[(b, u)] + sigma * noise);
                }
            }
        }
        TrialTensor::new(n_trials, bins, units, data).unwrap()
    }

    #[test]
    fn identical_trials_split_into_identical_halves() {
        let signal = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let trials = noisy_trials(&signal, 2, 0.0, 1);
        let halves = split_half(&trials, 7, 3).unwrap();
        assert_eq!(halves.len(), 3);
        for (h1, h2) in halves {
            assert_eq!(h1, signal);
            assert_eq!(h2, signal);
        }
    }

    #[test]
    fn split_half_is_deterministic_and_disjoint() {
        let signal = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let trials = noisy_trials(&signal, 7, 0.5, 2);
        let a = split_half(&trials, 42, 5).unwrap();
        let b = split_half(&trials, 42, 5).unwrap();
        for ((a1, a2), (b1, b2)) in a.iter().zip(&b) {
            assert_eq!(a1, b1);
            assert_eq!(a2, b2);
        }
        // Halves partition the trials: with 7 trials the halves average 4 and
        // 3 trials, so 4·h1 + 3·h2 must reconstruct the total sum.
        let all = trials.mean_over_trials(&(0..7).collect::<Vec<_>>());
        for (h1, h2) in &a {
            let recombined = (h1 * 4.0 + h2 * 3.0) / 7.0;
            assert!((&recombined - &all).abs().max() < 1e-12);
        }
    }

    #[test]
    fn split_half_needs_two_usable_trials() {
        let mut data = vec![f64::NAN; 2 * 2 * 2];
        for (i, v) in data.iter_mut().enumerate().take(4) {
            *v = i as f64;
        }
        let trials = TrialTensor::new(2, 2, 2, data).unwrap();
        assert!(matches!(split_half(&trials, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn split_half_correlation_matches_analytic_reliability() {
        // signal variance 1, noise sigma 1, 8 trials: halves of 4 give
        // E[corr] ≈ V / (V + σ²/4) = 0.8.
        let rows = 400;
        let mut rng = keyed_rng(3, &[0x516]);
        let signal = DMatrix::from_fn(rows, 1, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let trials = noisy_trials(&signal, 8, 1.0, 4);
        let halves = split_half(&trials, 11, 1000).unwrap();
        let mut total = 0.0;
        for (h1, h2) in &halves {
            let a: Vec<f64> = h1.column(0).iter().copied().collect();
            let b: Vec<f64> = h2.column(0).iter().copied().collect();
            total += pearson(&a, &b).unwrap();
        }
        let mean = total / halves.len() as f64;
        assert!((mean - 0.8).abs() < 0.03, "mean split-half corr {mean}");
    }

    #[test]
    fn weighted_stats_match_exact_rational_oracle() {
        let x = [0.0, 4.0];
        let w = [1.0, 3.0];
        let stats = weighted_mean_sem(&x, &w).unwrap();
        // Exact arithmetic: mean = 12/4 = 3; variance = (1·9 + 3·1)/4 = 3;
        // ESS = 16/10 = 8/5; sem² = 3/(8/5) = 15/8.
        let big = |v: i64| BigRational::from_integer(BigInt::from(v));
        let mean = (big(1) * big(0) + big(3) * big(4)) / (big(1) + big(3));
        let var = (big(1) * (big(0) - mean.clone()).pow(2) + big(3) * (big(4) - mean.clone()).pow(2))
            / (big(1) + big(3));
        let ess = (big(1) + big(3)).pow(2) / (big(1) * big(1) + big(3) * big(3));
        let to_f = |r: &BigRational| {
            let n: f64 = r.numer().to_string().parse().unwrap();
            let d: f64 = r.denom().to_string().parse().unwrap();
            n / d
        };
        assert_eq!(stats.weighted_mean, to_f(&mean));
        assert_eq!(stats.variance, to_f(&var));
        assert_eq!(stats.effective_sample_size, to_f(&ess));
        assert_eq!(stats.weighted_sem, (to_f(&var) / to_f(&ess)).sqrt());
        assert_eq!(stats.weighted_mean, 3.0);
        assert_eq!(stats.variance, 3.0);
        assert_eq!(stats.effective_sample_size, 1.6);
        assert_eq!(stats.weighted_sem, 1.875f64.sqrt());
    }

    #[test]
    fn equal_weights_reduce_to_plain_mean() {
        let x = [1.0, 2.0, 6.0];
        let stats = weighted_mean_sem(&x, &[2.0, 2.0, 2.0]).unwrap();
        assert!((stats.weighted_mean - 3.0).abs() < 1e-15);
        assert!((stats.effective_sample_size - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_weighted_constant_values_have_zero_spread() {
        let w = [150.0, 149.0, 150.0, 150.0, 150.0, 150.0, 94.0, 149.0];
        assert_eq!(w.iter().sum::<f64>(), 1142.0);
        let stats = weighted_mean_sem(&[1.0; 8], &w).unwrap();
        assert_eq!(stats.weighted_mean, 1.0);
        assert_eq!(stats.variance, 0.0);
        assert_eq!(stats.weighted_sem, 0.0);
        assert!(stats.effective_sample_size <= 8.0);
    }

    #[test]
    fn single_group_weighted_stats_degenerate_cleanly() {
        let stats = weighted_mean_sem(&[2.5], &[7.0]).unwrap();
        assert_eq!(stats.weighted_mean, 2.5);
        assert_eq!(stats.variance, 0.0);
        assert_eq!(stats.effective_sample_size, 1.0);
        assert_eq!(stats.weighted_sem, 0.0);
    }

    #[test]
    fn weighted_stats_reject_bad_inputs() {
        assert!(matches!(weighted_mean_sem(&[], &[]), Err(Error::Empty(_))));
        assert!(weighted_mean_sem(&[1.0], &[1.0, 2.0]).is_err());
        assert!(weighted_mean_sem(&[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn median_sem_basics() {
        let m = median_sem(&[1.0, 2.0, 3.0]);
        assert_eq!(m.median, 2.0);
        assert!((m.sem - 1.0 / 3.0f64.sqrt()).abs() < 1e-15);
        let all_equal = median_sem(&[4.0; 9]);
        assert_eq!(all_equal.median, 4.0);
        assert_eq!(all_equal.sem, 0.0);
        let with_nans = median_sem(&[1.0, f64::NAN, 3.0, f64::NAN]);
        assert_eq!(with_nans.median, 2.0);
        assert_eq!(with_nans.n_nan, 2);
        assert_eq!(with_nans.n_finite, 2);
    }

    // -- neural predictivity fixtures --------------------------------------

    fn toy_conditions(
        n_cond: usize,
        rows: usize,
        units: usize,
        seed: u64,
    ) -> Vec<DMatrix<f64>> {
        let mut rng = keyed_rng(seed, &[0x51f]);
        (0..n_cond)
            .map(|_| DMatrix::from_fn(rows, units, |_, _| StandardNormal.sample(&mut rng)))
            .collect()
    }

    fn even_odd_splits(n_cond: usize, k: usize) -> Vec<TrainTest> {
        (0..k)
            .map(|s| {
                let train: Vec<usize> = (0..n_cond).filter(|c| (c + s) % 2 == 0).collect();
                let test: Vec<usize> = (0..n_cond).filter(|c| (c + s) % 2 == 1).collect();
                TrainTest { train, test }
            })
            .collect()
    }

    fn identical_trial_stack(signal: &[DMatrix<f64>], n_trials: usize) -> Responses {
        Responses::Trials(
            signal
                .iter()
                .map(|m| {
                    let (bins, units) = m.shape();
                    let mut data = Vec::with_capacity(n_trials * bins * units);
                    for _ in 0..n_trials {
                        for b in 0..bins {
                            for u in 0..units {
                                data.push(m[(b, u)]);
                            }
                        }
                    }
                    TrialTensor::new(n_trials, bins, units, data).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn perfect_replica_scores_exactly_one() {
        let signal = toy_conditions(12, 6, 5, 21);
        // Identical trials mean every split-half equals the signal, so the
        // reliability terms are exactly 1 and the mapping is noiseless.
        for n_trials in [2, 5, 9] {
            let target = identical_trial_stack(&signal, n_trials);
            let source = identical_trial_stack(&signal, n_trials);
            let cfg = NpConfig { n_repeats: 3, seed: 5, ..Default::default() };
            let result =
                neural_predictivity(&source, &target, &even_odd_splits(12, 2), &cfg).unwrap();
            for (u, np) in result.per_unit.iter().enumerate() {
                assert!((np - 1.0).abs() < 1e-6, "unit {u}: NP = {np} ({n_trials} trials)");
            }
            assert!((result.median - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn independent_source_scores_near_zero() {
        let signal = toy_conditions(40, 30, 4, 31);
        let target = Responses::Trials(
            signal
                .iter()
                .map(|m| noisy_trials(m, 8, 0.3, 32))
                .collect::<Vec<_>>(),
        );
        let source = Responses::Deterministic(toy_conditions(40, 30, 6, 33));
        let cfg = NpConfig { n_repeats: 5, seed: 6, ..Default::default() };
        let result = neural_predictivity(&source, &target, &even_odd_splits(40, 4), &cfg).unwrap();
        assert!(
            result.median.abs() < 0.05,
            "median NP {} for an unrelated source",
            result.median
        );
    }

    #[test]
    fn np_is_invariant_to_source_affine_rescaling() {
        let latent = toy_conditions(10, 8, 3, 41);
        let mut rng = keyed_rng(42, &[9]);
        let target = Responses::Trials(
            latent.iter().map(|m| noisy_trials(m, 6, 0.2, 43)).collect::<Vec<_>>(),
        );
        let source = Responses::Deterministic(latent.clone());
        // One affine map per feature, shared by every condition.
        let scales: Vec<f64> = (0..3).map(|_| 0.1 + 5.0 * rng.random::<f64>()).collect();
        let shifts: Vec<f64> = (0..3).map(|_| 10.0 * rng.random::<f64>() - 5.0).collect();
        let scaled = Responses::Deterministic(
            latent
                .iter()
                .map(|m| {
                    let mut out = m.clone();
                    for j in 0..out.ncols() {
                        for i in 0..out.nrows() {
                            out[(i, j)] = out[(i, j)] * scales[j] + shifts[j];
                        }
                    }
                    out
                })
                .collect::<Vec<_>>(),
        );
        // Rescaling must not leak into lambda selection noise: pin lambda.
        let cfg = NpConfig {
            lambda: LambdaChoice::Fixed(1.0),
            n_repeats: 4,
            seed: 7,
            ..Default::default()
        };
        let splits = even_odd_splits(10, 3);
        let a = neural_predictivity(&source, &target, &splits, &cfg).unwrap();
        let b = neural_predictivity(&scaled, &target, &splits, &cfg).unwrap();
        for u in 0..a.per_unit.len() {
            // Same scale-free computation up to floating-point noise.
            assert!(
                (a.per_unit[u] - b.per_unit[u]).abs() < 1e-8,
                "unit {u}: {} vs {}",
                a.per_unit[u],
                b.per_unit[u]
            );
        }
    }

    #[test]
    fn predictivity_is_seed_deterministic() {
        let signal = toy_conditions(12, 5, 3, 51);
        let target = Responses::Trials(
            signal.iter().map(|m| noisy_trials(m, 5, 0.4, 52)).collect::<Vec<_>>(),
        );
        let source = Responses::Deterministic(signal);
        let cfg = NpConfig { n_repeats: 3, seed: 11, ..Default::default() };
        let splits = even_odd_splits(12, 2);
        let a = neural_predictivity(&source, &target, &splits, &cfg).unwrap();
        let b = neural_predictivity(&source, &target, &splits, &cfg).unwrap();
        assert_eq!(a.per_unit, b.per_unit);
        assert_eq!(a.lambda_per_split, b.lambda_per_split);
    }

    #[test]
    fn constant_source_scores_exactly_zero() {
        // A featureless source cannot predict anything; the mapped prediction
        // collapses to a constant and every unit scores 0, not NaN.
        let signal = toy_conditions(12, 5, 3, 81);
        let target = Responses::Trials(
            signal.iter().map(|m| noisy_trials(m, 5, 0.3, 82)).collect::<Vec<_>>(),
        );
        let constant =
            Responses::Deterministic(signal.iter().map(|m| DMatrix::repeat(m.nrows(), 2, 1.0)).collect());
        let cfg = NpConfig { n_repeats: 3, seed: 5, ..Default::default() };
        let splits = even_odd_splits(12, 3);
        let r = neural_predictivity(&constant, &target, &splits, &cfg).unwrap();
        assert!(r.per_unit.iter().all(|&v| v == 0.0), "{:?}", r.per_unit);
        assert_eq!(r.median, 0.0);
        assert_eq!(r.n_nan_units, 0);
        assert!(r.flagged.iter().all(|&f| f == 0));
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let m = toy_conditions(4, 5, 2, 61);
        let shorter = toy_conditions(4, 4, 2, 62);
        let src = Responses::Deterministic(m.clone());
        let bad_rows = Responses::Deterministic(shorter);
        let splits = even_odd_splits(4, 1);
        let cfg = NpConfig::default();
        assert!(matches!(
            neural_predictivity(&src, &bad_rows, &splits, &cfg),
            Err(Error::Misaligned(_))
        ));
        let bad_split = vec![TrainTest { train: vec![0, 1], test: vec![1, 2] }];
        assert!(matches!(
            neural_predictivity(&src, &Responses::Deterministic(m), &bad_split, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn csv_export_has_one_row_per_unit() {
        let signal = toy_conditions(12, 4, 2, 71);
        let target = identical_trial_stack(&signal, 3);
        let source = Responses::Deterministic(signal);
        let cfg = NpConfig { n_repeats: 2, seed: 1, ..Default::default() };
        let result = neural_predictivity(&source, &target, &even_odd_splits(12, 2), &cfg).unwrap();
        let csv = result.to_csv(&[
            ("u0".into(), "P".into()),
            ("u1".into(), "M".into()),
        ]);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("unit_id,animal,np_mean,np_split_0,np_split_1,flagged"));
        assert!(lines[1].starts_with("u0,P,"));
        assert!(lines[2].starts_with("u1,M,"));
    }
}
