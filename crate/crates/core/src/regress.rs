//! Regression solvers and cross-validation iterators: closed-form ridge,
//! full-batch logistic regression with line search, stratified and grouped
//! k-fold splitters. These underpin every mapping fit elsewhere in the crate.
//!
//! Both fitters standardize features internally (zero mean, unit variance,
//! train statistics only; constant features get a unit divisor), so
//! regularization acts in the standardized space and intercepts are
//! unpenalized.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, stream};

/// `k` points log-spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    assert!(k >= 2 && lo > 0.0 && hi > lo);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| match i {
            0 => lo,
            _ if i == k - 1 => hi,
            _ => (llo + (lhi - llo) * i as f64 / (k - 1) as f64).exp(),
        })
        .collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_space(1e-4, 1e4, 9)
}

pub fn default_c_grid() -> Vec<f64> {
    log_space(1e-3, 1e1, 5)
}

fn ensure_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{name} contains non-finite values")))
    }
}

/// Per-column affine normalizer. Population standard deviation; columns with
/// zero spread keep a divisor of 1 so they pass through centered.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Standardizer {
        let n = x.nrows().max(1) as f64;
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().enumerate().map(|(j, c)| {
                let m = mean[j];
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 0.0 { s } else { 1.0 }
            }),
        );
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for j in 0..z.ncols() {
            let (m, s) = (self.mean[j], self.scale[j]);
            for i in 0..z.nrows() {
                z[(i, j)] = (z[(i, j)] - m) / s;
            }
        }
        z
    }
}

/// Closed-form ridge solution. `weights` is `[targets × features]` in the
/// standardized feature space; `predict` applies the full affine map.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub lambda: f64,
    standardizer: Standardizer,
}

impl RidgeSolution {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.standardizer.transform(x);
        let mut out = z * self.weights.transpose();
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[(i, j)] += self.intercept[j];
            }
        }
        out
    }

    /// Weights mapped back to raw feature units, `[targets × features]`.
    pub fn weights_original(&self) -> DMatrix<f64> {
        let mut w = self.weights.clone();
        for t in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(t, j)] /= self.standardizer.scale[j];
            }
        }
        w
    }

    pub fn intercept_original(&self) -> DVector<f64> {
        let w = self.weights_original();
        let mut b = self.intercept.clone();
        for t in 0..b.len() {
            for j in 0..w.ncols() {
                b[t] -= self.standardizer.mean[j] * w[(t, j)];
            }
        }
        b
    }
}

/// Minimize ||Yc − Z·Wᵀ||² + λ||W||² over standardized features Z, with the
/// intercept recovered from column means (hence unpenalized). Solved by
/// Cholesky on the (p × p) Gram matrix, falling back to SVD when the
/// factorization fails (λ = 0 with rank-deficient Z).
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeSolution> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "ridge_fit: X has {} rows, Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be ≥ 0, got {lambda}")));
    }
    ensure_finite("X", x)?;
    ensure_finite("Y", y)?;

    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let n = y.nrows() as f64;
    let y_mean = DVector::from_iterator(y.ncols(), y.column_iter().map(|c| c.sum() / n));
    let mut yc = y.clone();
    for j in 0..yc.ncols() {
        for i in 0..yc.nrows() {
            yc[(i, j)] -= y_mean[j];
        }
    }

    let p = z.ncols();
    let mut gram = z.transpose() * &z;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = z.transpose() * &yc;
    let w_cols = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => {
            let svd = z.clone().svd(true, true);
            svd.solve(&yc, 1e-12)
                .map_err(|e| Error::Numerical(format!("ridge SVD fallback failed: {e}")))?
        }
    };
    let solution = RidgeSolution {
        weights: w_cols.transpose(),
        intercept: y_mean,
        lambda,
        standardizer,
    };
    ensure_finite("ridge weights", &solution.weights)?;
    Ok(solution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldKind {
    Stratified,
    Grouped,
}

/// A k-way partition of sample indices.
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub kind: FoldKind,
    pub n: usize,
    folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold(&self, f: usize) -> &[usize] {
        &self.folds[f]
    }

    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.k())
            .filter(|&g| g != f)
            .flat_map(|g| self.folds[g].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// (train, validation) index pairs, one per fold.
    pub fn splits(&self) -> impl Iterator<Item = (Vec<usize>, Vec<usize>)> + '_ {
        (0..self.k()).map(|f| {
            let mut val = self.folds[f].clone();
            val.sort_unstable();
            (self.train_indices(f), val)
        })
    }
}

/// Build a deterministic fold plan. For `Stratified`, `values` are class
/// labels and every fold receives each class's samples within ±1 of an even
/// share. For `Grouped`, `values` are group ids and no group is split across
/// folds; groups go to the currently smallest fold, largest first.
pub fn make_folds(values: &[u64], k: usize, kind: FoldKind, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k ≥ 2 folds, got {k}")));
    }
    if values.is_empty() {
        return Err(Error::Empty("no samples to fold".into()));
    }
    let mut folds = vec![Vec::new(); k];
    match kind {
        FoldKind::Stratified => {
            if values.len() < k {
                return Err(Error::InvalidArgument(format!(
                    "cannot split {} samples into {k} folds",
                    values.len()
                )));
            }
            let mut classes: Vec<u64> = values.to_vec();
            classes.sort_unstable();
            classes.dedup();
            let mut dealt = 0usize;
            for &class in &classes {
                let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] == class).collect();
                let mut rng = keyed_rng(seed, &[stream::FOLD_SHUFFLE, class]);
                idx.shuffle(&mut rng);
                for (j, i) in idx.into_iter().enumerate() {
                    folds[(dealt + j) % k].push(i);
                }
                dealt = (dealt + values.iter().filter(|&&v| v == class).count()) % k;
            }
        }
        FoldKind::Grouped => {
            let mut groups: Vec<u64> = values.to_vec();
            groups.sort_unstable();
            groups.dedup();
            if groups.len() < k {
                return Err(Error::InvalidArgument(format!(
                    "grouped folding needs ≥ {k} groups, got {}",
                    groups.len()
                )));
            }
            let mut rng = keyed_rng(seed, &[stream::FOLD_SHUFFLE]);
            groups.shuffle(&mut rng);
            let sizes: Vec<usize> = groups
                .iter()
                .map(|&g| values.iter().filter(|&&v| v == g).count())
                .collect();
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.sort_by_key(|&gi| std::cmp::Reverse(sizes[gi]));
            for gi in order {
                let fold = (0..k).min_by_key(|&f| (folds[f].len(), f)).unwrap();
                for i in 0..values.len() {
                    if values[i] == groups[gi] {
                        folds[fold].push(i);
                    }
                }
            }
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(FoldPlan { kind, n: values.len(), folds })
}

fn take_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Select the ridge strength maximizing the mean held-fold `score`, ties
/// broken toward the larger lambda, then refit on all samples.
pub fn ridge_cv(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda_grid: &[f64],
    plan: &FoldPlan,
    score: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> f64,
) -> Result<(f64, RidgeSolution)> {
    if lambda_grid.is_empty() {
        return Err(Error::Empty("lambda grid is empty".into()));
    }
    if plan.n != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} samples, X has {}",
            plan.n,
            x.nrows()
        )));
    }
    for f in 0..plan.k() {
        if plan.fold(f).len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "fold {f} has {} samples; held-fold scoring needs at least 2",
                plan.fold(f).len()
            )));
        }
    }
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let mut best: Option<(f64, f64)> = None; // (lambda, mean score)
    for &lambda in &grid {
        let mut total = 0.0;
        for (train, val) in plan.splits() {
            let fit = ridge_fit(&take_rows(x, &train), &take_rows(y, &train), lambda)?;
            let pred = fit.predict(&take_rows(x, &val));
            total += score(&pred, &take_rows(y, &val));
        }
        let mean = total / plan.k() as f64;
        let better = match best {
            None => true,
            Some((_, s)) => mean >= s, // ascending grid: ≥ keeps the larger lambda on ties
        };
        if better {
            best = Some((lambda, mean));
        }
    }
    let (lambda, _) = best.unwrap();
    let refit = ridge_fit(x, y, lambda)?;
    Ok((lambda, refit))
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: DVector<f64>,
    pub intercept: f64,
    /// Inverse regularization strength selected by cross-validation.
    pub c: f64,
    standardizer: Standardizer,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let z = self.standardizer.transform(x);
        DVector::from_iterator(
            z.nrows(),
            z.row_iter()
                .map(|r| sigmoid(r.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum::<f64>() + self.intercept)),
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct LogisticProblem<'a> {
    z: &'a DMatrix<f64>,
    /// Labels as ±1.
    y: Vec<f64>,
    /// L2 weight on ||w||²/2 added to the mean log-loss, i.e. 1/C. Pairing the
    /// mean-loss data term with an n-free penalty makes the objective exactly
    /// invariant to duplicating every sample.
    reg: f64,
}

impl LogisticProblem<'_> {
    fn loss(&self, w: &DVector<f64>, b: f64) -> f64 {
        let n = self.z.nrows() as f64;
        let mut total = 0.0;
        for (i, row) in self.z.row_iter().enumerate() {
            let m = row.iter().zip(w.iter()).map(|(a, c)| a * c).sum::<f64>() + b;
            total += softplus(-self.y[i] * m);
        }
        total / n + 0.5 * self.reg * w.norm_squared()
    }

    fn grad(&self, w: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let n = self.z.nrows() as f64;
        let mut gw = DVector::zeros(w.len());
        let mut gb = 0.0;
        for (i, row) in self.z.row_iter().enumerate() {
            let m = row.iter().zip(w.iter()).map(|(a, c)| a * c).sum::<f64>() + b;
            let coeff = -self.y[i] * sigmoid(-self.y[i] * m) / n;
            for j in 0..w.len() {
                gw[j] += coeff * row[j];
            }
            gb += coeff;
        }
        gw += self.reg * w;
        (gw, gb)
    }
}

/// Full-batch gradient descent with backtracking line search (sufficient
/// decrease 0.5·t·||g||²). The loss never increases; a step that cannot make
/// progress leaves the iterate unchanged.
fn logistic_descend(problem: &LogisticProblem, iters: usize) -> (DVector<f64>, f64, Vec<f64>) {
    let mut w = DVector::zeros(problem.z.ncols());
    let mut b = 0.0;
    let mut loss = problem.loss(&w, b);
    let mut losses = Vec::with_capacity(iters + 1);
    losses.push(loss);
    let mut step = 1.0;
    for _ in 0..iters {
        let (gw, gb) = problem.grad(&w, b);
        let gnorm2 = gw.norm_squared() + gb * gb;
        if gnorm2 == 0.0 {
            losses.push(loss);
            continue;
        }
        step *= 2.0;
        let mut advanced = false;
        for _ in 0..64 {
            let cand_w = &w - &gw * step;
            let cand_b = b - gb * step;
            let cand_loss = problem.loss(&cand_w, cand_b);
            if cand_loss <= loss - 0.5 * step * gnorm2 {
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            step = 1.0;
        }
        losses.push(loss);
    }
    (w, b, losses)
}

/// Fit an L2-regularized logistic regression: the inverse strength C is
/// selected over `default_c_grid()` by the stratified fold plan (held-fold
/// log-loss, ties to the smaller C), then the final model is refit on all
/// samples for exactly `iters` optimizer iterations.
pub fn logistic_fit(
    x: &DMatrix<f64>,
    y: &[bool],
    iters: usize,
    plan: &FoldPlan,
) -> Result<LogisticModel> {
    Ok(logistic_fit_traced(x, y, iters, plan)?.0)
}

/// As [`logistic_fit`], also returning the final refit's loss trajectory
/// (length `iters + 1`, including the starting loss).
pub fn logistic_fit_traced(
    x: &DMatrix<f64>,
    y: &[bool],
    iters: usize,
    plan: &FoldPlan,
) -> Result<(LogisticModel, Vec<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "logistic_fit: X has {} rows, y has {}",
            x.nrows(),
            y.len()
        )));
    }
    if plan.n != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} samples, y has {}",
            plan.n,
            y.len()
        )));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::InvalidArgument(
            "logistic_fit needs both classes present".into(),
        ));
    }
    ensure_finite("X", x)?;

    let signs: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
    let cv_iters = (iters / 10).max(100);
    let grid = default_c_grid();
    let mut best: Option<(f64, f64)> = None; // (C, mean held log-loss)
    for &c in &grid {
        let mut total = 0.0;
        for (train, val) in plan.splits() {
            let xt = take_rows(x, &train);
            let st = Standardizer::fit(&xt);
            let zt = st.transform(&xt);
            let yt: Vec<f64> = train.iter().map(|&i| signs[i]).collect();
            let problem = LogisticProblem { z: &zt, y: yt, reg: 1.0 / c };
            let (w, b, _) = logistic_descend(&problem, cv_iters);
            let zv = st.transform(&take_rows(x, &val));
            let mut held = 0.0;
            for (i, row) in zv.row_iter().enumerate() {
                let m = row.iter().zip(w.iter()).map(|(a, u)| a * u).sum::<f64>() + b;
                held += softplus(-signs[val[i]] * m);
            }
            total += held / val.len() as f64;
        }
        let mean = total / plan.k() as f64;
        let better = match best {
            None => true,
            Some((_, s)) => mean < s, // strictly better only: ties keep the smaller C
        };
        if better {
            best = Some((c, mean));
        }
    }
    let (c, _) = best.unwrap();

    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let problem = LogisticProblem { z: &z, y: signs, reg: 1.0 / c };
    let (weights, intercept, losses) = logistic_descend(&problem, iters);
    Ok((LogisticModel { weights, intercept, c, standardizer }, losses))
}
