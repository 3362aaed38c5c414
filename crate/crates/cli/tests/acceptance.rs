//! Acceptance suite: one test per release criterion, each with a pinned
//! tolerance and a wall-clock budget. Everything is seeded, so every run
//! checks the same numbers.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::prelude::*;
use rand_distr::StandardNormal;

use mentalsim::behavior;
use mentalsim::dynamics::{self, DynamicsModel, TrainConfig, Window};
use mentalsim::metrics::{self, NpConfig, WeightedStats};
use mentalsim::mpong::{generate_conditions, oracle_latents, BoardSpec, OracleKind};
use mentalsim::neuralbench::{
    fit_internal_consistency, interpolate_bins, make_split_plan, model_predictivity,
};
use mentalsim::regress::{make_folds, ridge_fit, FoldKind};
use mentalsim::rng::keyed_rng;
use mentalsim::synth::{make_linear_world, make_ocp_dataset, make_synth_dmfc, ReadoutKind, SynthNeuralSpec};
use mentalsim::tensorio::{LatentDataset, TrialTensor};

fn assert_within_budget(start: Instant, budget: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(elapsed < budget, "{what} took {elapsed:?}, budget {budget:?}");
}

// -- 1 ----------------------------------------------------------------------
// A source that is an exact replica of the target (identical trial structure)
// scores median NP = 1.0 ± 1e-6.

#[test]
fn criterion_01_exact_replica_scores_unit_predictivity() {
    let start = Instant::now();
    let set = generate_conditions(&BoardSpec::default(), 16, 21).unwrap();
    let spec = SynthNeuralSpec {
        n_units: 6,
        readout: ReadoutKind::PositionVelocity,
        readout_seed: 7,
        noise_sigma: 0.0,
        n_trials: 4,
        softplus: false,
    };
    let neural = make_synth_dmfc(&set, &spec, 100).unwrap();
    let aligned = interpolate_bins(&neural, &set).unwrap();
    let plan = make_split_plan(set.len(), 3, 11).unwrap();
    let cfg = NpConfig { n_repeats: 3, seed: 11, ..Default::default() };

    let replica = fit_internal_consistency(&aligned, &aligned.clone(), &plan, &cfg).unwrap();
    let median = replica.pooled.median;
    assert!(
        (median - 1.0).abs() <= 1e-6,
        "replica median NP = {median}, expected 1.0 ± 1e-6"
    );
    assert_within_budget(start, Duration::from_secs(10), "replica predictivity");
}

// -- 2 ----------------------------------------------------------------------
// On synthetic DMFC driven by a position+velocity readout with trial noise
// σ = 0.5: pos+vel beats pos and vel by ≥ 0.05, every oracle beats a random
// latent control by ≥ 0.05, and pos+vel reaches ≥ 0.9 × the inter-animal
// ceiling.

#[test]
fn criterion_02_oracle_ordering_on_synthetic_population() {
    let start = Instant::now();
    let set = generate_conditions(&BoardSpec::default(), 24, 5).unwrap();
    let spec = SynthNeuralSpec {
        n_units: 24,
        readout: ReadoutKind::PositionVelocity,
        readout_seed: 7,
        noise_sigma: 0.5,
        n_trials: 8,
        softplus: false,
    };
    let animal_a = make_synth_dmfc(&set, &spec, 200).unwrap();
    let animal_b = make_synth_dmfc(&set, &spec, 201).unwrap();
    let aligned_a = interpolate_bins(&animal_a, &set).unwrap();
    let aligned_b = interpolate_bins(&animal_b, &set).unwrap();
    let plan = make_split_plan(set.len(), 3, 17).unwrap();
    let cfg = NpConfig { n_repeats: 5, seed: 17, ..Default::default() };

    let np_for = |features: &[DMatrix<f64>]| {
        model_predictivity(features, &aligned_a, &plan, &cfg).unwrap().median
    };
    let oracle_features = |kind: OracleKind| -> Vec<DMatrix<f64>> {
        set.conditions
            .iter()
            .enumerate()
            .map(|(i, cond)| {
                let occ = cond.occluded_range();
                let full = oracle_latents(&set.trajectory(i).unwrap(), kind).latents;
                full.rows(occ.start, occ.len()).into_owned()
            })
            .collect()
    };
    let random_features: Vec<DMatrix<f64>> = set
        .conditions
        .iter()
        .enumerate()
        .map(|(i, cond)| {
            let mut rng = keyed_rng(17, &[0x0b, i as u64]);
            DMatrix::from_fn(cond.occluded_range().len(), 4, |_, _| {
                StandardNormal.sample(&mut rng)
            })
        })
        .collect();

    let np_pos_vel = np_for(&oracle_features(OracleKind::PositionVelocity));
    let np_pos = np_for(&oracle_features(OracleKind::Position));
    let np_vel = np_for(&oracle_features(OracleKind::Velocity));
    let np_random = np_for(&random_features);
    let ceiling =
        fit_internal_consistency(&aligned_a, &aligned_b, &plan, &cfg).unwrap().pooled.median;

    let summary = format!(
        "pos+vel {np_pos_vel:.4}, pos {np_pos:.4}, vel {np_vel:.4}, random {np_random:.4}, ceiling {ceiling:.4}"
    );
    assert!(np_pos_vel >= np_pos + 0.05, "{summary}");
    assert!(np_pos_vel >= np_vel + 0.05, "{summary}");
    for (name, np) in [("pos+vel", np_pos_vel), ("pos", np_pos), ("vel", np_vel)] {
        assert!(np >= np_random + 0.05, "{name} vs random: {summary}");
    }
    assert!(np_pos_vel >= 0.9 * ceiling, "{summary}");
    assert_within_budget(start, Duration::from_secs(120), "oracle ordering");
}

// -- 3 ----------------------------------------------------------------------
// CTRNN and LSTM analytic gradients match central finite differences
// (eps = 1e-5) with max relative error < 1e-4 over 10 random seeds.

#[test]
fn criterion_03_analytic_gradients_match_finite_differences() {
    let start = Instant::now();
    let (d, hidden, context, batch) = (4, 6, 5, 8);
    for seed in 0..10u64 {
        let mut rng = keyed_rng(seed, &[0x6d]);
        let windows: Vec<Window> = (0..batch)
            .map(|_| {
                (
                    DMatrix::from_fn(context, d, |_, _| StandardNormal.sample(&mut rng)),
                    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)),
                )
            })
            .collect();
        let models = [
            DynamicsModel::new_ctrnn(d, hidden, 1.5, 1.0, seed).unwrap(),
            DynamicsModel::new_lstm(d, hidden, seed).unwrap(),
        ];
        for model in &models {
            let err = dynamics::grad_check(model, &windows, 1e-5).unwrap();
            assert!(
                err < 1e-4,
                "seed {seed}, {}: max relative gradient error {err:e}",
                model.kind.name()
            );
        }
    }
    assert_within_budget(start, Duration::from_secs(60), "gradient check");
}

// -- 4 ----------------------------------------------------------------------
// On the noiseless linear world h_{t+1} = A·h_t (d = 16, ρ(A) = 0.95), a
// CTRNN trained with defaults (batch 32, lr 1e-4, 100 epochs) reaches
// held-out one-step MSE ≤ 1e-3 × Var(h) and beats the no-dynamics baseline
// by ≥ 5×. Thresholds frozen after calibration against a reference run.

fn one_step_mse(model: &DynamicsModel, items: &[mentalsim::tensorio::LatentSequence], context: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for item in items {
        let d = item.latents.ncols();
        for t in 0..item.latents.nrows() - context {
            let ctx = item.latents.rows(t, context).into_owned();
            let pred = model.predict_after_context(&ctx).unwrap();
            let target = item.latents.row(t + context).transpose();
            total += (&pred - target).norm_squared() / d as f64;
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn criterion_04_ctrnn_learns_linear_world_dynamics() {
    let start = Instant::now();
    let data = make_linear_world(16, 0.95, 400, 24, 0.0, 42).unwrap();
    let mut items = data.items;
    let test_items = items.split_off(320);
    let train_data = LatentDataset { d: 16, subsample: 1, items };

    let cfg = TrainConfig { epochs: 100, seed: 42, ..Default::default() };
    assert_eq!((cfg.batch_size, cfg.lr), (32, 1e-4), "advertised defaults");
    let mut ctrnn = DynamicsModel::new_ctrnn(16, 32, 2.0, 1.0, 42).unwrap();
    dynamics::train(&mut ctrnn, &train_data, &cfg).unwrap();

    let held_out: Vec<f64> = test_items.iter().flat_map(|i| i.latents.iter().copied()).collect();
    let mean = held_out.iter().sum::<f64>() / held_out.len() as f64;
    let var = held_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / held_out.len() as f64;

    let ctrnn_mse = one_step_mse(&ctrnn, &test_items, cfg.context);
    let none = DynamicsModel::new_none(16).unwrap();
    let none_mse = one_step_mse(&none, &test_items, cfg.context);

    let summary = format!(
        "ctrnn {ctrnn_mse:.3e}, no-dynamics {none_mse:.3e}, Var(h) {var:.3e}, ratio {:.3e}",
        ctrnn_mse / var
    );
    assert!(ctrnn_mse <= 1e-3 * var, "{summary}");
    assert!(none_mse >= 5.0 * ctrnn_mse, "{summary}");
    assert_within_budget(start, Duration::from_secs(300), "linear world training");
}

// -- 5 ----------------------------------------------------------------------
// Contact-prediction pipeline: separable latents score ≥ 0.95 held out,
// shuffled labels score 0.5 ± 0.05, and probabilities set equal to human
// proportions correlate 1.0 ± 1e-9 per scenario.

fn quarter_split(features: &behavior::OcpFeatures, seed: u64) -> (behavior::OcpFeatures, behavior::OcpFeatures) {
    let strata: Vec<u64> = features.labels.iter().map(|&h| h as u64).collect();
    let plan = make_folds(&strata, 4, FoldKind::Stratified, seed).unwrap();
    let (train, test) = plan.splits().next().unwrap();
    (features.subset(&train), features.subset(&test))
}

#[test]
fn criterion_05_contact_prediction_pipeline() {
    let start = Instant::now();
    let none = DynamicsModel::new_none(4).unwrap();

    let (data, judgements) = make_ocp_dataset(&[("drop", 40), ("roll", 40)], 4, 9, 2.0, 31).unwrap();
    let features = behavior::build_features(&data, &none, 7, 25).unwrap();
    let (train, test) = quarter_split(&features, 31);
    let readout = behavior::train_readout(&train, 31).unwrap();
    let scores = behavior::evaluate(&readout, &test, &judgements).unwrap();
    let accuracy = behavior::aggregate(&scores).unwrap().accuracy.weighted_mean;
    assert!(accuracy >= 0.95, "separable held-out accuracy {accuracy}");

    let (big, big_judgements) =
        make_ocp_dataset(&[("drop", 180), ("roll", 180)], 4, 9, 2.0, 32).unwrap();
    let mut shuffled = behavior::build_features(&big, &none, 7, 25).unwrap();
    let mut order: Vec<usize> = (0..shuffled.labels.len()).collect();
    order.shuffle(&mut keyed_rng(33, &[0x5f]));
    shuffled.labels = order.iter().map(|&i| shuffled.labels[i]).collect();
    let (train, test) = quarter_split(&shuffled, 33);
    let readout = behavior::train_readout(&train, 33).unwrap();
    let scores = behavior::evaluate(&readout, &test, &big_judgements).unwrap();
    let chance = behavior::aggregate(&scores).unwrap().accuracy.weighted_mean;
    assert!(
        (chance - 0.5).abs() <= 0.05,
        "shuffled-label held-out accuracy {chance}, expected 0.5 ± 0.05"
    );

    let probs: Vec<f64> = features
        .ids
        .iter()
        .map(|id| judgements.get(id).unwrap().proportion)
        .collect();
    let scores = behavior::evaluate_probabilities(&probs, &features, &judgements).unwrap();
    for score in &scores {
        assert!(!score.flagged, "scenario {} flagged", score.scenario);
        assert!(
            (score.pearson_to_human - 1.0).abs() <= 1e-9,
            "scenario {}: Pearson {} with probabilities equal to human proportions",
            score.scenario,
            score.pearson_to_human
        );
    }
    assert_within_budget(start, Duration::from_secs(60), "contact prediction");
}

// -- 6 ----------------------------------------------------------------------
// Weighted mean / variance / effective sample size / sem match an exact
// rational-arithmetic oracle to 1e-12 on 100 random fixtures plus the
// benchmark scenario weights (150, 149, 150, 150, 150, 150, 94, 149).

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn to_f64(q: &BigRational) -> f64 {
    let numer: f64 = q.numer().to_string().parse().expect("numerator in f64 range");
    let denom: f64 = q.denom().to_string().parse().expect("denominator in f64 range");
    numer / denom
}

/// Exact replica of the weighted statistics on rational inputs.
fn rational_oracle(values: &[(i64, i64)], weights: &[i64]) -> WeightedStats {
    let vals: Vec<BigRational> = values.iter().map(|&(n, d)| rational(n, d)).collect();
    let w: Vec<BigRational> = weights.iter().map(|&w| rational(w, 1)).collect();
    let w_sum: BigRational = w.iter().cloned().sum();
    let mean: BigRational =
        vals.iter().zip(&w).map(|(v, w)| v * w).sum::<BigRational>() / w_sum.clone();
    let variance: BigRational = vals
        .iter()
        .zip(&w)
        .map(|(v, w)| {
            let d = v - mean.clone();
            w * d.clone() * d
        })
        .sum::<BigRational>()
        / w_sum.clone();
    let w_sq: BigRational = w.iter().map(|w| w * w).sum();
    let ess = w_sum.clone() * w_sum / w_sq;
    WeightedStats {
        weighted_mean: to_f64(&mean),
        variance: to_f64(&variance),
        effective_sample_size: to_f64(&ess),
        weighted_sem: to_f64(&(variance / ess)).sqrt(),
    }
}

fn assert_stats_match(got: &WeightedStats, want: &WeightedStats, what: &str) {
    for (name, g, w) in [
        ("mean", got.weighted_mean, want.weighted_mean),
        ("variance", got.variance, want.variance),
        ("ess", got.effective_sample_size, want.effective_sample_size),
        ("sem", got.weighted_sem, want.weighted_sem),
    ] {
        assert!(
            (g - w).abs() <= 1e-12 * w.abs().max(1.0),
            "{what} {name}: got {g:.17e}, oracle {w:.17e}"
        );
    }
}

#[test]
fn criterion_06_weighted_statistics_match_rational_oracle() {
    let start = Instant::now();
    let mut rng = keyed_rng(61, &[0x77]);

    let physion_weights: [i64; 8] = [150, 149, 150, 150, 150, 150, 94, 149];
    let physion_values: Vec<(i64, i64)> =
        (0..8).map(|_| (rng.random_range(0..=1024), 1024)).collect();
    let values_f64: Vec<f64> = physion_values.iter().map(|&(n, d)| n as f64 / d as f64).collect();
    let weights_f64: Vec<f64> = physion_weights.iter().map(|&w| w as f64).collect();
    let got = metrics::weighted_mean_sem(&values_f64, &weights_f64).unwrap();
    assert_stats_match(&got, &rational_oracle(&physion_values, &physion_weights), "benchmark weights");

    for case in 0..100 {
        let n = rng.random_range(2..=40usize);
        let values: Vec<(i64, i64)> = (0..n).map(|_| (rng.random_range(0..=1024), 1024)).collect();
        let weights: Vec<i64> = (0..n).map(|_| rng.random_range(1..=200)).collect();
        let values_f64: Vec<f64> = values.iter().map(|&(v, d)| v as f64 / d as f64).collect();
        let weights_f64: Vec<f64> = weights.iter().map(|&w| w as f64).collect();
        let got = metrics::weighted_mean_sem(&values_f64, &weights_f64).unwrap();
        assert_stats_match(&got, &rational_oracle(&values, &weights), &format!("fixture {case}"));
    }
    assert_within_budget(start, Duration::from_secs(5), "weighted statistics");
}

// -- 7 ----------------------------------------------------------------------
// The closed-form ridge solution matches long-run gradient descent on the
// same objective to 1e-6 on 20 random problems, and the Spearman-Brown
// correction maps 1/3 to exactly 0.5.

/// Gradient descent on ‖Z·W − Yc‖² + λ‖W‖² over the standardized design,
/// run to machine-precision stationarity.
fn ridge_by_gradient_descent(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut z = x.clone();
    for j in 0..z.ncols() {
        let col = z.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            z[(i, j)] = (z[(i, j)] - mean) / scale;
        }
    }
    let mut yc = y.clone();
    for j in 0..yc.ncols() {
        let mean = yc.column(j).sum() / n as f64;
        for i in 0..n {
            yc[(i, j)] -= mean;
        }
    }

    let gram = z.transpose() * &z;
    let rhs = z.transpose() * &yc;
    let step = {
        let l_max = gram
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        1.0 / (2.0 * (l_max + lambda))
    };
    let mut w = DMatrix::zeros(z.ncols(), y.ncols());
    for _ in 0..200_000 {
        let grad = 2.0 * (&gram * &w + lambda * &w - &rhs);
        if grad.amax() < 1e-13 {
            break;
        }
        w -= step * grad;
    }
    w
}

#[test]
fn criterion_07_ridge_matches_gradient_descent_oracle() {
    let start = Instant::now();
    let mut rng = keyed_rng(71, &[0x33]);
    for case in 0..20 {
        let n = rng.random_range(20..=50usize);
        let p = rng.random_range(2..=8usize);
        let targets = rng.random_range(1..=4usize);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(n, targets, |_, _| StandardNormal.sample(&mut rng));
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));

        let closed = ridge_fit(&x, &y, lambda).unwrap();
        let gd = ridge_by_gradient_descent(&x, &y, lambda);
        let diff = (&closed.weights.transpose() - &gd).amax();
        assert!(diff <= 1e-6, "problem {case}: max weight gap {diff:e} at lambda {lambda}");
    }
    assert_eq!(metrics::spearman_brown(1.0 / 3.0), 0.5);
    assert_within_budget(start, Duration::from_secs(30), "ridge equivalence");
}

// -- 8 ----------------------------------------------------------------------
// Ball physics: per-frame speed conserved to 1e-9 relative, reflections
// specular to 1e-9 radians, and the default 79 conditions all span 89 to
// 217 frames.

#[test]
fn criterion_08_ball_physics_and_condition_lengths() {
    let start = Instant::now();
    let set = generate_conditions(&BoardSpec::default(), 79, 0).unwrap();
    assert_eq!(set.len(), 79);

    for (i, cond) in set.conditions.iter().enumerate() {
        assert!(
            (89..=217).contains(&cond.n_frames),
            "condition {i} has {} frames",
            cond.n_frames
        );
        let traj = set.trajectory(i).unwrap();
        let speed0 = {
            let (vx, vy) = traj.frames[0].vel;
            vx.hypot(vy)
        };
        for pair in traj.frames.windows(2) {
            let (vx0, vy0) = pair[0].vel;
            let (vx1, vy1) = pair[1].vel;
            let speed = vx1.hypot(vy1);
            assert!(
                ((speed - speed0) / speed0).abs() < 1e-9,
                "condition {i}: speed drifted from {speed0} to {speed}"
            );
            if (vx0, vy0) != (vx1, vy1) {
                // A bounce happened inside this step: the outgoing velocity
                // must be the incoming one with one or both axes mirrored.
                let rx = if vx0.signum() == vx1.signum() { vx0 } else { -vx0 };
                let ry = if vy0.signum() == vy1.signum() { vy0 } else { -vy0 };
                let angle = (rx * vy1 - ry * vx1).atan2(rx * vx1 + ry * vy1).abs();
                assert!(
                    angle < 1e-9,
                    "condition {i}: reflection error {angle} rad, ({vx0},{vy0}) -> ({vx1},{vy1})"
                );
            }
        }
    }
    assert_within_budget(start, Duration::from_secs(30), "ball physics");
}

// -- 9 ----------------------------------------------------------------------
// Monte-Carlo split-half calibration: the mean Spearman-Brown-corrected
// reliability over 1000 repeats matches the analytic prediction
// s² / (s² + n²/trials) within ±0.03.

#[test]
fn criterion_09_split_half_reliability_matches_analytic_snr() {
    let start = Instant::now();
    let (rows, units, trials, noise_sigma) = (300usize, 2usize, 10usize, 1.0f64);
    let mut rng = keyed_rng(91, &[0x2e]);
    let signal: DMatrix<f64> = DMatrix::from_fn(rows, units, |_, _| StandardNormal.sample(&mut rng));
    let mut data = Vec::with_capacity(trials * rows * units);
    for _ in 0..trials {
        for r in 0..rows {
            for u in 0..units {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(signal[(r, u)] + noise_sigma * noise);
            }
        }
    }
    let tensor = TrialTensor::new(trials, rows, units, data).unwrap();

    let draws = metrics::split_half(&tensor, 91, 1000).unwrap();
    let mut corrected = Vec::with_capacity(draws.len() * units);
    for (a, b) in &draws {
        for u in 0..units {
            let col_a: Vec<f64> = a.column(u).iter().copied().collect();
            let col_b: Vec<f64> = b.column(u).iter().copied().collect();
            corrected.push(metrics::spearman_brown(metrics::pearson(&col_a, &col_b).unwrap()));
        }
    }
    let mean = corrected.iter().sum::<f64>() / corrected.len() as f64;
    let analytic = 1.0 / (1.0 + noise_sigma.powi(2) / trials as f64);
    assert!(
        (mean - analytic).abs() <= 0.03,
        "mean corrected reliability {mean:.4}, analytic {analytic:.4}"
    );
    assert_within_budget(start, Duration::from_secs(60), "split-half calibration");
}

// -- 10 ---------------------------------------------------------------------
// Every CLI command rerun with an identical seed and config produces
// byte-identical tensors and reports.

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_mentalsim"))
        .args(args)
        .output()
        .expect("spawn mentalsim");
    assert!(
        out.status.success(),
        "mentalsim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn file_list(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push(path.strip_prefix(root).expect("prefix").to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    file_list(dir)
        .into_iter()
        .map(|rel| {
            let bytes = std::fs::read(dir.join(&rel)).expect("read file");
            (rel, bytes)
        })
        .collect()
}

#[test]
fn criterion_10_every_command_is_deterministic() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();

    let pong = p("pong");
    let world = p("world");
    let dmfc = p("dmfc");
    let ocp = p("ocp");
    let train = p("train");
    let evaln = p("evaln");
    let decode = p("decode");
    let evalocp = p("evalocp");
    let report = p("report.csv");
    let world_manifest = p("world/manifest.json");
    let dmfc_manifest = p("dmfc/manifest.json");
    let ocp_manifest = p("ocp/manifest.json");
    let ocp_judgements = p("ocp/judgements.json");

    let commands: Vec<Vec<&str>> = vec![
        vec![
            "mpong-gen", "--out", &pong, "--n", "12", "--seed", "3", "--width-px", "32",
            "--height-px", "32",
        ],
        vec![
            "synth", "world", "--d", "3", "--stimuli", "8", "--frames", "12", "--seed", "1",
            "--out", &world,
        ],
        vec![
            "synth", "dmfc", "--conditions", &pong, "--units", "6", "--trials", "4", "--animals",
            "2", "--sigma", "0.3", "--seed", "5", "--out", &dmfc,
        ],
        vec![
            "synth", "ocp", "--scenarios", "drop:12,roll:12", "--seed", "6", "--out", &ocp,
        ],
        vec![
            "train-dynamics", "--latents", &world_manifest, "--kind", "ctrnn", "--hidden", "6",
            "--context", "4", "--batch-size", "4", "--lr", "1e-3", "--epochs", "3", "--seed",
            "2", "--out", &train,
        ],
        vec![
            "eval-neural", "--conditions", &pong, "--neural", &dmfc_manifest, "--oracle",
            "pos+vel", "--splits", "3", "--repeats", "2", "--seed", "4", "--out", &evaln,
        ],
        vec![
            "decode-ball", "--conditions", &pong, "--neural", &dmfc_manifest, "--splits", "3",
            "--repeats", "2", "--seed", "4", "--out", &decode,
        ],
        vec![
            "eval-ocp", "--latents", &ocp_manifest, "--judgements", &ocp_judgements, "--seed",
            "7", "--out", &evalocp,
        ],
        vec![
            "report", &pong, &world, &dmfc, &ocp, &train, &evaln, &decode, &evalocp, "--out",
            &report,
        ],
    ];

    for args in &commands {
        run(args);
    }
    let before = snapshot(root);
    for args in &commands {
        run(args);
    }
    let after = snapshot(root);

    assert_eq!(
        before.len(),
        after.len(),
        "rerun changed the file set: {:?} vs {:?}",
        before.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        after.iter().map(|(p, _)| p).collect::<Vec<_>>()
    );
    for ((path_a, bytes_a), (path_b, bytes_b)) in before.iter().zip(&after) {
        assert_eq!(path_a, path_b, "file set changed on rerun");
        assert_eq!(
            bytes_a,
            bytes_b,
            "{} changed between identical runs",
            path_a.display()
        );
    }
    assert_within_budget(start, Duration::from_secs(120), "command determinism");
}
