//! Synthetic data with known ground truth: linear latent worlds for dynamics
//! training, simulated frontal-cortex populations wired to the ball state,
//! and separable contact-prediction datasets. Everything downstream consumes
//! these through the same manifests as real data.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mpong::{oracle_latents, ConditionSet, OracleKind};
use crate::rng::{keyed_rng, stream};
use crate::tensorio::{
    AnimalMeta, HumanJudgements, JudgementItem, LatentDataset, LatentSequence, NeuralCondition,
    NeuralDataset, TrialTensor,
};

/// What a synthetic unit population reads out, before noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutKind {
    Position,
    Velocity,
    PositionVelocity,
    /// Per-condition random signals unrelated to the ball; a floor control.
    Random,
}

impl ReadoutKind {
    pub fn dim(&self) -> usize {
        match self {
            ReadoutKind::Position | ReadoutKind::Velocity => 2,
            ReadoutKind::PositionVelocity | ReadoutKind::Random => 4,
        }
    }

    fn tag(&self) -> u64 {
        match self {
            ReadoutKind::Position => 0,
            ReadoutKind::Velocity => 1,
            ReadoutKind::PositionVelocity => 2,
            ReadoutKind::Random => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthNeuralSpec {
    /// Units in the synthetic animal this call produces.
    pub n_units: usize,
    pub readout: ReadoutKind,
    /// Seed of the readout matrix M; share it across calls to make two
    /// "animals" carry the same underlying signal.
    pub readout_seed: u64,
    /// Trial noise standard deviation, in rate units.
    pub noise_sigma: f64,
    pub n_trials: usize,
    /// Pass rates through softplus before adding trial noise.
    pub softplus: bool,
}

impl SynthNeuralSpec {
    fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidArgument("need at least 1 unit".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be ≥ 0, got {}",
                self.noise_sigma
            )));
        }
        if self.n_trials < 2 {
            return Err(Error::InvalidArgument(format!(
                "need ≥ 2 trials, got {}",
                self.n_trials
            )));
        }
        Ok(())
    }
}

/// Linear latent world: h_{t+1} = A·h_t + ε with A symmetric and rescaled to
/// the requested spectral radius, one random start per stimulus.
pub fn make_linear_world(
    d: usize,
    spectral_radius: f64,
    n_stimuli: usize,
    frames: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LatentDataset> {
    if d == 0 || n_stimuli == 0 || frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "need d ≥ 1, n_stimuli ≥ 1, frames ≥ 2; got d={d} n_stimuli={n_stimuli} frames={frames}"
        )));
    }
    if !(spectral_radius > 0.0 && spectral_radius < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "spectral radius must be in (0, 1), got {spectral_radius}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad noise sigma {noise_sigma}")));
    }
    let a = world_matrix(d, spectral_radius, seed);
    let items = (0..n_stimuli)
        .map(|i| {
            let mut rng = keyed_rng(seed, &[stream::WORLD, 1, i as u64]);
            let mut x =
                DMatrix::from_fn(d, 1, |_, _| StandardNormal.sample(&mut rng)).column(0).into_owned();
            let mut latents = DMatrix::zeros(frames, d);
            for f in 0..frames {
                latents.row_mut(f).copy_from(&x.transpose());
                x = &a * &x;
                if noise_sigma > 0.0 {
                    for v in x.iter_mut() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        *v += noise_sigma * n;
                    }
                }
            }
            LatentSequence {
                id: format!("stim_{i:03}"),
                scenario: None,
                label: None,
                latents,
            }
        })
        .collect();
    Ok(LatentDataset { d, subsample: 1, items })
}

/// The transition matrix of `make_linear_world(seed)`, for exact references.
pub fn world_matrix(d: usize, spectral_radius: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = keyed_rng(seed, &[stream::WORLD, 0, 0]);
    let raw = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let mut a = (&raw + raw.transpose()) * 0.5;
    let top = a
        .symmetric_eigenvalues()
        .iter()
        .map(|v: &f64| v.abs())
        .fold(0.0_f64, f64::max);
    a *= spectral_radius / top;
    a
}

/// Simulated frontal population: unit rates are a fixed linear readout of the
/// z-scored ball state (or random per-condition signals), optionally passed
/// through softplus, averaged into 50 ms bins, plus iid Gaussian trial noise.
/// Share `spec.readout_seed` and vary `seed` to simulate two animals
/// recording the same signal with independent noise.
pub fn make_synth_dmfc(
    conditions: &ConditionSet,
    spec: &SynthNeuralSpec,
    seed: u64,
) -> Result<NeuralDataset> {
    spec.validate()?;
    if conditions.conditions.is_empty() {
        return Err(Error::Empty("condition set is empty".into()));
    }
    let dim = spec.readout.dim();
    let mut m_rng = keyed_rng(spec.readout_seed, &[stream::READOUT, spec.readout.tag()]);
    let scale = 1.0 / (dim as f64).sqrt();
    let m = DMatrix::from_fn(spec.n_units, dim, |_, _| {
        let v: f64 = StandardNormal.sample(&mut m_rng);
        v * scale
    });

    // Per-condition driving signals, plus global per-dimension moments so the
    // noise sigma is calibrated against unit-variance rates.
    let signals: Vec<DMatrix<f64>> = match spec.readout {
        ReadoutKind::Random => (0..conditions.conditions.len())
            .map(|c| {
                let mut rng =
                    keyed_rng(spec.readout_seed, &[stream::READOUT, spec.readout.tag(), c as u64]);
                let frames = conditions.conditions[c].n_frames;
                Ok(DMatrix::from_fn(frames, dim, |_, _| StandardNormal.sample(&mut rng)))
            })
            .collect::<Result<_>>()?,
        kind => {
            let oracle = match kind {
                ReadoutKind::Position => OracleKind::Position,
                ReadoutKind::Velocity => OracleKind::Velocity,
                _ => OracleKind::PositionVelocity,
            };
            conditions
                .conditions
                .iter()
                .enumerate()
                .map(|(c, _)| {
                    let traj = conditions.trajectory(c)?;
                    Ok(oracle_latents(&traj, oracle).latents)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for s in &signals {
        for row in s.row_iter() {
            for (j, v) in row.iter().enumerate() {
                mean[j] += v;
            }
        }
        count += s.nrows();
    }
    for v in mean.iter_mut() {
        *v /= count as f64;
    }
    let mut var = vec![0.0; dim];
    for s in &signals {
        for row in s.row_iter() {
            for (j, v) in row.iter().enumerate() {
                var[j] += (v - mean[j]) * (v - mean[j]);
            }
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / count as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();

    let fps = conditions.spec.frame_rate;
    let bin_width_ms = 50.0;
    let frames_per_bin = fps * bin_width_ms / 1000.0;
    let mut out_conditions = Vec::with_capacity(conditions.conditions.len());
    for (c, cond) in conditions.conditions.iter().enumerate() {
        let z = {
            let mut z = signals[c].clone();
            for j in 0..dim {
                for i in 0..z.nrows() {
                    z[(i, j)] = (z[(i, j)] - mean[j]) / std[j];
                }
            }
            z
        };
        let mut rates = &z * m.transpose();
        if spec.softplus {
            rates = rates.map(softplus);
        }
        let n_bins = (cond.n_frames as f64 / frames_per_bin).ceil() as usize;
        let mut binned = DMatrix::zeros(n_bins, spec.n_units);
        for b in 0..n_bins {
            let lo = (b as f64 * frames_per_bin).round() as usize;
            let hi = (((b + 1) as f64 * frames_per_bin).round() as usize).min(cond.n_frames);
            let hi = hi.max(lo + 1);
            for u in 0..spec.n_units {
                let mut acc = 0.0;
                for f in lo..hi {
                    acc += rates[(f, u)];
                }
                binned[(b, u)] = acc / (hi - lo) as f64;
            }
        }
        let mut data = Vec::with_capacity(spec.n_trials * n_bins * spec.n_units);
        for trial in 0..spec.n_trials {
            let mut rng = keyed_rng(seed, &[stream::TRIAL_NOISE, c as u64, trial as u64]);
            for b in 0..n_bins {
                for u in 0..spec.n_units {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    data.push(binned[(b, u)] + spec.noise_sigma * noise);
                }
            }
        }
        out_conditions.push(NeuralCondition {
            id: cond.key(),
            responses: TrialTensor::new(spec.n_trials, n_bins, spec.n_units, data)?,
        });
    }
    Ok(NeuralDataset {
        animals: vec![AnimalMeta { name: format!("synth-{seed}"), n_units: spec.n_units }],
        bin_width_ms,
        conditions: out_conditions,
    })
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Separable contact-prediction fixture: label = whether the stimulus mean
/// along coordinate 0 is positive, shifted by ±`separation`; human hit
/// proportions follow the same coordinate through a squashing curve.
pub fn make_ocp_dataset(
    scenarios: &[(&str, usize)],
    d: usize,
    frames: usize,
    separation: f64,
    seed: u64,
) -> Result<(LatentDataset, HumanJudgements)> {
    if scenarios.is_empty() || d == 0 || frames < 2 {
        return Err(Error::InvalidArgument(
            "need ≥ 1 scenario, d ≥ 1, frames ≥ 2".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad separation {separation}")));
    }
    let mut items = Vec::new();
    let mut judgements = Vec::new();
    let mut stim = 0u64;
    for (scenario, n) in scenarios {
        for _ in 0..*n {
            let mut rng = keyed_rng(seed, &[stream::JUDGE, stim]);
            let hit = rng.random::<f64>() < 0.5;
            let sign = if hit { 1.0 } else { -1.0 };
            let mut latents = DMatrix::from_fn(frames, d, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            });
            for f in 0..frames {
                latents[(f, 0)] += sign * separation;
            }
            let drive: f64 = latents.column(0).iter().sum::<f64>() / frames as f64;
            let proportion = 1.0 / (1.0 + (-1.5 * drive).exp());
            let id = format!("ocp_{stim:04}");
            items.push(LatentSequence {
                id: id.clone(),
                scenario: Some(scenario.to_string()),
                label: Some(hit as i64),
                latents,
            });
            judgements.push(JudgementItem {
                id,
                scenario: scenario.to_string(),
                proportion,
                hit,
            });
            stim += 1;
        }
    }
    Ok((
        LatentDataset { d, subsample: 6, items },
        HumanJudgements { items: judgements },
    ))
}
