//! Command-line front end over the library pipelines: stimulus generation,
//! dynamics training, neural and behavioral evaluation, ball-state decoding,
//! synthetic data, and run comparison.
//!
//! Every command takes a single `--seed` and an optional `--config` JSON file
//! supplying flag defaults (explicit flags win; the keys are the same ones
//! written to `resolved-config.json`, so a previous run's resolved config can
//! seed a new run). Each run writes `resolved-config.json` into its output
//! directory with every value made explicit, and produces byte-identical
//! outputs when rerun with the same configuration. Exit codes: 0 success,
//! 2 configuration error, 3 data error, 4 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use mentalsim::behavior;
use mentalsim::dynamics::{
    self, DynamicsKind, DynamicsModel, TrainConfig, TrainReport, TrainState,
};
use mentalsim::metrics::NpConfig;
use mentalsim::mpong::{
    generate_conditions, oracle_latents, render_frames, BoardSpec, ConditionSet, OccluderDraw,
    OracleKind, RenderOptions,
};
use mentalsim::neuralbench::{
    ball_decode, finite_or_none, fit_internal_consistency, interpolate_bins, make_split_plan,
    model_predictivity, occluded_model_features, AlignedResponses, DecodeSource, EvalReport,
    ModelEval,
};
use mentalsim::regress::{make_folds, FoldKind};
use mentalsim::rng::{keyed_rng, stream};
use mentalsim::synth::{make_linear_world, make_ocp_dataset, make_synth_dmfc, ReadoutKind, SynthNeuralSpec};
use mentalsim::tensorio::{
    load_human_judgements, load_latent_dataset, load_neural_dataset, save_human_judgements,
    save_latent_dataset, save_neural_dataset, write_tensor, LatentDataset, LatentSequence,
    NeuralCondition, NeuralDataset, Tensor, TrialTensor,
};
use mentalsim::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(
    name = "mentalsim",
    version,
    about = "Latent-dynamics benchmarking pipelines",
    long_about = "Generate occluded-Pong stimuli, train latent dynamics modules, and score them \
                  against neural populations and contact-prediction judgements. MSIM_THREADS \
                  caps worker parallelism (pipelines currently run sequentially)."
)]
struct Cli {
    /// Print per-item progress (epochs, conditions, split choices).
    #[arg(long, short = 'v', global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate occluded-Pong conditions with rendered frames and ball-state oracles.
    MpongGen(MpongGenArgs),
    /// Fit a latent dynamics module on a latent dataset.
    TrainDynamics(TrainDynamicsArgs),
    /// Score a dynamics module or ground-truth features against neural responses.
    EvalNeural(EvalNeuralArgs),
    /// Train and score the contact-prediction behavioral readout.
    EvalOcp(EvalOcpArgs),
    /// Decode occluded ball position and velocity.
    DecodeBall(DecodeBallArgs),
    /// Generate synthetic datasets.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Combine run directories into one comparison table.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.verbose) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            })
        }
    }
}

fn run(command: Command, verbose: bool) -> Result<()> {
    match command {
        Command::MpongGen(args) => cmd_mpong_gen(args, verbose),
        Command::TrainDynamics(args) => cmd_train_dynamics(args, verbose),
        Command::EvalNeural(args) => cmd_eval_neural(args, verbose),
        Command::EvalOcp(args) => cmd_eval_ocp(args),
        Command::DecodeBall(args) => cmd_decode_ball(args),
        Command::Synth(cmd) => match cmd {
            SynthCmd::World(args) => cmd_synth_world(args),
            SynthCmd::Dmfc(args) => cmd_synth_dmfc(args),
            SynthCmd::Ocp(args) => cmd_synth_ocp(args),
        },
        Command::Report(args) => cmd_report(args),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Manifest { path: path.to_path_buf(), reason: e.to_string() })?;
    text.push('\n');
    write_string(path, &text)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Manifest { path: path.to_path_buf(), reason: e.to_string() })
}

fn read_conditions(dir: &Path) -> Result<ConditionSet> {
    let path = dir.join("conditions.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Manifest { path, reason: e.to_string() })
}

/// Worker cap from MSIM_THREADS (default 1). Pipelines currently run
/// sequentially; the cap is validated and recorded so configs stay complete.
fn thread_cap() -> Result<usize> {
    match std::env::var("MSIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("MSIM_THREADS must be a positive integer, got {v:?}"))
            }),
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(Error::InvalidArgument(format!("MSIM_THREADS is not unicode: {e}"))),
    }
}

fn to_value<T: serde::Serialize>(v: &T, what: &str) -> Result<Value> {
    serde_json::to_value(v)
        .map_err(|e| Error::Manifest { path: PathBuf::from(what), reason: e.to_string() })
}

/// Flag defaults loaded from a `--config` JSON object. Explicit flags win;
/// a missing or null key falls through to the built-in default.
struct ConfigFile {
    values: Option<Value>,
}

impl ConfigFile {
    fn load(path: &Option<PathBuf>) -> Result<Self> {
        let values = match path {
            Some(p) => {
                let v = read_json(p)?;
                if !v.is_object() {
                    return Err(Error::InvalidArgument(format!(
                        "config file {} must hold a JSON object",
                        p.display()
                    )));
                }
                Some(v)
            }
            None => None,
        };
        Ok(ConfigFile { values })
    }

    fn get<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.values.as_ref().and_then(|v| v.get(key)) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
                Error::InvalidArgument(format!("config key {key:?}: {e}"))
            }),
        }
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        match self.values.as_ref().and_then(|v| v.get(key)) {
            None | Some(Value::Null) => None,
            some => some,
        }
    }
}

/// flag > config file > built-in default.
fn resolve<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

fn resolve_opt<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
) -> Result<Option<T>> {
    Ok(match flag {
        Some(v) => Some(v),
        None => file.get(key)?,
    })
}

fn resolve_required<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
) -> Result<T> {
    resolve_opt(flag, file, key)?.ok_or_else(|| {
        Error::InvalidArgument(format!("--{} is required (flag or config file)", key.replace('_', "-")))
    })
}

fn display_opt(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

// ---------------------------------------------------------------------------
// mpong-gen
// ---------------------------------------------------------------------------

#[derive(Args)]
struct MpongGenArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of conditions [default: 79].
    #[arg(long)]
    n: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Board geometry JSON file; omit for the built-in board. A config file
    /// may instead inline the geometry object under "board".
    #[arg(long)]
    board: Option<PathBuf>,
    /// [default: 256]
    #[arg(long)]
    width_px: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    height_px: Option<usize>,
}

fn cmd_mpong_gen(args: MpongGenArgs, verbose: bool) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;
    let n = resolve(args.n, &file, "n", 79)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let width_px = resolve(args.width_px, &file, "width_px", 256)?;
    let height_px = resolve(args.height_px, &file, "height_px", 128)?;

    let spec = match (&args.board, file.raw("board")) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<BoardSpec>(&text)
                .map_err(|e| Error::Manifest { path: path.clone(), reason: e.to_string() })?
        }
        (None, Some(Value::String(path))) => {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            serde_json::from_str::<BoardSpec>(&text)
                .map_err(|e| Error::Manifest { path, reason: e.to_string() })?
        }
        (None, Some(inline)) => serde_json::from_value(inline.clone())
            .map_err(|e| Error::InvalidArgument(format!("config key \"board\": {e}")))?,
        (None, None) => BoardSpec::default(),
    };

    let set = generate_conditions(&spec, n, seed)?;
    create_dir(&out.join("frames"))?;
    create_dir(&out.join("oracles"))?;
    write_json(&out.join("conditions.json"), &to_value(&set, "conditions")?)?;
    let opts = RenderOptions { width_px, height_px, occluder: OccluderDraw::Always };
    for (i, cond) in set.conditions.iter().enumerate() {
        let traj = set.trajectory(i)?;
        let frames = render_frames(&set.spec, &traj, &opts)?;
        write_tensor(&out.join("frames").join(format!("{}.msb", cond.key())), &frames.to_tensor())?;
        let oracle = oracle_latents(&traj, OracleKind::PositionVelocity);
        write_tensor(
            &out.join("oracles").join(format!("{}.msb", cond.key())),
            &Tensor::from_matrix_f64(&oracle.latents),
        )?;
        if verbose {
            println!("{}: {} frames, visible through {}", cond.key(), cond.n_frames, cond.visible_end);
        }
    }
    let config = json!({
        "command": "mpong-gen",
        "n": n,
        "seed": seed,
        "board": to_value(&set.spec, "board")?,
        "width_px": width_px,
        "height_px": height_px,
        "out": out.display().to_string(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    let min = set.conditions.iter().map(|c| c.n_frames).min().unwrap_or(0);
    let max = set.conditions.iter().map(|c| c.n_frames).max().unwrap_or(0);
    println!(
        "wrote {} conditions to {}; frames per condition {min}..{max}",
        set.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-dynamics
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainDynamicsArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Latent dataset manifest.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Dynamics kind: ctrnn | lstm.
    #[arg(long)]
    kind: Option<String>,
    /// Output directory (checkpoint/, state/, loss.csv).
    #[arg(long)]
    out: Option<PathBuf>,
    /// [default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// [default: 2]
    #[arg(long)]
    tau: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    dt: Option<f64>,
    /// [default: 7]
    #[arg(long)]
    context: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this directory's saved optimizer state; the result is
    /// bit-identical to a run that never stopped.
    #[arg(long)]
    resume: bool,
}

fn cmd_train_dynamics(args: TrainDynamicsArgs, verbose: bool) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let latents: PathBuf = resolve_required(args.latents, &file, "latents")?;
    let kind_name: String = resolve_required(args.kind, &file, "kind")?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;
    let hidden = resolve(args.hidden, &file, "hidden", 32)?;
    let tau = resolve(args.tau, &file, "tau", 2.0)?;
    let dt = resolve(args.dt, &file, "dt", 1.0)?;
    let cfg = TrainConfig {
        context: resolve(args.context, &file, "context", 7)?,
        batch_size: resolve(args.batch_size, &file, "batch_size", 32)?,
        lr: resolve(args.lr, &file, "lr", 1e-4)?,
        epochs: resolve(args.epochs, &file, "epochs", 100)?,
        seed: resolve(args.seed, &file, "seed", 0)?,
    };

    let kind = DynamicsKind::parse(&kind_name)?;
    if kind == DynamicsKind::None {
        return Err(Error::InvalidArgument(
            "dynamics kind 'none' has no trainable parameters".into(),
        ));
    }
    let data = load_latent_dataset(&latents)?;
    let config = json!({
        "command": "train-dynamics",
        "latents": latents.display().to_string(),
        "kind": kind_name,
        "hidden": hidden,
        "tau": tau,
        "dt": dt,
        "context": cfg.context,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "out": out.display().to_string(),
        "threads": threads,
    });

    let (mut model, mut state) = if args.resume || file.get::<bool>("resume")?.unwrap_or(false) {
        let previous = read_json(&out.join("resolved-config.json"))?;
        // Everything except the epoch target must match for the resumed run
        // to be a continuation rather than a different experiment.
        let mut want = config.clone();
        let mut have = previous.clone();
        for fluid in ["epochs", "threads"] {
            want.as_object_mut().unwrap().remove(fluid);
            have.as_object_mut().unwrap().remove(fluid);
        }
        if want != have {
            return Err(Error::InvalidArgument(format!(
                "--resume config disagrees with {}; only --epochs may change",
                out.join("resolved-config.json").display()
            )));
        }
        let model = dynamics::load_checkpoint(&out.join("checkpoint"))?;
        let state = dynamics::load_train_state(&out.join("state"), &model)?;
        (model, state)
    } else {
        let model = match kind {
            DynamicsKind::Ctrnn => DynamicsModel::new_ctrnn(data.d, hidden, tau, dt, cfg.seed)?,
            DynamicsKind::Lstm => DynamicsModel::new_lstm(data.d, hidden, cfg.seed)?,
            DynamicsKind::None => unreachable!(),
        };
        let state = TrainState::new(&model);
        (model, state)
    };

    if verbose {
        // One epoch at a time, printing as we go; epoch boundaries are the
        // resume points, so this is bit-identical to the single call below.
        while state.next_epoch < cfg.epochs {
            let one_more = TrainConfig { epochs: state.next_epoch + 1, ..cfg.clone() };
            dynamics::train_epochs(&mut model, &data, &one_more, &mut state)?;
            println!(
                "epoch {}: mean MSE {}",
                state.next_epoch,
                state.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
    } else {
        dynamics::train_epochs(&mut model, &data, &cfg, &mut state)?;
    }

    create_dir(&out)?;
    dynamics::save_checkpoint(&model, &out.join("checkpoint"))?;
    dynamics::save_train_state(&state, &model, &out.join("state"))?;
    let report = TrainReport { loss_curve: state.loss_curve.clone() };
    write_string(&out.join("loss.csv"), &report.to_csv())?;
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "trained {} for {} epochs; final mean MSE {}",
        kind.name(),
        state.next_epoch,
        state.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature sources shared by eval-neural and decode-ball
// ---------------------------------------------------------------------------

/// Per-condition occluded-epoch feature blocks and the name they report under.
fn feature_source(
    checkpoint: &Option<PathBuf>,
    oracle: &Option<String>,
    latents: &Option<PathBuf>,
    set: &ConditionSet,
    t_context: usize,
    seed: u64,
) -> Result<(Vec<DMatrix<f64>>, String)> {
    match (checkpoint, oracle) {
        (Some(dir), None) => {
            let model = dynamics::load_checkpoint(dir)?;
            let inputs = match latents {
                Some(path) => load_latent_dataset(path)?,
                None => ball_state_latents(set)?,
            };
            let features = occluded_model_features(&inputs, &model, set, t_context)?;
            Ok((features, model.kind.name().to_string()))
        }
        (None, Some(kind)) => match kind.as_str() {
            "random" => {
                let mut features = Vec::with_capacity(set.len());
                for (i, cond) in set.conditions.iter().enumerate() {
                    let occ = cond.occluded_range();
                    let mut rng = keyed_rng(seed, &[stream::RANDOM_FEATURES, i as u64]);
                    features.push(DMatrix::from_fn(occ.len(), 4, |_, _| {
                        StandardNormal.sample(&mut rng)
                    }));
                }
                Ok((features, "random".into()))
            }
            other => {
                let kind = OracleKind::parse(other)?;
                let mut features = Vec::with_capacity(set.len());
                for (i, cond) in set.conditions.iter().enumerate() {
                    let traj = set.trajectory(i)?;
                    let occ = cond.occluded_range();
                    let full = oracle_latents(&traj, kind).latents;
                    features.push(full.rows(occ.start, occ.len()).into_owned());
                }
                Ok((features, format!("oracle-{other}")))
            }
        },
        _ => Err(Error::InvalidArgument(
            "pass exactly one feature source: --checkpoint or --oracle".into(),
        )),
    }
}

/// Ground-truth ball state (x, y, vx, vy) per frame as a latent dataset, the
/// default input stream for checkpoint rollouts over generated conditions.
fn ball_state_latents(set: &ConditionSet) -> Result<LatentDataset> {
    let mut items = Vec::with_capacity(set.len());
    for (i, cond) in set.conditions.iter().enumerate() {
        let traj = set.trajectory(i)?;
        items.push(LatentSequence {
            id: cond.key(),
            scenario: None,
            label: None,
            latents: oracle_latents(&traj, OracleKind::PositionVelocity).latents,
        });
    }
    Ok(LatentDataset { d: 4, subsample: 1, items })
}

fn align_named(neural: &NeuralDataset, set: &ConditionSet, neural_path: &Path, conditions_dir: &Path) -> Result<AlignedResponses> {
    interpolate_bins(neural, set).map_err(|e| {
        let detail = match &e {
            Error::Misaligned(msg) => msg.clone(),
            other => other.to_string(),
        };
        Error::Misaligned(format!(
            "{} vs {}: {detail}",
            conditions_dir.join("conditions.json").display(),
            neural_path.display()
        ))
    })
}

/// Unit labels `(animal, unit)` in dataset order, for per-unit CSV rows.
fn unit_labels(neural: &NeuralDataset) -> Vec<(String, String)> {
    let mut labels = Vec::with_capacity(neural.total_units());
    for animal in &neural.animals {
        for u in 0..animal.n_units {
            labels.push((animal.name.clone(), format!("u{u:03}")));
        }
    }
    labels
}

/// Split one multi-animal alignment into the first two animals' responses.
fn first_two_animals(aligned: &AlignedResponses, neural: &NeuralDataset) -> Option<(AlignedResponses, AlignedResponses)> {
    if neural.animals.len() < 2 {
        return None;
    }
    let r0 = neural.animal_unit_range(&neural.animals[0].name)?;
    let r1 = neural.animal_unit_range(&neural.animals[1].name)?;
    let drop0: Vec<usize> = (0..aligned.units).filter(|u| !r0.contains(u)).collect();
    let drop1: Vec<usize> = (0..aligned.units).filter(|u| !r1.contains(u)).collect();
    Some((aligned.without_units(&drop0), aligned.without_units(&drop1)))
}

// ---------------------------------------------------------------------------
// eval-neural
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalNeuralArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding conditions.json from mpong-gen.
    #[arg(long)]
    conditions: Option<PathBuf>,
    /// Neural dataset manifest (the predictivity target; its first animal is
    /// scored, and a second animal, when present, sets the ceiling).
    #[arg(long)]
    neural: Option<PathBuf>,
    /// Separate second dataset for the inter-animal ceiling.
    #[arg(long)]
    neural2: Option<PathBuf>,
    /// Trained dynamics checkpoint directory.
    #[arg(long, conflicts_with = "oracle")]
    checkpoint: Option<PathBuf>,
    /// Ground-truth feature source: pos | vel | pos+vel | random.
    #[arg(long)]
    oracle: Option<String>,
    /// Latent inputs for checkpoint rollouts; defaults to ball-state latents.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// [default: 7]
    #[arg(long)]
    t_context: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    splits: Option<usize>,
    /// Split-half trial draws per train-test split [default: 10].
    #[arg(long)]
    repeats: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Report name for the scored model; defaults to the feature source.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_eval_neural(args: EvalNeuralArgs, verbose: bool) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let conditions_dir: PathBuf = resolve_required(args.conditions, &file, "conditions")?;
    let neural_path: PathBuf = resolve_required(args.neural, &file, "neural")?;
    let neural2 = resolve_opt(args.neural2, &file, "neural2")?;
    // The feature source is one slot with two spellings; an explicit flag
    // replaces whichever spelling the config file used.
    let (checkpoint, oracle) = if args.checkpoint.is_some() || args.oracle.is_some() {
        (args.checkpoint, args.oracle)
    } else {
        (file.get("checkpoint")?, file.get("oracle")?)
    };
    let latents = resolve_opt(args.latents, &file, "latents")?;
    let t_context = resolve(args.t_context, &file, "t_context", 7)?;
    let splits = resolve(args.splits, &file, "splits", 5)?;
    let repeats = resolve(args.repeats, &file, "repeats", 10)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    let set = read_conditions(&conditions_dir)?;
    let neural = load_neural_dataset(&neural_path)?;
    let aligned = align_named(&neural, &set, &neural_path, &conditions_dir)?;
    let (features, default_name) =
        feature_source(&checkpoint, &oracle, &latents, &set, t_context, seed)?;
    let name = resolve_opt(args.name, &file, "name")?.unwrap_or(default_name);

    let plan = make_split_plan(set.len(), splits, seed)?;
    let cfg = NpConfig { n_repeats: repeats, seed, ..Default::default() };
    let result = model_predictivity(&features, &aligned, &plan, &cfg)?;
    if verbose {
        for (si, lambda) in result.lambda_per_split.iter().enumerate() {
            println!("split {si}: ridge lambda {lambda}");
        }
    }

    let ceiling = match &neural2 {
        Some(path) => {
            let second = load_neural_dataset(path)?;
            let aligned2 = align_named(&second, &set, path, &conditions_dir)?;
            let cons = fit_internal_consistency(&aligned, &aligned2, &plan, &cfg)?;
            finite_or_none(cons.pooled.median)
        }
        None => match first_two_animals(&aligned, &neural) {
            Some((a, b)) => {
                let cons = fit_internal_consistency(&a, &b, &plan, &cfg)?;
                finite_or_none(cons.pooled.median)
            }
            None => None,
        },
    };

    create_dir(&out)?;
    let per_unit_csv = format!("per_unit_{name}.csv");
    write_string(&out.join(&per_unit_csv), &result.to_csv(&unit_labels(&neural)))?;
    let mut per_model = BTreeMap::new();
    per_model.insert(
        name.clone(),
        ModelEval {
            median_np: finite_or_none(result.median),
            sem: finite_or_none(result.sem),
            per_unit_csv_path: per_unit_csv,
            ball_decode: None,
        },
    );
    let report = EvalReport { ceiling, per_model, splits_seed: seed };
    write_json(&out.join("eval_report.json"), &to_value(&report, "eval report")?)?;
    let config = json!({
        "command": "eval-neural",
        "conditions": conditions_dir.display().to_string(),
        "neural": neural_path.display().to_string(),
        "neural2": display_opt(&neural2),
        "checkpoint": display_opt(&checkpoint),
        "oracle": oracle,
        "latents": display_opt(&latents),
        "t_context": t_context,
        "splits": splits,
        "repeats": repeats,
        "seed": seed,
        "name": name,
        "out": out.display().to_string(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "model {name}: median NP {} (sem {}), ceiling {}",
        result.median,
        result.sem,
        ceiling.map_or("n/a".into(), |c| c.to_string())
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// decode-ball
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DecodeBallArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding conditions.json from mpong-gen.
    #[arg(long)]
    conditions: Option<PathBuf>,
    /// Neural dataset manifest to decode from.
    #[arg(long)]
    neural: Option<PathBuf>,
    /// Trained dynamics checkpoint directory to decode from.
    #[arg(long, conflicts_with_all = ["neural", "oracle"])]
    checkpoint: Option<PathBuf>,
    /// Ground-truth feature source: pos | vel | pos+vel | random.
    #[arg(long, conflicts_with = "neural")]
    oracle: Option<String>,
    /// Latent inputs for checkpoint rollouts; defaults to ball-state latents.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// [default: 7]
    #[arg(long)]
    t_context: Option<usize>,
    /// [default: 5]
    #[arg(long)]
    splits: Option<usize>,
    /// [default: 10]
    #[arg(long)]
    repeats: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_decode_ball(args: DecodeBallArgs) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let conditions_dir: PathBuf = resolve_required(args.conditions, &file, "conditions")?;
    // One decode source of three spellings; explicit flags replace the
    // config file's choice wholesale.
    let (neural, checkpoint, oracle) =
        if args.neural.is_some() || args.checkpoint.is_some() || args.oracle.is_some() {
            (args.neural, args.checkpoint, args.oracle)
        } else {
            (file.get("neural")?, file.get("checkpoint")?, file.get("oracle")?)
        };
    let latents = resolve_opt(args.latents, &file, "latents")?;
    let t_context = resolve(args.t_context, &file, "t_context", 7)?;
    let splits = resolve(args.splits, &file, "splits", 5)?;
    let repeats = resolve(args.repeats, &file, "repeats", 10)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    let set = read_conditions(&conditions_dir)?;
    let plan = make_split_plan(set.len(), splits, seed)?;
    let cfg = NpConfig { n_repeats: repeats, seed, ..Default::default() };

    let (decode, source_name) = if let Some(neural_path) = &neural {
        if checkpoint.is_some() || oracle.is_some() {
            return Err(Error::InvalidArgument(
                "pass exactly one decode source: --neural, --checkpoint, or --oracle".into(),
            ));
        }
        let dataset = load_neural_dataset(neural_path)?;
        let aligned = align_named(&dataset, &set, neural_path, &conditions_dir)?;
        (
            ball_decode(DecodeSource::Neural(&aligned), &set, &plan, &cfg)?,
            "neural".to_string(),
        )
    } else {
        let (features, name) =
            feature_source(&checkpoint, &oracle, &latents, &set, t_context, seed)?;
        (
            ball_decode(DecodeSource::Features(&features), &set, &plan, &cfg)?,
            name,
        )
    };

    create_dir(&out)?;
    let targets: Vec<(String, String)> = ["x", "y", "vx", "vy"]
        .iter()
        .map(|q| ("ball".to_string(), q.to_string()))
        .collect();
    write_string(&out.join("decode_per_target.csv"), &decode.result.to_csv(&targets))?;
    let stats = |m: &mentalsim::metrics::MedianSem| {
        json!({ "median": finite_or_none(m.median), "sem": finite_or_none(m.sem) })
    };
    let report = json!({
        "source": source_name,
        "joint": stats(&decode.joint),
        "position": stats(&decode.position),
        "velocity": stats(&decode.velocity),
        "splits_seed": seed,
    });
    write_json(&out.join("decode.json"), &report)?;
    let config = json!({
        "command": "decode-ball",
        "conditions": conditions_dir.display().to_string(),
        "neural": display_opt(&neural),
        "checkpoint": display_opt(&checkpoint),
        "oracle": oracle,
        "latents": display_opt(&latents),
        "t_context": t_context,
        "splits": splits,
        "repeats": repeats,
        "seed": seed,
        "out": out.display().to_string(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "decoded from {source_name}: joint {} position {} velocity {}",
        decode.joint.median, decode.position.median, decode.velocity.median
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-ocp
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalOcpArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled latent dataset manifest (readout training pool).
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Human judgements manifest for the test stimuli.
    #[arg(long)]
    judgements: Option<PathBuf>,
    /// Trained dynamics checkpoint directory.
    #[arg(long, conflicts_with = "kind")]
    checkpoint: Option<PathBuf>,
    /// Checkpoint-free dynamics kind (only "none" is meaningful here).
    #[arg(long)]
    kind: Option<String>,
    /// Held-out test stimuli; omitted, a stratified quarter of --latents is
    /// held out instead.
    #[arg(long)]
    test_latents: Option<PathBuf>,
    /// [default: 7]
    #[arg(long)]
    t_context: Option<usize>,
    /// [default: 25]
    #[arg(long)]
    total: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_eval_ocp(args: EvalOcpArgs) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let latents: PathBuf = resolve_required(args.latents, &file, "latents")?;
    let judgements_path: PathBuf = resolve_required(args.judgements, &file, "judgements")?;
    // A config file from a checkpoint run records both the path and the kind
    // it resolved to; the path alone identifies the model there.
    let (checkpoint, kind) = if args.checkpoint.is_some() || args.kind.is_some() {
        (args.checkpoint, args.kind)
    } else {
        let checkpoint: Option<PathBuf> = file.get("checkpoint")?;
        let kind = if checkpoint.is_some() { None } else { file.get("kind")? };
        (checkpoint, kind)
    };
    let test_latents = resolve_opt(args.test_latents, &file, "test_latents")?;
    let t_context = resolve(args.t_context, &file, "t_context", behavior::DEFAULT_CONTEXT)?;
    let total = resolve(args.total, &file, "total", behavior::DEFAULT_TOTAL)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    let data = load_latent_dataset(&latents)?;
    let model = match (&checkpoint, &kind) {
        (Some(dir), None) => dynamics::load_checkpoint(dir)?,
        (None, kind) => match kind.as_deref().unwrap_or("none") {
            "none" => DynamicsModel::new_none(data.d)?,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "kind '{other}' needs a trained checkpoint; pass --checkpoint"
                )))
            }
        },
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "--checkpoint and --kind are mutually exclusive".into(),
            ))
        }
    };
    let judgements = load_human_judgements(&judgements_path)?;

    let (train, test) = match &test_latents {
        Some(path) => {
            let test_data = load_latent_dataset(path)?;
            (
                behavior::build_features(&data, &model, t_context, total)?,
                behavior::build_features(&test_data, &model, t_context, total)?,
            )
        }
        None => {
            let features = behavior::build_features(&data, &model, t_context, total)?;
            let strata: Vec<u64> = features.labels.iter().map(|&h| h as u64).collect();
            let plan = make_folds(&strata, 4, FoldKind::Stratified, seed)?;
            let (train_idx, test_idx) = plan
                .splits()
                .next()
                .ok_or_else(|| Error::Empty("stratified split produced no folds".into()))?;
            (features.subset(&train_idx), features.subset(&test_idx))
        }
    };

    let readout = behavior::train_readout(&train, seed)?;
    let scores = behavior::evaluate(&readout, &test, &judgements)?;
    let total_stats = behavior::aggregate(&scores)?;

    create_dir(&out)?;
    write_string(&out.join("ocp_scores.csv"), &behavior::scores_to_csv(&scores, &total_stats))?;
    let stats = |s: &mentalsim::metrics::WeightedStats| {
        json!({
            "weighted_mean": finite_or_none(s.weighted_mean),
            "weighted_sem": finite_or_none(s.weighted_sem),
            "variance": finite_or_none(s.variance),
            "effective_sample_size": s.effective_sample_size,
        })
    };
    let aggregate_json = json!({
        "accuracy": stats(&total_stats.accuracy),
        "pearson": stats(&total_stats.pearson),
        "n_scenarios": total_stats.n_scenarios,
        "n_flagged": total_stats.n_flagged,
        "n_train": train.len(),
        "n_test": test.len(),
    });
    write_json(&out.join("ocp_aggregate.json"), &aggregate_json)?;
    let config = json!({
        "command": "eval-ocp",
        "latents": latents.display().to_string(),
        "judgements": judgements_path.display().to_string(),
        "checkpoint": display_opt(&checkpoint),
        "kind": model.kind.name(),
        "test_latents": display_opt(&test_latents),
        "t_context": t_context,
        "total": total,
        "seed": seed,
        "out": out.display().to_string(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "{} scenarios: accuracy {} ± {}, human correlation {} ± {}",
        total_stats.n_scenarios,
        total_stats.accuracy.weighted_mean,
        total_stats.accuracy.weighted_sem,
        total_stats.pearson.weighted_mean,
        total_stats.pearson.weighted_sem
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Subcommand)]
enum SynthCmd {
    /// Linear latent world: stable random dynamics, optional process noise.
    World(SynthWorldArgs),
    /// Simulated neural population driven by ball-state readouts.
    Dmfc(SynthDmfcArgs),
    /// Labeled contact-prediction latents plus matching synthetic judgements.
    Ocp(SynthOcpArgs),
}

#[derive(Args)]
struct SynthWorldArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 16]
    #[arg(long)]
    d: Option<usize>,
    /// Spectral radius of the transition matrix [default: 0.95].
    #[arg(long)]
    rho: Option<f64>,
    /// [default: 64]
    #[arg(long)]
    stimuli: Option<usize>,
    /// [default: 24]
    #[arg(long)]
    frames: Option<usize>,
    /// Process noise standard deviation [default: 0].
    #[arg(long)]
    sigma: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_synth_world(args: SynthWorldArgs) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let d = resolve(args.d, &file, "d", 16)?;
    let rho = resolve(args.rho, &file, "rho", 0.95)?;
    let stimuli = resolve(args.stimuli, &file, "stimuli", 64)?;
    let frames = resolve(args.frames, &file, "frames", 24)?;
    let sigma = resolve(args.sigma, &file, "sigma", 0.0)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    let data = make_linear_world(d, rho, stimuli, frames, sigma, seed)?;
    let manifest = save_latent_dataset(&data, &out)?;
    let config = json!({
        "command": "synth-world",
        "d": d,
        "rho": rho,
        "stimuli": stimuli,
        "frames": frames,
        "sigma": sigma,
        "seed": seed,
        "out": out.display().to_string(),
        "n_items": data.items.len(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!("wrote {} sequences to {}", data.items.len(), manifest.display());
    Ok(())
}

#[derive(Args)]
struct SynthDmfcArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding conditions.json from mpong-gen.
    #[arg(long)]
    conditions: Option<PathBuf>,
    /// [default: 12]
    #[arg(long)]
    units: Option<usize>,
    /// Readout kind: pos | vel | pos+vel | random [default: pos+vel].
    #[arg(long)]
    readout: Option<String>,
    /// Seed of the readout matrix; animals sharing it share signal
    /// [default: 7].
    #[arg(long)]
    readout_seed: Option<u64>,
    /// Trial noise standard deviation (rate units) [default: 0.5].
    #[arg(long)]
    sigma: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    trials: Option<usize>,
    /// Animals to simulate; all share the readout, each gets its own noise
    /// [default: 1].
    #[arg(long)]
    animals: Option<usize>,
    /// Pass rates through a softplus before adding noise.
    #[arg(long)]
    softplus: bool,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_readout(s: &str) -> Result<ReadoutKind> {
    match s {
        "pos" => Ok(ReadoutKind::Position),
        "vel" => Ok(ReadoutKind::Velocity),
        "pos+vel" => Ok(ReadoutKind::PositionVelocity),
        "random" => Ok(ReadoutKind::Random),
        other => Err(Error::InvalidArgument(format!(
            "unknown readout '{other}' (expected pos, vel, pos+vel, or random)"
        ))),
    }
}

/// Concatenate two single-recording datasets over the unit axis. Conditions
/// and trial structure must match exactly.
fn merge_animals(mut base: NeuralDataset, other: NeuralDataset) -> Result<NeuralDataset> {
    if base.conditions.len() != other.conditions.len() {
        return Err(Error::Misaligned(format!(
            "cannot merge recordings with {} vs {} conditions",
            base.conditions.len(),
            other.conditions.len()
        )));
    }
    let mut conditions = Vec::with_capacity(base.conditions.len());
    for (a, b) in base.conditions.iter().zip(&other.conditions) {
        let (ta, tb) = (&a.responses, &b.responses);
        if a.id != b.id || ta.trials != tb.trials || ta.bins != tb.bins {
            return Err(Error::Misaligned(format!(
                "condition {} does not align across animals",
                a.id
            )));
        }
        let mut data = Vec::with_capacity(ta.trials * ta.bins * (ta.units + tb.units));
        for trial in 0..ta.trials {
            for bin in 0..ta.bins {
                for u in 0..ta.units {
                    data.push(ta.get(trial, bin, u));
                }
                for u in 0..tb.units {
                    data.push(tb.get(trial, bin, u));
                }
            }
        }
        conditions.push(NeuralCondition {
            id: a.id.clone(),
            responses: TrialTensor::new(ta.trials, ta.bins, ta.units + tb.units, data)?,
        });
    }
    base.animals.extend(other.animals);
    base.conditions = conditions;
    Ok(base)
}

fn cmd_synth_dmfc(args: SynthDmfcArgs) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let conditions_dir: PathBuf = resolve_required(args.conditions, &file, "conditions")?;
    let units = resolve(args.units, &file, "units", 12)?;
    let readout = resolve(args.readout, &file, "readout", "pos+vel".to_string())?;
    let readout_seed = resolve(args.readout_seed, &file, "readout_seed", 7)?;
    let sigma = resolve(args.sigma, &file, "sigma", 0.5)?;
    let trials = resolve(args.trials, &file, "trials", 8)?;
    let animals = resolve(args.animals, &file, "animals", 1)?;
    let softplus = args.softplus || file.get::<bool>("softplus")?.unwrap_or(false);
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    if animals == 0 {
        return Err(Error::InvalidArgument("need at least one animal".into()));
    }
    let set = read_conditions(&conditions_dir)?;
    let spec = SynthNeuralSpec {
        n_units: units,
        readout: parse_readout(&readout)?,
        readout_seed,
        noise_sigma: sigma,
        n_trials: trials,
        softplus,
    };
    let mut dataset = make_synth_dmfc(&set, &spec, seed)?;
    for animal in 1..animals {
        let next = make_synth_dmfc(&set, &spec, seed + animal as u64)?;
        dataset = merge_animals(dataset, next)?;
    }
    let manifest = save_neural_dataset(&dataset, &out)?;
    let config = json!({
        "command": "synth-dmfc",
        "conditions": conditions_dir.display().to_string(),
        "units": units,
        "readout": readout,
        "readout_seed": readout_seed,
        "sigma": sigma,
        "trials": trials,
        "animals": animals,
        "softplus": softplus,
        "seed": seed,
        "out": out.display().to_string(),
        "n_items": dataset.conditions.len(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "wrote {} animals × {} units over {} conditions to {}",
        dataset.animals.len(),
        units,
        dataset.conditions.len(),
        manifest.display()
    );
    Ok(())
}

#[derive(Args)]
struct SynthOcpArgs {
    /// JSON object of flag defaults; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scenario:count pairs, e.g. "drop:40,roll:40".
    #[arg(long)]
    scenarios: Option<String>,
    /// [default: 4]
    #[arg(long)]
    d: Option<usize>,
    /// [default: 9]
    #[arg(long)]
    frames: Option<usize>,
    /// Class separation of the labeled coordinate [default: 2].
    #[arg(long)]
    separation: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scenarios(s: &str) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let (name, count) = part.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("scenario spec {part:?} is not name:count"))
        })?;
        let n: usize = count.parse().map_err(|_| {
            Error::InvalidArgument(format!("scenario count {count:?} is not a number"))
        })?;
        if name.is_empty() || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "scenario spec {part:?} needs a name and a positive count"
            )));
        }
        out.push((name.to_string(), n));
    }
    Ok(out)
}

fn cmd_synth_ocp(args: SynthOcpArgs) -> Result<()> {
    let threads = thread_cap()?;
    let file = ConfigFile::load(&args.config)?;
    let scenarios_spec: String = resolve_required(args.scenarios, &file, "scenarios")?;
    let d = resolve(args.d, &file, "d", 4)?;
    let frames = resolve(args.frames, &file, "frames", 9)?;
    let separation = resolve(args.separation, &file, "separation", 2.0)?;
    let seed = resolve(args.seed, &file, "seed", 0)?;
    let out: PathBuf = resolve_required(args.out, &file, "out")?;

    let scenarios = parse_scenarios(&scenarios_spec)?;
    let borrowed: Vec<(&str, usize)> = scenarios.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    let (data, judgements) = make_ocp_dataset(&borrowed, d, frames, separation, seed)?;
    let manifest = save_latent_dataset(&data, &out)?;
    save_human_judgements(&judgements, &out.join("judgements.json"))?;
    let config = json!({
        "command": "synth-ocp",
        "scenarios": scenarios_spec,
        "d": d,
        "frames": frames,
        "separation": separation,
        "seed": seed,
        "out": out.display().to_string(),
        "n_items": data.items.len(),
        "threads": threads,
    });
    write_json(&out.join("resolved-config.json"), &config)?;
    println!(
        "wrote {} labeled stimuli and judgements to {}",
        data.items.len(),
        manifest.parent().unwrap_or(&out).display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// Run directories to combine (each with a resolved-config.json).
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn json_cell(v: &Value) -> String {
    match v {
        Value::Null => "NaN".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// The one headline metric a run directory contributes to the comparison.
fn headline(dir: &Path) -> Result<(String, String, String)> {
    let config = read_json(&dir.join("resolved-config.json"))?;
    let command = config["command"]
        .as_str()
        .ok_or_else(|| Error::Manifest {
            path: dir.join("resolved-config.json"),
            reason: "no \"command\" field".into(),
        })?
        .to_string();
    let (metric, value) = match command.as_str() {
        "mpong-gen" => ("n_conditions".to_string(), json_cell(&config["n"])),
        "synth-world" | "synth-dmfc" | "synth-ocp" => {
            ("n_items".to_string(), json_cell(&config["n_items"]))
        }
        "train-dynamics" => {
            let text = std::fs::read_to_string(dir.join("loss.csv")).map_err(io_err(&dir.join("loss.csv")))?;
            let last = text
                .lines()
                .rfind(|l| !l.is_empty())
                .and_then(|l| l.split(',').nth(1))
                .ok_or_else(|| Error::Manifest {
                    path: dir.join("loss.csv"),
                    reason: "no loss rows".into(),
                })?;
            ("final_mse".to_string(), last.to_string())
        }
        "eval-neural" => {
            let report = read_json(&dir.join("eval_report.json"))?;
            let value = report["per_model"]
                .as_object()
                .and_then(|m| m.values().next())
                .map(|model| json_cell(&model["median_np"]))
                .ok_or_else(|| Error::Manifest {
                    path: dir.join("eval_report.json"),
                    reason: "no models in report".into(),
                })?;
            ("median_np".to_string(), value)
        }
        "decode-ball" => {
            let report = read_json(&dir.join("decode.json"))?;
            ("decode_joint_median".to_string(), json_cell(&report["joint"]["median"]))
        }
        "eval-ocp" => {
            let report = read_json(&dir.join("ocp_aggregate.json"))?;
            ("ocp_accuracy".to_string(), json_cell(&report["accuracy"]["weighted_mean"]))
        }
        other => {
            return Err(Error::Manifest {
                path: dir.join("resolved-config.json"),
                reason: format!("unknown command {other:?}"),
            })
        }
    };
    Ok((command, metric, value))
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.runs.len());
    for dir in &args.runs {
        let run_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let (command, metric, value) = headline(dir)?;
        rows.push((run_id, command, metric, value));
    }
    rows.sort();
    let mut csv = String::from("run,command,metric,value\n");
    for (run, command, metric, value) in &rows {
        csv.push_str(&format!("{run},{command},{metric},{value}\n"));
    }
    print!("{csv}");
    if let Some(path) = &args.out {
        write_string(path, &csv)?;
    }
    Ok(())
}
