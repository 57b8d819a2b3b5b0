use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cuae::datasets::{self, Example, GeneratorConfig};
use cuae::expost::{collect_pairs, fit_joint};
use cuae::gaussmath::GaussianMixture;
use cuae::metrics::evaluate_predictions;
use cuae::models::{resume, Checkpoint, Dims, InferenceMode, Model, ModelConfig, PredictOptions, Variant};
use cuae::types::PredictionSet;

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "cuae", version, about = "Multi-modal trajectory forecasting with unscented and mixture-latent CVAEs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic intersection dataset (train.csv, val.csv)
    GenData(GenDataArgs),
    /// Train a model and write checkpoint.json and train_log.csv
    Train(TrainArgs),
    /// Fit the conditional ex-post joint mixture (joint.json, pairs.csv)
    FitExpost(FitExpostArgs),
    /// Evaluate a checkpoint (metrics.csv, trajectories.csv)
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Total number of scenes, split into train and validation
    #[arg(long, default_value_t = 7000)]
    scenes: usize,
    /// Number of available branches per scene (1: straight, 2: left/right, 3: all)
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    branches: u8,
    /// Standard deviation of the position noise on the future, meters
    #[arg(long, default_value_t = 0.15)]
    noise_std: f64,
    /// Fraction of scenes (the highest ids) held out for validation
    #[arg(long, default_value_t = 1.0 / 7.0)]
    val_fraction: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum VariantArg {
    Cvae,
    Cuae,
    GmmCvae,
    GmmCuae,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Cvae => Variant::Cvae,
            VariantArg::Cuae => Variant::Cuae,
            VariantArg::GmmCvae => Variant::GmmCvae,
            VariantArg::GmmCuae => Variant::GmmCuae,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model variant [required unless --config or --resume gives it]
    #[arg(long, value_enum, required_unless_present_any = ["config", "resume"])]
    variant: Option<VariantArg>,
    /// key = value config file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint (only --epochs is honored besides --data/--out)
    #[arg(long, conflicts_with_all = ["variant", "config"])]
    resume: Option<PathBuf>,
    /// Latent dimension n [default: 8]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Latent mixture components C for the gmm variants [default: 3]
    #[arg(long)]
    components: Option<usize>,
    /// Latents decoded per component K [default: 2n+1 for unscented variants, 16 otherwise]
    #[arg(long)]
    samples: Option<usize>,
    /// Reconstruction likelihood standard deviation, meters [default: 1.0]
    #[arg(long)]
    sigma: Option<f64>,
    /// Total number of epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base learning rate before halving [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Training dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitExpostArgs {
    /// Trained checkpoint (cvae or cuae)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV whose encodings are collected (normally the training split)
    #[arg(long)]
    data: PathBuf,
    /// Joint mixture components
    #[arg(long, default_value_t = 8)]
    components: usize,
    /// Random seed of the EM initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Prior,
    Sigma,
    Cxp,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset CSV to evaluate on
    #[arg(long)]
    data: PathBuf,
    /// Latent source [default: sigma for unscented variants, prior otherwise]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Latents decoded per component [default: the checkpoint's training K]
    #[arg(long = "K")]
    k: Option<usize>,
    /// Candidates kept by clustering
    #[arg(long = "M", default_value_t = 3)]
    m: usize,
    /// Cluster decoded trajectories into M candidates
    #[arg(long, value_enum, default_value_t = OnOff::Off)]
    cluster: OnOff,
    /// Joint mixture JSON from fit-expost (required for --mode cxp)
    #[arg(long)]
    expost: Option<PathBuf>,
    /// Seed of random latent draws and sigma subsampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::FitExpost(a) => fit_expost(a),
        Command::Eval(a) => eval(a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_examples(path: &Path) -> anyhow::Result<Vec<Example>> {
    let scenes = datasets::load(path).with_context(|| format!("loading {}", path.display()))?;
    if scenes.is_empty() {
        anyhow::bail!("{} contains no scenes", path.display());
    }
    Ok(scenes.iter().map(|s| s.example()).collect())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(a: GenDataArgs) -> Outcome {
    if !(0.0..1.0).contains(&a.val_fraction) {
        return Err(Failure::Usage("--val-fraction must be in [0, 1)".into()));
    }
    let cfg = GeneratorConfig {
        n_scenes: a.scenes,
        noise_std: a.noise_std,
        seed: a.seed,
        val_fraction: a.val_fraction,
        ..GeneratorConfig::default()
    }
    .with_branches(a.branches as usize);
    let splits = datasets::generate(&cfg)?;
    create_dir(&a.out)?;
    write(&a.out.join("train.csv"), &datasets::to_csv(&splits.train))?;
    write(&a.out.join("val.csv"), &datasets::to_csv(&splits.val))?;
    eprintln!("wrote {} train and {} val scenes to {}", splits.train.len(), splits.val.len(), a.out.display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<ModelConfig, Failure> {
    let mut cfg = match (&a.config, a.variant) {
        (Some(path), variant) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut cfg =
                ModelConfig::from_kv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if let Some(v) = variant {
                cfg.variant = v.into();
            }
            cfg
        }
        (None, Some(v)) => ModelConfig::new(v.into()),
        (None, None) => return Err(Failure::Usage("--variant is required".into())),
    };
    if let Some(n) = a.latent_dim {
        cfg.latent_dim = n;
        if a.samples.is_none() && cfg.variant.is_unscented() {
            cfg.samples = 2 * n + 1;
        }
    }
    if let Some(c) = a.components {
        cfg.components = c;
    }
    if let Some(k) = a.samples {
        cfg.samples = k;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Outcome {
    let data = load_examples(&a.data)?;
    let mut ckpt = match &a.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if let Some(e) = a.epochs {
                ckpt.model.config.epochs = e;
            }
            ckpt
        }
        None => {
            let cfg = train_config(&a)?;
            let dims = Dims::of(&data[0].context, &data[0].future);
            Checkpoint::new(Model::new(cfg, dims)?)
        }
    };
    let cfg = &ckpt.model.config;
    eprintln!("training {} for epochs {}..{}", cfg.variant, ckpt.epoch, cfg.epochs);
    resume(&mut ckpt, &data)?;
    create_dir(&a.out)?;
    ckpt.save(&a.out.join("checkpoint.json"))?;
    write(&a.out.join("train_log.csv"), &cuae::models::log_csv(&ckpt.log))?;
    write(&a.out.join("config.txt"), &ckpt.model.config.to_kv())?;
    if let Some(last) = ckpt.log.last() {
        eprintln!("final epoch {}: loss {:.6} (rec {:.6}, kl {:.6})", last.epoch, last.loss_total, last.loss_rec, last.loss_kl);
    }
    Ok(())
}

fn fit_expost(a: FitExpostArgs) -> Outcome {
    if a.components == 0 {
        return Err(Failure::Usage("--components must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = load_examples(&a.data)?;
    let pairs = collect_pairs(&ckpt.model, &data)?;
    let joint = fit_joint(&pairs, a.components, a.seed)?;
    create_dir(&a.out)?;
    write(&a.out.join("pairs.csv"), &pairs.to_csv())?;
    write(&a.out.join("joint.json"), &joint.to_json()?)?;
    eprintln!("fitted {} components on {} encoding pairs", joint.len(), pairs.len());
    Ok(())
}

fn trajectory_dump(ids: &[u64], preds: &HashMap<u64, PredictionSet>) -> String {
    let mut out = String::from("scene_id,candidate,weight,t,x,y\n");
    for id in ids {
        let set = &preds[id];
        for (c, (traj, w)) in set.trajectories.iter().zip(&set.weights).enumerate() {
            for (t, p) in traj.positions.iter().enumerate() {
                writeln!(out, "{id},{c},{w:.10e},{t},{:.10e},{:.10e}", p[0], p[1]).unwrap();
            }
        }
    }
    out
}

fn eval(a: EvalArgs) -> Outcome {
    let mode = a.mode.unwrap_or(ModeArg::Sigma);
    if mode == ModeArg::Cxp && a.expost.is_none() {
        return Err(Failure::Usage("--mode cxp requires --expost".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = &ckpt.model;
    let mode = match a.mode {
        Some(ModeArg::Prior) => InferenceMode::Prior,
        Some(ModeArg::Sigma) => InferenceMode::Sigma,
        Some(ModeArg::Cxp) => InferenceMode::Cxp,
        None if model.config.variant.is_unscented() => InferenceMode::Sigma,
        None => InferenceMode::Prior,
    };
    let k = a.k.unwrap_or(model.config.samples);
    let cluster = a.cluster == OnOff::On;
    if cluster && k < a.m {
        return Err(Failure::Usage(format!("--cluster on needs K >= M (K = {k}, M = {})", a.m)));
    }
    let joint = match &a.expost {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(GaussianMixture::from_json(&text)?)
        }
        None => None,
    };
    let data = load_examples(&a.data)?;
    let opts = PredictOptions { mode, samples: k, candidates: a.m, cluster, seed: a.seed, cluster_seed: 0 };
    let mut preds = HashMap::with_capacity(data.len());
    for ex in &data {
        let p = model
            .predict(&ex.context, &opts, joint.as_ref())
            .with_context(|| format!("predicting scene {}", ex.scene_id))?;
        preds.insert(ex.scene_id, p.set);
    }
    let report = evaluate_predictions(model.config.variant.name(), &preds, &data)?;
    let ids: Vec<u64> = data.iter().map(|e| e.scene_id).collect();
    create_dir(&a.out)?;
    write(&a.out.join("metrics.csv"), &report.to_csv())?;
    write(&a.out.join("trajectories.csv"), &trajectory_dump(&ids, &preds))?;
    if !report.underflow_scenes.is_empty() {
        eprintln!("warning: mixture NLL underflowed in {} scenes", report.underflow_scenes.len());
    }
    eprintln!(
        "{} {} on {} scenes: minADE {:.4} minFDE {:.4}",
        model.config.variant,
        mode,
        data.len(),
        report.mean_min_ade(),
        report.mean_min_fde()
    );
    Ok(())
}
