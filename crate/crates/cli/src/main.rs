use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use skinmtl::data::{self, Dataset};
use skinmtl::gradcheck::{faulty_case, GradCheck};
use skinmtl::inference::Predictor;
use skinmtl::metrics::{self, SamplePrediction};
use skinmtl::model::{LossWeights, ModelConfig, MultiTaskModel, PosWeights};
use skinmtl::synth::{self, SynthConfig};
use skinmtl::train::{self, LrSchedule, OptimizerKind, TrainConfig};

/// Multi-task skin-lesion segmentation and classification.
#[derive(Parser, Debug)]
#[command(name = "skinmtl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and check that its tasks are learnable
    Synth(SynthCmd),
    /// Train one model, on one held-out fold or on the whole dataset
    Train(TrainCmd),
    /// Run k-fold cross-validation
    Cv(CvCmd),
    /// Compare multi-task, segmentation-only and classification-only training
    Ablate(AblateCmd),
    /// Score checkpoints on a labelled dataset directory
    Eval(EvalCmd),
    /// Predict masks and probabilities for a directory of images
    Predict(PredictCmd),
    /// Compare analytic and finite-difference gradients of every operation
    Gradcheck(GradcheckCmd),
}

/// Optional JSON file with `model`, `train` and `synth` sections.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    synth: Option<SynthConfig>,
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("{p:?} is not a number"))?;
    }
    Ok(out)
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("{v:?} is not a size"));
    Ok([p(h)?, p(w)?])
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 64x64 input, 16 base channels
    Desk,
    /// 192x192 input, 32 base channels, for ISIC images
    Isic,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Architecture preset, applied before the config file and flags
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Network input size as HxW
    #[arg(long, value_parser = parse_size, default_value = "64x64")]
    input_size: [usize; 2],
    /// Channels of the first encoder stage
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Encoder depth
    #[arg(long, default_value_t = 4)]
    stages: usize,
    /// Inception-style encoder blocks
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    inception: bool,
    /// Feed the pooled segmentation map to the classification heads
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    seg_feeds_heads: bool,
    /// Loss weights "seg,melanoma,sk"
    #[arg(long, value_parser = parse_triple, default_value = "1,1,1")]
    loss_weights: [f64; 3],
}

impl ModelArgs {
    fn resolve(&self, m: &ArgMatches, file: Option<ModelConfig>) -> ModelConfig {
        let mut cfg = file.unwrap_or_else(|| match self.preset {
            Preset::Desk => ModelConfig::default(),
            Preset::Isic => ModelConfig::isic(),
        });
        if explicit(m, "input_size") {
            cfg.input_size = self.input_size;
        }
        if explicit(m, "base_channels") {
            cfg.base_channels = self.base_channels;
        }
        if explicit(m, "stages") {
            cfg.stages = self.stages;
        }
        if explicit(m, "inception") {
            cfg.inception_enabled = self.inception;
        }
        if explicit(m, "seg_feeds_heads") {
            cfg.seg_feeds_heads = self.seg_feeds_heads;
        }
        if explicit(m, "loss_weights") {
            let [seg, melanoma, sk] = self.loss_weights;
            cfg.loss_weights = LossWeights { seg, melanoma, sk };
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptArg,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random rotations and flips during training
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    augment: bool,
    /// Positive-class weight of the melanoma loss
    #[arg(long, default_value_t = 1.0)]
    pos_weight_melanoma: f64,
    /// Positive-class weight of the seborrheic keratosis loss
    #[arg(long, default_value_t = 1.0)]
    pos_weight_sk: f64,
    #[arg(long, value_enum, default_value = "constant")]
    lr_schedule: ScheduleArg,
    /// Stop after this many epochs without validation improvement [default: off]
    #[arg(long)]
    early_stopping_patience: Option<usize>,
}

impl TrainArgs {
    fn resolve(&self, m: &ArgMatches, file: Option<TrainConfig>) -> TrainConfig {
        let mut cfg = file.unwrap_or_default();
        if explicit(m, "epochs") {
            cfg.epochs = self.epochs;
        }
        if explicit(m, "batch_size") {
            cfg.batch_size = self.batch_size;
        }
        if explicit(m, "learning_rate") {
            cfg.learning_rate = self.learning_rate;
        }
        if explicit(m, "optimizer") {
            cfg.optimizer = match self.optimizer {
                OptArg::Adam => OptimizerKind::Adam,
                OptArg::Sgd => OptimizerKind::Sgd,
            };
        }
        if explicit(m, "seed") {
            cfg.seed = self.seed;
        }
        if explicit(m, "augment") {
            cfg.augment_enabled = self.augment;
        }
        if explicit(m, "pos_weight_melanoma") || explicit(m, "pos_weight_sk") {
            cfg.pos_weight = PosWeights {
                melanoma: if explicit(m, "pos_weight_melanoma") { self.pos_weight_melanoma } else { cfg.pos_weight.melanoma },
                sk: if explicit(m, "pos_weight_sk") { self.pos_weight_sk } else { cfg.pos_weight.sk },
            };
        }
        if explicit(m, "lr_schedule") {
            cfg.lr_schedule = match self.lr_schedule {
                ScheduleArg::Constant => LrSchedule::Constant,
                ScheduleArg::Cosine => LrSchedule::Cosine,
            };
        }
        if self.early_stopping_patience.is_some() {
            cfg.early_stopping_patience = self.early_stopping_patience;
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset directory with images/, masks/ and labels.csv
    #[arg(long)]
    data: PathBuf,
    /// Number of cross-validation folds
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed of the stratified fold assignment
    #[arg(long, default_value_t = 0)]
    fold_seed: u64,
}

impl DataArgs {
    fn load(&self, model: &ModelConfig) -> Result<Dataset> {
        let ds = data::load_dataset(&self.data).with_context(|| format!("loading {}", self.data.display()))?;
        let [h, w] = model.input_size;
        let ds = if ds.samples().iter().all(|s| s.size() == (h, w)) { ds } else { ds.resized(h, w)? };
        Ok(ds.stratified(self.folds, self.fold_seed)?)
    }
}

#[derive(Args, Debug)]
struct SynthCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size as HxW
    #[arg(long, value_parser = parse_size, default_value = "64x64")]
    size: [usize; 2],
    /// Class probabilities "nevus,melanoma,sk"
    #[arg(long, value_parser = parse_triple, default_value = "0.5,0.25,0.25")]
    class_mix: [f64; 3],
    /// Smallest lesion area as a fraction of the image
    #[arg(long, default_value_t = 0.05)]
    min_area: f64,
    /// Largest lesion area as a fraction of the image
    #[arg(long, default_value_t = 0.40)]
    max_area: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Held-out fold; without it the whole dataset is used for training
    #[arg(long)]
    fold: Option<usize>,
    /// Output directory for the checkpoint and result JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CvCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory for checkpoints and reports
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateCmd {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Comma-separated held-out folds to run [default: all]
    #[arg(long, value_delimiter = ',')]
    only_folds: Vec<usize>,
    /// Output directory for checkpoints and reports
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalCmd {
    /// Checkpoint file; repeat to average the probabilities of several models
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Dataset directory with images/, masks/ and labels.csv
    #[arg(long)]
    data: PathBuf,
    /// Write the report JSON here as well as to standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictCmd {
    /// Checkpoint file; repeat to average the probabilities of several models
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Directory of .ppm or .png images
    #[arg(long)]
    input: PathBuf,
    /// Output directory for masks/ and submission.csv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add an operation with a deliberately wrong gradient
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn sub_matches<'a>(m: &'a ArgMatches) -> &'a ArgMatches {
    m.subcommand().map(|(_, s)| s).expect("a subcommand is required")
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(c: &SynthCmd, m: &ArgMatches) -> Result<()> {
    let mut cfg = read_config(c.config.as_deref())?.synth.unwrap_or_default();
    if explicit(m, "count") {
        cfg.count = c.count;
    }
    if explicit(m, "seed") {
        cfg.seed = c.seed;
    }
    if explicit(m, "size") {
        cfg.size = c.size;
    }
    if explicit(m, "class_mix") {
        cfg.class_mix = c.class_mix;
    }
    if explicit(m, "min_area") {
        cfg.lesion_area_range[0] = c.min_area;
    }
    if explicit(m, "max_area") {
        cfg.lesion_area_range[1] = c.max_area;
    }
    let ds = synth::generate(&cfg)?;
    data::save_dataset(&ds, &c.out)?;
    let report = synth::class_separability_check(&ds)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.degenerate {
        eprintln!("warning: a task has a single class; separability is undefined");
    } else if !report.learnable {
        bail!("generated tasks are not separable by lesion intensity (AUC below {})", synth::LEARNABLE_AUC);
    }
    Ok(())
}

fn resolve_common(
    config: Option<&Path>,
    m: &ArgMatches,
    model: &ModelArgs,
    train: &TrainArgs,
    out: &Path,
) -> Result<(ModelConfig, TrainConfig)> {
    let file = read_config(config)?;
    let model_cfg = model.resolve(m, file.model);
    model_cfg.validate()?;
    let mut train_cfg = train.resolve(m, file.train);
    train_cfg.checkpoint_dir = Some(out.to_path_buf());
    train_cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok((model_cfg, train_cfg))
}

fn cmd_train(c: &TrainCmd, m: &ArgMatches) -> Result<()> {
    let (model_cfg, train_cfg) = resolve_common(c.config.as_deref(), m, &c.model, &c.train, &c.out)?;
    let ds = c.data.load(&model_cfg)?;
    match c.fold {
        Some(fold) => {
            let r = train::train_fold(&ds, fold, &model_cfg, &train_cfg)?;
            println!("{}", serde_json::to_string_pretty(&r.val_report)?);
        }
        None => {
            let outcome = train::fit(&model_cfg, &train_cfg, &ds, None, 0)?;
            let path = c.out.join("model.lmtk");
            outcome.model.save(&path)?;
            write_json(&c.out.join("loss_curve.json"), &outcome.loss_curve)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_cv(c: &CvCmd, m: &ArgMatches) -> Result<()> {
    let (model_cfg, train_cfg) = resolve_common(c.config.as_deref(), m, &c.model, &c.train, &c.out)?;
    let ds = c.data.load(&model_cfg)?;
    let cv = train::cross_validate(&ds, &model_cfg, &train_cfg)?;
    for f in &cv.folds {
        println!(
            "fold {}: jaccard {:.4}  mean AUC {}",
            f.fold_index,
            f.val_report.mean_jaccard,
            f.val_report.mean_auc.map_or("undefined".into(), |v| format!("{v:.4}"))
        );
    }
    println!("{}", serde_json::to_string_pretty(&cv.aggregate)?);
    Ok(())
}

fn cmd_ablate(c: &AblateCmd, m: &ArgMatches) -> Result<()> {
    let (model_cfg, train_cfg) = resolve_common(c.config.as_deref(), m, &c.model, &c.train, &c.out)?;
    let ds = c.data.load(&model_cfg)?;
    let table = train::run_ablation(&ds, &c.only_folds, &model_cfg, &train_cfg)?;
    print!("{table}");
    Ok(())
}

fn load_predictor(paths: &[PathBuf]) -> Result<Predictor> {
    let models = paths
        .iter()
        .map(|p| MultiTaskModel::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Predictor::new(models)?)
}

fn cmd_eval(c: &EvalCmd) -> Result<()> {
    let predictor = load_predictor(&c.checkpoint)?;
    let ds = data::load_dataset(&c.data).with_context(|| format!("loading {}", c.data.display()))?;
    let report = predictor.evaluate(&ds)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &c.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_predict(c: &PredictCmd) -> Result<()> {
    let predictor = load_predictor(&c.checkpoint)?;
    let images = data::list_images(&c.input)?;
    if images.is_empty() {
        bail!("no .ppm or .png images in {}", c.input.display());
    }
    let mut preds: Vec<SamplePrediction> = Vec::new();
    let mut failures = Vec::new();
    for (id, path) in &images {
        match data::read_image(path).map_err(anyhow::Error::from).and_then(|img| Ok(predictor.predict_image(id, &img)?)) {
            Ok(p) => preds.push(p),
            Err(e) => failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    metrics::write_submission(&preds, c.out.join("submission.csv"), Some(&c.out.join("masks")))?;
    println!("predicted {} of {} images into {}", preds.len(), images.len(), c.out.display());
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        bail!("{} image(s) failed", failures.len());
    }
    Ok(())
}

fn cmd_gradcheck(c: &GradcheckCmd) -> Result<()> {
    let mut gc = GradCheck::standard(c.seed);
    if c.inject_fault {
        gc.add_case(faulty_case());
    }
    let report = gc.run()?;
    println!("step {:e}, tolerance {:e}, seed {}", report.step, report.tolerance, report.seed);
    for op in &report.ops {
        println!(
            "{:<40} {:>4}  max rel err {:.3e}  ({} elements, {} instances)",
            op.op,
            if op.passed { "PASS" } else { "FAIL" },
            op.max_rel_error,
            op.elements_checked,
            op.instances
        );
        if op.redrawn > 0 {
            println!("{:<40}       {} instance(s) redrawn at a kink", "", op.redrawn);
        }
    }
    let failed: Vec<&str> = report.failures().map(|o| o.op.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check failed for: {}", failed.join(", "));
    }
    Ok(())
}

fn run() -> Result<()> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let sub = sub_matches(&matches);
    match &cli.command {
        Command::Synth(c) => cmd_synth(c, sub),
        Command::Train(c) => cmd_train(c, sub),
        Command::Cv(c) => cmd_cv(c, sub),
        Command::Ablate(c) => cmd_ablate(c, sub),
        Command::Eval(c) => cmd_eval(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Gradcheck(c) => cmd_gradcheck(c),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
