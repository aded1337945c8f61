//! Command-line surface. Exit codes: 0 success, 1 runtime failure, 2 usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::{rand_augment, AugmentPolicy};
use crate::dataset::{preprocess, scan_dataset, split, DatasetManifest, ImageSource, SplitSpec};
use crate::error::{Error, Result};
use crate::gradcam::{grad_cam, render_overlay};
use crate::image::ImageBuffer;
use crate::seed::derive_seed;
use crate::train::{confusion_matrix, evaluate, train, HyperParams};
use crate::vit::{parameter_count, preset_config, ActivationSite, Variant, ViTConfig, ViTModel};
use crate::weights::{import_pretrained, model_from_archive, NamedTensorArchive};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "vitkit", version, about = "Vision-transformer training, evaluation and Grad-CAM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stratified train/val/test split of a class-per-directory image tree.
    Split(SplitArgs),
    /// Train (or fine-tune) a model and write metrics and the best checkpoint.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Grad-CAM heatmap and overlay for one image.
    Gradcam(GradcamArgs),
    /// Analytic parameter count of a configuration.
    Params(ParamsArgs),
    /// Write RandAugment variants of one image.
    AugmentPreview(AugmentPreviewArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "tiny")]
    pub variant: Variant,
    /// Input side length; defaults to the variant's preset.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct AugmentArgs {
    #[arg(long, default_value_t = 2)]
    pub augment_n: usize,
    #[arg(long, default_value_t = 9)]
    pub augment_m: u8,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub fractions: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub root: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[command(flatten)]
    pub augment: AugmentArgs,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub no_augment_val: bool,
    /// Archive to initialize from; the head is replaced if class counts differ.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub clip_grad: Option<f64>,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub fractions: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split manifest as written by `split` or `train`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory the manifest paths are relative to.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "tiny")]
    pub variant: Variant,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// attention-input, attention (pre-residual) or attention-residual.
    #[arg(long, default_value = "attention-input", value_parser = parse_site)]
    pub cam_site: ActivationSite,
    #[arg(long, default_value = "tiny")]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Classifier width; defaults to the variant's preset.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AugmentPreviewArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[command(flatten)]
    pub augment: AugmentArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_site(s: &str) -> std::result::Result<ActivationSite, String> {
    match s {
        "attention-input" => Ok(ActivationSite::AttentionInput),
        "attention" => Ok(ActivationSite::Attention),
        "attention-residual" => Ok(ActivationSite::AttentionResidual),
        _ => Err(format!("expected attention-input, attention or attention-residual, got {s:?}")),
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(r: Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

/// Resolved settings of one invocation, written to `run_config.json`.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ViTConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<HyperParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentPolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    fn new(subcommand: &'static str, out: &Path, seed: u64) -> Self {
        Self {
            subcommand,
            root: None,
            variant: None,
            model: None,
            hyperparams: None,
            split: None,
            augment: None,
            pretrained: None,
            checkpoint: None,
            out: out.to_path_buf(),
            seed,
        }
    }

    fn write(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("run config serializes");
        write_file(&self.out.join("run_config.json"), format!("{json}\n").as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::fsutil::write_atomic(path, bytes)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn model_config(m: &ModelArgs) -> Result<ViTConfig> {
    let mut c = preset_config(m.variant);
    if let Some(r) = m.resolution {
        c = c.with_resolution(r);
    }
    c.validate()?;
    Ok(c)
}

fn split_spec(fractions: &str, seed: u64) -> Result<SplitSpec> {
    SplitSpec::parse(fractions, derive_seed(seed, "split", 0))
}

pub fn cmd_split(a: &SplitArgs) -> CliResult<()> {
    let spec = usage(split_spec(&a.fractions, a.seed))?;
    let manifest = scan_dataset(&a.root)?;
    let (tr, va, te) = split(&manifest, &spec)?;
    create_out(&a.out)?;
    for (name, m) in [("train", &tr), ("val", &va), ("test", &te)] {
        m.save(&a.out.join(format!("{name}.tsv")))?;
    }
    println!(
        "{} entries in {} classes ({} skipped): train {}, val {}, test {}",
        manifest.entries.len(),
        manifest.labels.len(),
        manifest.skipped,
        tr.entries.len(),
        va.entries.len(),
        te.entries.len()
    );
    let mut rc = RunConfig::new("split", &a.out, a.seed);
    rc.root = Some(a.root.clone());
    rc.split = Some(spec);
    rc.write()?;
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let spec = usage(split_spec(&a.fractions, a.seed))?;
    let hp = HyperParams {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        momentum: a.momentum,
        clip_grad: a.clip_grad,
        augment_val: !a.no_augment_val,
    };
    usage(hp.validate())?;
    let policy = if a.no_augment {
        None
    } else {
        Some(usage(AugmentPolicy::new(
            a.augment.augment_n,
            a.augment.augment_m,
            derive_seed(a.seed, "augment", 0),
        ))?)
    };
    let base = usage(model_config(&a.model))?;

    let manifest = scan_dataset(&a.root)?;
    let (tr, va, te) = split(&manifest, &spec)?;
    let cfg = base.with_classes(manifest.labels.len());
    let mut model = ViTModel::new(cfg, derive_seed(a.seed, "init", 0))?;
    if let Some(path) = &a.pretrained {
        let archive = NamedTensorArchive::load(path)?;
        let (imported, report) = import_pretrained(&archive, &model, false)?;
        println!("pretrained import from {}: {}", path.display(), report.summary());
        model = imported;
    }

    create_out(&a.out)?;
    for (name, m) in [("train", &tr), ("val", &va), ("test", &te)] {
        m.save(&a.out.join(format!("{name}.tsv")))?;
    }
    let mut rc = RunConfig::new("train", &a.out, a.seed);
    rc.root = Some(a.root.clone());
    rc.variant = Some(a.model.variant);
    rc.model = Some(cfg);
    rc.hyperparams = Some(hp);
    rc.split = Some(spec);
    rc.augment = policy;
    rc.pretrained = a.pretrained.clone();
    rc.checkpoint = Some(a.out.join("best.vitw"));
    rc.write()?;

    let outcome = train(&model, &tr, &va, &hp, policy.as_ref())?;
    write_file(&a.out.join("metrics.csv"), outcome.report.to_csv().as_bytes())?;
    NamedTensorArchive::from_model(&outcome.best).save(&a.out.join("best.vitw"))?;
    let best = outcome.report.best();
    let last = outcome.report.final_epoch();
    println!(
        "best epoch {}: val acc {:.6} (train acc {:.6}); final epoch {}: val acc {:.6} (train acc {:.6})",
        best.epoch, best.val_acc, best.train_acc, last.epoch, last.val_acc, last.train_acc
    );
    if !te.entries.is_empty() {
        let (acc, loss) = evaluate(&outcome.best, &te, hp.batch_size)?;
        println!("test accuracy {acc:.6}, loss {loss:.6}");
    }
    Ok(())
}

fn load_checkpoint(path: &Path, variant: Variant) -> Result<ViTModel> {
    let archive = NamedTensorArchive::load(path)?;
    model_from_archive(&archive, preset_config(variant))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let model = load_checkpoint(&a.checkpoint, a.variant)?;
    let data = DatasetManifest::load(&a.manifest, &a.root)?;
    let (acc, loss) = evaluate(&model, &data, a.batch_size)?;
    let cm = confusion_matrix(&model, &data, a.batch_size)?;
    println!("accuracy {acc:.6}, loss {loss:.6} on {} images", data.len());
    print!("{}", cm.to_csv());
    if let Some(out) = &a.out {
        create_out(out)?;
        write_file(&out.join("confusion.csv"), cm.to_csv().as_bytes())?;
        let mut rc = RunConfig::new("eval", out, 0);
        rc.root = Some(a.root.clone());
        rc.variant = Some(a.variant);
        rc.model = Some(*model.config());
        rc.checkpoint = Some(a.checkpoint.clone());
        rc.write()?;
    }
    Ok(())
}

pub fn cmd_gradcam(a: &GradcamArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(CliError::Usage(format!("--alpha must lie in [0, 1], got {}", a.alpha)));
    }
    let model = load_checkpoint(&a.checkpoint, a.variant)?;
    let image = ImageBuffer::open(&a.image)?;
    let input = preprocess(&image, model.config().image_resolution)?;
    let (map, class) = grad_cam(&model, &input, a.class, a.cam_site)?;
    let overlay = render_overlay(&map, &image, a.alpha)?;
    create_out(&a.out)?;
    map.save_pgm(&a.out.join("heatmap.pgm"))?;
    overlay.save_pnm(&a.out.join("overlay.ppm"))?;
    println!("class {class}");
    let mut rc = RunConfig::new("gradcam", &a.out, 0);
    rc.variant = Some(a.variant);
    rc.model = Some(*model.config());
    rc.checkpoint = Some(a.checkpoint.clone());
    rc.write()?;
    Ok(())
}

pub fn cmd_params(a: &ParamsArgs) -> CliResult<u64> {
    let mut cfg = usage(model_config(&a.model))?;
    if let Some(k) = a.classes {
        cfg = cfg.with_classes(k);
        usage(cfg.validate())?;
    }
    let n = parameter_count(&cfg);
    println!(
        "{}: {n} parameters ({:.1}M) at {}px, {} classes",
        a.model.variant,
        n as f64 / 1e6,
        cfg.image_resolution,
        cfg.num_classes
    );
    Ok(n)
}

pub fn cmd_augment_preview(a: &AugmentPreviewArgs) -> CliResult<()> {
    let policy = usage(AugmentPolicy::new(
        a.augment.augment_n,
        a.augment.augment_m,
        derive_seed(a.seed, "augment", 0),
    ))?;
    let image = ImageBuffer::open(&a.image)?;
    create_out(&a.out)?;
    for i in 0..a.count {
        rand_augment(&image, &policy, i as u64)?.save_pnm(&a.out.join(format!("aug_{i}.ppm")))?;
    }
    println!("wrote {} variants to {}", a.count, a.out.display());
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcam(a) => cmd_gradcam(a),
        Command::Params(a) => cmd_params(a).map(|_| ()),
        Command::AugmentPreview(a) => cmd_augment_preview(a),
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
