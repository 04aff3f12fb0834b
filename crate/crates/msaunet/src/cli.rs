//! Subcommands of the `msaunet` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use msaunet_core::metrics::{ConfusionMatrix, MetricsReport, DEFAULT_IGNORE_INDEX};
use msaunet_core::network::{predict_mask, MsauNet};

use crate::checkpoint::load_checkpoint;
use crate::config::{config_help, OptimizerChoice, RunConfig};
use crate::data::{
    decode_mask, list_stems, load_image, load_raw_mask, preprocess, resize_mask, MaskEncoding,
};
use crate::palette::{overlay, write_indexed_png};
use crate::train::{
    evaluate, load_datasets, train, write_report, CONFIG_ECHO, FINAL_CHECKPOINT, LOSS_CSV,
    METRICS_TXT,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "msaunet", version, about = "Multi-scale attention U-Net segmentation: train, evaluate, predict, score", after_help = config_help())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, loss CSV and metrics into the output directory.
    #[command(after_help = config_help())]
    Train(TrainArgs),
    /// Evaluate a checkpoint on the configured validation data.
    #[command(after_help = config_help())]
    Eval(EvalArgs),
    /// Write an indexed-colour mask for each input image.
    #[command(after_help = config_help())]
    Predict(PredictArgs),
    /// Score a directory of predicted masks against ground truth.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run configuration; the checkpoint's embedded one when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<stem>_overlay.png` blending the image with the mask colours.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub classes: usize,
    #[arg(long, value_enum, default_value = "indexed-palette")]
    pub encoding: MaskEncoding,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    pub ignore_index: u16,
    /// Also write metrics.txt and metrics.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Applies command-line overrides on top of the file values.
pub fn effective_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(lr) = args.lr {
        config.optimizer.learning_rate = lr;
    }
    if let Some(kind) = args.optimizer {
        config.optimizer.kind = kind;
    }
    if let Some(epochs) = args.epochs {
        config.training.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        config.training.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = effective_train_config(&args)?;
    let outcome = train(&config)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "epochs={} train_loss={:.6} val_loss={:.6}",
        last.epoch, last.train_loss, last.val_loss
    );
    print!("{}", outcome.report.to_text());
    for name in [FINAL_CHECKPOINT, LOSS_CSV, METRICS_TXT, CONFIG_ECHO] {
        println!("wrote {}", outcome.out_dir.join(name).display());
    }
    Ok(())
}

/// Model from a checkpoint, shaped by `--config` when given.
fn load_model(config: Option<&Path>, checkpoint: &Path) -> Result<(MsauNet, RunConfig)> {
    let ck = load_checkpoint(checkpoint)?;
    match config {
        Some(path) => {
            let config = RunConfig::load(path)?;
            let mut net = MsauNet::new(config.model_config()?, config.training.seed)?;
            ck.restore(&mut net)?;
            Ok((net, config))
        }
        None => Ok((ck.build_model()?, ck.config)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (net, config) = load_model(args.config.as_deref(), &args.checkpoint)?;
    let data = load_datasets(&config)?;
    let report = evaluate(&net, data.validation(), Some(config.dataset.void_label))?;
    create_dir(&args.out)?;
    write_report(&args.out, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (net, config) = load_model(args.config.as_deref(), &args.checkpoint)?;
    create_dir(&args.out)?;
    let size = (config.model.input_height, config.model.input_width);
    let norm = config.normalization();
    for input in &args.input {
        let image = load_image(input)?;
        let logits = net.forward(&preprocess(&image, size, &norm))?;
        let mask = resize_mask(
            &predict_mask(&logits)?,
            (image.height() as usize, image.width() as usize),
        )?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
        let path = args.out.join(format!("{stem}.png"));
        write_indexed_png(&mask, &path)?;
        println!("wrote {}", path.display());
        if args.overlay {
            let path = args.out.join(format!("{stem}_overlay.png"));
            overlay(&image, &mask)
                .save(&path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn find_mask(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "PNG", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let pred_stems = list_stems(&args.pred)?;
    let gt_stems = list_stems(&args.gt)?;
    if let Some(s) = gt_stems.iter().find(|s| !pred_stems.contains(s)) {
        return Err(Error::Dataset(format!(
            "ground-truth mask `{s}` has no prediction"
        )));
    }
    if let Some(s) = pred_stems.iter().find(|s| !gt_stems.contains(s)) {
        return Err(Error::Dataset(format!(
            "prediction `{s}` has no ground-truth mask"
        )));
    }
    let mut cm = ConfusionMatrix::new(args.classes, Some(args.ignore_index));
    for stem in &gt_stems {
        let decode = |dir: &Path| -> Result<_> {
            let path = find_mask(dir, stem)
                .ok_or_else(|| Error::Dataset(format!("no mask file for `{stem}`")))?;
            decode_mask(
                &load_raw_mask(&path)?,
                args.encoding,
                args.classes,
                args.ignore_index,
            )
        };
        let (pred, gt) = (decode(&args.pred)?, decode(&args.gt)?);
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::Dataset(format!(
                "`{stem}`: prediction and ground truth sizes differ"
            )));
        }
        cm.accumulate(&pred, &gt)?;
    }
    let report = MetricsReport::from_confusion(&cm)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_report(out, &report)?;
    }
    print!("{}", report.to_text());
    Ok(())
}
