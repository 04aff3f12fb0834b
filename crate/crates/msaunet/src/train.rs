//! Training loop, evaluation and run artifacts.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use msaunet_core::loss::{
    batch_compound_loss, batch_compound_loss_with_grad, CompoundLossConfig, LossBreakdown,
};
use msaunet_core::metrics::{ConfusionMatrix, MetricsReport};
use msaunet_core::network::{predict_mask, MsauNet};
use msaunet_core::nn::NormMode;
use msaunet_core::optim::Optimizer;
use msaunet_core::{ClassMask, FeatureMap, Parameterized};

use crate::checkpoint::save_checkpoint;
use crate::config::{DatasetSource, RunConfig};
use crate::data::{batches, synthetic_samples, DatasetLayout, Sample};
use crate::{Error, Result};

pub const LOSS_CSV_HEADER: &str = "epoch,train_loss,val_loss,l_iou,l_dice,l_wce";
pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const METRICS_TXT: &str = "metrics.txt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFIG_ECHO: &str = "config.toml";

/// Images evaluated per forward pass during evaluation.
const EVAL_CHUNK: usize = 8;

/// One row of the loss log. Component losses are training means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub l_iou: f64,
    pub l_dice: f64,
    pub l_wce: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.l_iou, self.l_dice, self.l_wce
        )
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<Sample>,
    /// Empty when the run validates on the training set.
    pub val: Vec<Sample>,
}

impl Datasets {
    /// Validation samples, falling back to the training set.
    pub fn validation(&self) -> &[Sample] {
        if self.val.is_empty() {
            &self.train
        } else {
            &self.val
        }
    }
}

pub fn load_datasets(config: &RunConfig) -> Result<Datasets> {
    let d = &config.dataset;
    let n = config.model.num_classes;
    let norm = config.normalization();
    let size = (config.model.input_height, config.model.input_width);
    match d.source {
        DatasetSource::Synthetic => {
            if size.0 != size.1 {
                return Err(Error::Config(
                    "synthetic data needs a square input size".into(),
                ));
            }
            let val = if d.synthetic_val == 0 {
                Vec::new()
            } else {
                synthetic_samples(
                    d.synthetic_val,
                    size.0,
                    n,
                    d.synthetic_seed.wrapping_add(1),
                    &norm,
                )?
            };
            Ok(Datasets {
                train: synthetic_samples(d.synthetic_train, size.0, n, d.synthetic_seed, &norm)?,
                val,
            })
        }
        DatasetSource::Directory => {
            let layout = |split_list: Option<PathBuf>| DatasetLayout {
                root: d.root.clone(),
                image_dir: d.image_dir.clone(),
                mask_dir: d.mask_dir.clone(),
                split_list,
                mask_encoding: d.mask_encoding,
                num_classes: n,
                void_label: d.void_label,
            };
            let train = layout(d.train_list.clone()).load(size, &norm)?;
            let val = match &d.val_list {
                Some(list) => layout(Some(list.clone())).load(size, &norm)?,
                None => Vec::new(),
            };
            Ok(Datasets { train, val })
        }
    }
}

fn check_finite(b: &LossBreakdown, epoch: usize, step: usize) -> Result<()> {
    for (component, v) in [
        ("l_iou", b.iou),
        ("l_dice", b.dice),
        ("l_wce", b.wce),
        ("total loss", b.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component,
                epoch,
                step,
            });
        }
    }
    Ok(())
}

/// Owns the weights and optimizer state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: MsauNet,
    optimizer: Optimizer,
    loss: CompoundLossConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let net = MsauNet::new(config.model_config()?, config.training.seed)?;
        Self::with_model(net, config)
    }

    pub fn with_model(net: MsauNet, config: &RunConfig) -> Result<Self> {
        let optimizer =
            Optimizer::new(config.optimizer.kind.into(), config.optimizer.learning_rate)?;
        Ok(Self {
            net,
            optimizer,
            loss: config.loss_config(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn loss_config(&self) -> &CompoundLossConfig {
        &self.loss
    }

    /// Forward, loss, backward and one optimizer step. Returns the loss
    /// measured before the update.
    pub fn step(
        &mut self,
        images: &[FeatureMap],
        masks: &[ClassMask],
        epoch: usize,
    ) -> Result<LossBreakdown> {
        let cache = self.net.forward_batch(images, NormMode::Batch)?;
        let (loss, grads) = batch_compound_loss_with_grad(cache.logits(), masks, &self.loss)?;
        check_finite(&loss, epoch, self.steps + 1)?;
        self.net.zero_grad();
        self.net.backward(images, &cache, &grads);
        let mut finite = true;
        self.net.visit("", &mut |_, p| {
            finite &= p.grad.iter().all(|g| g.is_finite())
        });
        if !finite {
            return Err(Error::NonFinite {
                component: "gradient",
                epoch,
                step: self.steps + 1,
            });
        }
        self.optimizer.step(&mut self.net)?;
        self.net.update_running_stats(&cache);
        self.steps += 1;
        Ok(loss)
    }
}

/// Mean compound loss with running batch-norm statistics.
pub fn mean_loss(
    net: &MsauNet,
    samples: &[Sample],
    loss: &CompoundLossConfig,
) -> Result<LossBreakdown> {
    let mut total = LossBreakdown::default();
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images: Vec<FeatureMap> = chunk.iter().map(|s| s.image.clone()).collect();
        let masks: Vec<ClassMask> = chunk.iter().map(|s| s.mask.clone()).collect();
        let cache = net.forward_batch(&images, NormMode::Running)?;
        let b = batch_compound_loss(cache.logits(), &masks, loss)?;
        let w = chunk.len() as f64 / samples.len() as f64;
        total.total += w * b.total;
        total.iou += w * b.iou;
        total.dice += w * b.dice;
        total.wce += w * b.wce;
    }
    Ok(total)
}

/// Forward, argmax and confusion-matrix accumulation over every sample.
pub fn evaluate(
    net: &MsauNet,
    samples: &[Sample],
    ignore_index: Option<u16>,
) -> Result<MetricsReport> {
    let mut cm = ConfusionMatrix::new(net.num_classes(), ignore_index);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images: Vec<FeatureMap> = chunk.iter().map(|s| s.image.clone()).collect();
        let cache = net.forward_batch(&images, NormMode::Running)?;
        for (logits, s) in cache.logits().iter().zip(chunk) {
            cm.accumulate(&predict_mask(logits)?, &s.mask)?;
        }
    }
    Ok(MetricsReport::from_confusion(&cm)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MsauNet,
    pub history: Vec<EpochLog>,
    /// Metrics on the validation samples (the training set when there are none).
    pub report: MetricsReport,
    pub out_dir: PathBuf,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    write_file(&dir.join(METRICS_TXT), &report.to_text())?;
    write_file(
        &dir.join(METRICS_CSV),
        &format!("{}\n{}\n", report.csv_header(), report.csv_row()),
    )
}

/// Runs a full training job, writing the effective config, the loss CSV,
/// checkpoints and the final metrics into `config.output.dir`.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = load_datasets(config)?;
    train_on(config, &data)
}

pub fn train_on(config: &RunConfig, data: &Datasets) -> Result<TrainOutcome> {
    let out = &config.output.dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(CONFIG_ECHO), &config.to_toml())?;
    let csv_path = out.join(LOSS_CSV);
    let mut csv = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(csv, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;

    let mut trainer = Trainer::new(config)?;
    let t = &config.training;
    let mut history = Vec::with_capacity(t.epochs);
    for epoch in 1..=t.epochs {
        let mut sums = LossBreakdown::default();
        let mut seen = 0usize;
        for batch in batches(&data.train, t.batch_size, t.seed, epoch as u64)? {
            let b = trainer.step(&batch.images, &batch.masks, epoch)?;
            let n = batch.images.len() as f64;
            sums.total += n * b.total;
            sums.iou += n * b.iou;
            sums.dice += n * b.dice;
            sums.wce += n * b.wce;
            seen += batch.images.len();
        }
        let val = mean_loss(&trainer.net, data.validation(), trainer.loss_config())?;
        check_finite(&val, epoch, trainer.steps())?;
        let s = seen as f64;
        let log = EpochLog {
            epoch,
            train_loss: sums.total / s,
            val_loss: val.total,
            l_iou: sums.iou / s,
            l_dice: sums.dice / s,
            l_wce: sums.wce / s,
        };
        writeln!(csv, "{}", log.csv_row()).map_err(|e| Error::io(&csv_path, e))?;
        history.push(log);
        if t.checkpoint_every > 0 && epoch % t.checkpoint_every == 0 && epoch != t.epochs {
            save_checkpoint(
                &trainer.net,
                config,
                epoch,
                &out.join(format!("checkpoint_epoch_{epoch:04}.ckpt")),
            )?;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    save_checkpoint(&trainer.net, config, t.epochs, &out.join(FINAL_CHECKPOINT))?;
    let report = evaluate(
        &trainer.net,
        data.validation(),
        Some(config.dataset.void_label),
    )?;
    write_report(out, &report)?;
    Ok(TrainOutcome {
        net: trainer.net,
        history,
        report,
        out_dir: out.clone(),
    })
}
