//! Confusion-matrix evaluation: pixel accuracy, mean IoU, frequency-weighted
//! IoU and Dice.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::{ClassMask, Error, Result};

/// Conventional void label excluded from evaluation.
pub const DEFAULT_IGNORE_INDEX: u16 = 255;

/// `counts[n * N + m]` is the number of pixels of true class `n` predicted as `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    ignore_index: Option<u16>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize, ignore_index: Option<u16>) -> Self {
        Self {
            num_classes,
            ignore_index,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            ignore_index: None,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_index(&self) -> Option<u16> {
        self.ignore_index
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `T_n`: ground-truth pixels of class `n`.
    pub fn row_sum(&self, n: usize) -> u64 {
        self.counts[n * self.num_classes..(n + 1) * self.num_classes]
            .iter()
            .sum()
    }

    /// Pixels predicted as class `n`.
    pub fn col_sum(&self, n: usize) -> u64 {
        (0..self.num_classes).map(|m| self.get(m, n)).sum()
    }

    /// Tallies one prediction against its ground truth. Ground-truth pixels
    /// equal to the ignore index or the mask's void label are skipped.
    pub fn accumulate(&mut self, pred: &ClassMask, gt: &ClassMask) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let n = self.num_classes;
        for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
            if Some(t) == self.ignore_index || gt.is_void(t) {
                continue;
            }
            if t as usize >= n {
                return Err(Error::LabelOutOfRange {
                    label: t,
                    num_classes: n,
                });
            }
            if p as usize >= n {
                return Err(Error::LabelOutOfRange {
                    label: p,
                    num_classes: n,
                });
            }
            self.counts[t as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    /// Elementwise sum of two matrices over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn non_empty(&self) -> Result<()> {
        if self.total() == 0 {
            Err(Error::EmptyMatrix)
        } else {
            Ok(())
        }
    }

    /// IoU of class `n`, or `None` when the class is neither present nor predicted.
    pub fn class_iou(&self, n: usize) -> Option<f64> {
        let tp = self.get(n, n);
        let union = self.row_sum(n) + self.col_sum(n) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Dice of class `n`, or `None` when the class is neither present nor predicted.
    pub fn class_dice(&self, n: usize) -> Option<f64> {
        let area = self.row_sum(n) + self.col_sum(n);
        (area > 0).then(|| 2.0 * self.get(n, n) as f64 / area as f64)
    }

    /// Classes present in the ground truth or the prediction.
    pub fn valid_classes(&self) -> usize {
        (0..self.num_classes)
            .filter(|&n| self.class_iou(n).is_some())
            .count()
    }
}

pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let diag: u64 = (0..cm.num_classes).map(|n| cm.get(n, n)).sum();
    Ok(diag as f64 / cm.total() as f64)
}

/// Mean IoU over valid classes.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let ious: Vec<f64> = (0..cm.num_classes)
        .filter_map(|n| cm.class_iou(n))
        .collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Mean IoU divided by the full class count; absent classes count as 0.
pub fn mean_iou_strict(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let sum: f64 = (0..cm.num_classes).filter_map(|n| cm.class_iou(n)).sum();
    Ok(sum / cm.num_classes as f64)
}

/// IoU weighted by ground-truth class frequency.
pub fn fw_iou(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let weighted: f64 = (0..cm.num_classes)
        .filter_map(|n| cm.class_iou(n).map(|iou| cm.row_sum(n) as f64 * iou))
        .sum();
    Ok(weighted / cm.total() as f64)
}

/// Mean over valid classes of `2 p_nn / (T_n + predicted_n)`.
pub fn dice_coefficient(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let d: Vec<f64> = (0..cm.num_classes)
        .filter_map(|n| cm.class_dice(n))
        .collect();
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub fw_iou: f64,
    pub dice: f64,
    /// `None` for classes neither present nor predicted.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_dice: Vec<Option<f64>>,
    pub valid_classes: usize,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            pixel_accuracy: pixel_accuracy(cm)?,
            mean_iou: mean_iou(cm)?,
            fw_iou: fw_iou(cm)?,
            dice: dice_coefficient(cm)?,
            per_class_iou: (0..cm.num_classes).map(|n| cm.class_iou(n)).collect(),
            per_class_dice: (0..cm.num_classes).map(|n| cm.class_dice(n)).collect(),
            valid_classes: cm.valid_classes(),
        })
    }

    /// `key=value` lines with six fractional digits; absent classes print `nan`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pixel_accuracy={:.6}", self.pixel_accuracy);
        let _ = writeln!(s, "mean_iou={:.6}", self.mean_iou);
        let _ = writeln!(s, "fw_iou={:.6}", self.fw_iou);
        let _ = writeln!(s, "dice={:.6}", self.dice);
        let _ = writeln!(s, "valid_classes={}", self.valid_classes);
        for (n, iou) in self.per_class_iou.iter().enumerate() {
            let _ = writeln!(s, "iou_class_{n}={}", fmt_opt(*iou));
        }
        for (n, d) in self.per_class_dice.iter().enumerate() {
            let _ = writeln!(s, "dice_class_{n}={}", fmt_opt(*d));
        }
        s
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("pixel_accuracy,mean_iou,fw_iou,dice,valid_classes");
        for n in 0..self.per_class_iou.len() {
            let _ = write!(s, ",iou_class_{n}");
        }
        for n in 0..self.per_class_dice.len() {
            let _ = write!(s, ",dice_class_{n}");
        }
        s
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{:.6},{:.6},{:.6},{:.6},{}",
            self.pixel_accuracy, self.mean_iou, self.fw_iou, self.dice, self.valid_classes
        );
        for iou in &self.per_class_iou {
            let _ = write!(s, ",{}", fmt_opt(*iou));
        }
        for d in &self.per_class_dice {
            let _ = write!(s, ",{}", fmt_opt(*d));
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::from("nan"),
    }
}
