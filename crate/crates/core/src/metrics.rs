//! Segmentation, classification and consistency metrics.

use std::fmt;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::model::SegClassOutput;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `M[i, j] = 1` where `prob[i, j] >= threshold`.
pub fn binarize(seg_prob: &Array2<f64>, threshold: f64) -> Array2<u8> {
    seg_prob.mapv(|p| u8::from(p >= threshold))
}

/// Pixel-level confusion counts, fire being the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.dim(),
                gt.dim()
            )));
        }
        let mut c = Self::default();
        Zip::from(pred).and(gt).for_each(|&p, &g| match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        });
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// IoU of the fire class; 1 when neither mask has fire.
    pub fn iou_fire(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp + self.fn_)
    }

    /// IoU of the background class; 1 when neither mask has background.
    pub fn iou_background(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp + self.fn_)
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `(iou_fire, iou_background)` of two binary masks.
pub fn iou_pair(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<(f64, f64)> {
    let c = ConfusionCounts::from_masks(pred, gt)?;
    Ok((c.iou_fire(), c.iou_background()))
}

/// 1 when the label inferred from the mask (any fire pixel) equals `label`.
pub fn consistency(pred_mask: &Array2<u8>, label: u8) -> u8 {
    let inferred = pred_mask.iter().any(|&m| m != 0);
    u8::from(inferred == (label != 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pixel_accuracy: f64,
    pub iou_fire: f64,
    pub iou_background: f64,
    pub mean_iou: f64,
    pub class_accuracy: Option<f64>,
    pub avg_consistency: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 4] =
        ["Accuracy", "mean Accuracy", "mean IOU", "Avg. Consistency"];

    pub fn perfect() -> Self {
        Self {
            pixel_accuracy: 1.0,
            iou_fire: 1.0,
            iou_background: 1.0,
            mean_iou: 1.0,
            class_accuracy: Some(1.0),
            avg_consistency: 1.0,
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let class = self
            .class_accuracy
            .map_or_else(|| "-".to_owned(), |a| format!("{a:.4}"));
        write!(
            f,
            "class acc {class} | pixel acc {:.4} | IoU fire {:.4} | IoU bg {:.4} | mIoU {:.4} | consistency {:.4}",
            self.pixel_accuracy, self.iou_fire, self.iou_background, self.mean_iou, self.avg_consistency
        )
    }
}

/// Aggregates a corpus: pixel accuracy is averaged per image, IoU comes from
/// confusion counts summed over all images, and classification accuracy is
/// absent if any output lacks a class probability.
pub fn evaluate_corpus(
    outputs: &[SegClassOutput],
    records: &[SampleRecord],
    threshold: f64,
) -> Result<MetricReport> {
    if outputs.len() != records.len() {
        return Err(Error::Shape(format!(
            "{} outputs for {} records",
            outputs.len(),
            records.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Shape("cannot evaluate an empty corpus".into()));
    }
    let n = outputs.len() as f64;
    let mut global = ConfusionCounts::default();
    let mut pixel_acc = 0.0;
    let mut consistent = 0u64;
    let mut class_hits = Some(0u64);
    for (out, rec) in outputs.iter().zip(records) {
        let pred = binarize(&out.seg_prob, threshold);
        let counts = ConfusionCounts::from_masks(&pred, &rec.mask)?;
        pixel_acc += counts.accuracy();
        global.add(&counts);
        consistent += u64::from(consistency(&pred, rec.label));
        class_hits = match (class_hits, out.class_prob) {
            (Some(h), Some(p)) => Some(h + u64::from(u8::from(p >= 0.5) == rec.label)),
            _ => None,
        };
    }
    let iou_fire = global.iou_fire();
    let iou_background = global.iou_background();
    Ok(MetricReport {
        pixel_accuracy: pixel_acc / n,
        iou_fire,
        iou_background,
        mean_iou: (iou_fire + iou_background) / 2.0,
        class_accuracy: class_hits.map(|h| h as f64 / n),
        avg_consistency: consistent as f64 / n,
    })
}
