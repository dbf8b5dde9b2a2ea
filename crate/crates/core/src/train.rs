//! Joint training loop: Adam with decoupled weight decay, per-epoch validation,
//! and model selection on the total validation loss.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use ndarray::{Array3, ArrayD, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::loss::{
    bce, bce_logit_grad, bce_scalar, bce_scalar_logit_grad, check_lambda, LossBreakdown,
};
use crate::metrics::{evaluate_corpus, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{checkpoint, Model, SegClassOutput};
use crate::nn::{Grads, ParamStore};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

/// Learning-rate schedule; the default keeps the rate constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, gamma } => base * gamma.powi((epoch / every.max(1)) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub input_size: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub schedule: LrSchedule,
    /// Random horizontal flips of training samples.
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-5,
            lambda: 0.6,
            epochs: 60,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            input_size: 64,
            checkpoint_dir: None,
            schedule: LrSchedule::Constant,
            hflip: false,
        }
    }
}

impl TrainConfig {
    /// Settings for full-resolution real corpora.
    pub fn real_data_preset() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            input_size: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        check_lambda(self.lambda)?;
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        Ok(())
    }
}

/// Adam with weight decay applied directly to the parameters
/// (`p <- p - lr * wd * p`) rather than folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    decay: Vec<bool>,
    t: i32,
}

impl Adam {
    /// Decay applies to convolution and linear weights, not to biases or the
    /// gate strength.
    pub fn new(store: &ParamStore) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.iter().map(|(_, _, t)| ArrayD::zeros(t.raw_dim())).collect(),
            v: store.iter().map(|(_, _, t)| ArrayD::zeros(t.raw_dim())).collect(),
            decay: store.iter().map(|(_, n, _)| n.ends_with(".weight")).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, p) in store.tensors_mut().iter_mut().enumerate() {
            let g = &grads.tensors()[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if self.decay[i] && weight_decay > 0.0 {
                let keep = 1.0 - lr * weight_decay;
                p.mapv_inplace(|x| x * keep);
            }
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_metrics: MetricReport,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub history: Vec<EpochRecord>,
}

fn flip_horizontal(record: &SampleRecord) -> SampleRecord {
    let mut r = record.clone();
    r.image.invert_axis(Axis(1));
    r.image = r.image.as_standard_layout().into_owned();
    r.mask.invert_axis(Axis(1));
    r.mask = r.mask.as_standard_layout().into_owned();
    r
}

/// Loss of one sample; accumulates `weight`-scaled gradients of the total into `grads`.
pub fn sample_loss_and_grad(
    model: &Model,
    record: &SampleRecord,
    lambda: f64,
    weight: f64,
    grads: &mut Grads,
) -> Result<LossBreakdown> {
    let (out, cache) = model.forward_train(&record.image)?;
    let mask = record.mask_f64();
    let label = f64::from(record.label);
    let seg_loss = bce(&out.seg_prob, &mask)?;
    let class_loss = out.class_prob.map_or(0.0, |p| bce_scalar(p, label));
    let dseg = bce_logit_grad(&out.seg_prob, &mask) * (lambda * weight);
    let dclass = out
        .class_prob
        .map_or(0.0, |p| (1.0 - lambda) * weight * bce_scalar_logit_grad(p, label));
    model.backward(&cache, &dseg, dclass, grads);
    LossBreakdown::new(seg_loss, class_loss, lambda)
}

/// Loss and metrics of `model` over `records`, plus the raw outputs.
pub fn evaluate(
    model: &Model,
    records: &[&SampleRecord],
    lambda: f64,
    threshold: f64,
) -> Result<(LossBreakdown, MetricReport, Vec<SegClassOutput>)> {
    let mut losses = Vec::with_capacity(records.len());
    let mut outputs = Vec::with_capacity(records.len());
    for r in records {
        let out = model.forward(&r.image)?;
        let seg = bce(&out.seg_prob, &r.mask_f64())?;
        let class = out.class_prob.map_or(0.0, |p| bce_scalar(p, f64::from(r.label)));
        losses.push(LossBreakdown::new(seg, class, lambda)?);
        outputs.push(out);
    }
    let owned: Vec<SampleRecord> = records.iter().map(|r| (*r).clone()).collect();
    let report = evaluate_corpus(&outputs, &owned, threshold)?;
    Ok((LossBreakdown::mean(&losses, lambda)?, report, outputs))
}

/// Forward pass over each image in order; the model is not modified.
pub fn predict(model: &Model, images: &[Array3<f64>]) -> Result<Vec<SegClassOutput>> {
    images.iter().map(|img| model.forward(img)).collect()
}

pub fn train(
    model: Model,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.config().input_size != config.input_size {
        return Err(Error::InvalidConfig(format!(
            "model input size {} differs from training input size {}",
            model.config().input_size,
            config.input_size
        )));
    }
    let train_set = manifest.records_in(Split::Train);
    let val_set = manifest.records_in(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "need non-empty train and val splits (have {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    for r in train_set.iter().chain(&val_set) {
        if r.image.dim() != (config.input_size, config.input_size, 3) {
            return Err(Error::Shape(format!(
                "record `{}` is {:?}, expected {}x{}x3",
                r.id,
                r.image.dim(),
                config.input_size,
                config.input_size
            )));
        }
    }

    let mut history_file = match &config.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(HISTORY_FILE);
            Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    let mut model = model;
    let mut adam = Adam::new(model.params());
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 0..config.epochs {
        let lr = config.schedule.lr_at(config.lr, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(order.len());
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = model.params().zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let flipped;
                let record = if config.hflip && rng.random_bool(0.5) {
                    flipped = flip_horizontal(train_set[i]);
                    &flipped
                } else {
                    train_set[i]
                };
                let l = sample_loss_and_grad(&model, record, config.lambda, weight, &mut grads)?;
                if !l.total.is_finite() {
                    return Err(Error::Divergence {
                        epoch: epoch + 1,
                        batch: batch_idx,
                    });
                }
                epoch_losses.push(l);
            }
            if !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: batch_idx,
                });
            }
            adam.step(model.params_mut(), &grads, lr, config.weight_decay);
        }

        let train_loss = LossBreakdown::mean(&epoch_losses, config.lambda)?;
        let (val_loss, val_metrics, _) =
            evaluate(&model, &val_set, config.lambda, DEFAULT_THRESHOLD)?;
        if !val_loss.total.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train: train_loss,
            val: val_loss,
            val_metrics,
            alpha: model.alpha(),
        };
        if best.as_ref().is_none_or(|(l, _, _)| val_loss.total < *l) {
            best = Some((val_loss.total, epoch + 1, model.params().clone()));
            if let Some(dir) = &config.checkpoint_dir {
                checkpoint::save(&model, &dir.join(BEST_CHECKPOINT))?;
            }
        }
        if let Some((file, path)) = history_file.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(file, "{line}").map_err(|e| Error::io(&*path, e))?;
        }
        observer(&record);
        history.push(record);
    }

    let (best_val_loss, best_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(TrainOutcome {
        trained: TrainedModel {
            model,
            best_epoch,
            best_val_loss,
        },
        history,
    })
}
