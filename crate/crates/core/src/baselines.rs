//! Comparison variants: single-task segmentation, the plain multitask network,
//! the naive classification-masking rule, and the full attention model.

use std::fmt;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, MetricReport, DEFAULT_THRESHOLD};
use crate::model::{Model, ModelConfig, SegClassOutput};
use crate::train::{evaluate, train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    SegOnly,
    MultitaskPlain,
    NaiveMask,
    ProposedFull,
}

impl VariantName {
    pub const ALL: [VariantName; 4] = [
        VariantName::SegOnly,
        VariantName::MultitaskPlain,
        VariantName::NaiveMask,
        VariantName::ProposedFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::SegOnly => "seg_only",
            VariantName::MultitaskPlain => "multitask_plain",
            VariantName::NaiveMask => "naive_mask",
            VariantName::ProposedFull => "proposed_full",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: VariantName,
    pub base_config: ModelConfig,
}

impl VariantSpec {
    /// Copies `base` and sets the attention and classification switches the
    /// variant requires.
    pub fn new(name: VariantName, base: &ModelConfig) -> Self {
        let mut c = base.clone();
        let attention = name == VariantName::ProposedFull;
        c.attention_spatial = attention;
        c.attention_classgate = attention;
        c.classification_branch = name != VariantName::SegOnly;
        Self {
            name,
            base_config: c,
        }
    }

    pub fn all(base: &ModelConfig) -> Vec<Self> {
        VariantName::ALL.iter().map(|&n| Self::new(n, base)).collect()
    }

    /// Single-task segmentation trains on the segmentation loss alone.
    pub fn lambda(&self, configured: f64) -> f64 {
        if self.name == VariantName::SegOnly {
            1.0
        } else {
            configured
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda(base.lambda),
            ..base.clone()
        }
    }
}

/// Zeroes the segmentation map of images classified as non-fire
/// (`class_prob < threshold`). Outputs without a class probability pass through.
pub fn apply_naive_rule(output: &SegClassOutput, threshold: f64) -> SegClassOutput {
    match output.class_prob {
        Some(p) if p < threshold => {
            let mut out = output.clone();
            out.seg_prob = Array2::zeros(output.seg_prob.raw_dim());
            out.seg_logits = Array2::from_elem(output.seg_logits.raw_dim(), f64::NEG_INFINITY);
            out
        }
        _ => output.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "message")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: VariantName,
    pub status: RowStatus,
    pub report: Option<MetricReport>,
    pub best_epoch: Option<usize>,
    pub split_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub split_hash: String,
    pub threshold: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, name: VariantName) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == name)
    }

    /// Aligned text table with the column names of the comparison grid.
    pub fn render_text(&self) -> String {
        render_table(
            self.rows
                .iter()
                .map(|r| (r.variant.as_str(), r.report.as_ref(), &r.status)),
        )
    }
}

pub fn render_table<'a>(
    rows: impl Iterator<Item = (&'a str, Option<&'a MetricReport>, &'a RowStatus)>,
) -> String {
    let mut s = String::new();
    let [c1, c2, c3, c4] = MetricReport::COLUMNS;
    let _ = writeln!(s, "{:<18} | {c1:>9} | {c2:>13} | {c3:>9} | {c4:>16}", "Method");
    let _ = writeln!(s, "{}", "-".repeat(18 + 9 + 13 + 9 + 16 + 12));
    for (name, report, status) in rows {
        match (report, status) {
            (Some(r), _) => {
                let acc = r
                    .class_accuracy
                    .map_or_else(|| "-".to_owned(), |a| format!("{:.2}", 100.0 * a));
                let _ = writeln!(
                    s,
                    "{name:<18} | {acc:>9} | {:>13.2} | {:>9.2} | {:>16.4}",
                    100.0 * r.pixel_accuracy,
                    100.0 * r.mean_iou,
                    r.avg_consistency
                );
            }
            (None, RowStatus::Failed(msg)) => {
                let _ = writeln!(s, "{name:<18} | FAILED: {msg}");
            }
            (None, RowStatus::Ok) => {
                let _ = writeln!(s, "{name:<18} | (no report)");
            }
        }
    }
    s
}

/// Trains every requested variant on the same split and seed, then evaluates
/// each on the test split. The naive rule reuses the plain multitask network
/// (trained once if both are requested). A failing variant becomes a failed
/// row; the others are still reported.
pub fn run_ablation(
    manifest: &DatasetManifest,
    variants: &[VariantSpec],
    config: &TrainConfig,
    observer: &mut dyn FnMut(VariantName, &EpochRecord),
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::InvalidConfig("no variants requested".into()));
    }
    let test = manifest.records_in(Split::Test);
    if test.is_empty() {
        return Err(Error::InvalidConfig("test split is empty".into()));
    }
    let split_hash = manifest.split_hash();
    let mut plain_cache: Option<std::result::Result<TrainOutcome, String>> = None;
    let mut rows = Vec::with_capacity(variants.len());

    for spec in variants {
        let trained = match spec.name {
            VariantName::MultitaskPlain | VariantName::NaiveMask => {
                let plain = VariantSpec::new(VariantName::MultitaskPlain, &spec.base_config);
                plain_cache
                    .get_or_insert_with(|| {
                        train_variant(&plain, manifest, config, observer).map_err(|e| e.to_string())
                    })
                    .clone()
            }
            _ => train_variant(spec, manifest, config, observer).map_err(|e| e.to_string()),
        };
        let evaluated = trained.and_then(|outcome| {
            score(spec, &outcome.trained.model, &test, config)
                .map(|r| (r, outcome.trained.best_epoch))
                .map_err(|e| e.to_string())
        });
        rows.push(match evaluated {
            Ok((report, best)) => AblationRow {
                variant: spec.name,
                status: RowStatus::Ok,
                report: Some(report),
                best_epoch: Some(best),
                split_hash: split_hash.clone(),
            },
            Err(msg) => AblationRow {
                variant: spec.name,
                status: RowStatus::Failed(msg),
                report: None,
                best_epoch: None,
                split_hash: split_hash.clone(),
            },
        });
    }
    Ok(AblationTable {
        seed: config.seed,
        split_hash,
        threshold: DEFAULT_THRESHOLD,
        rows,
    })
}

fn train_variant(
    spec: &VariantSpec,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    observer: &mut dyn FnMut(VariantName, &EpochRecord),
) -> Result<TrainOutcome> {
    let mut model_config = spec.base_config.clone();
    model_config.seed = config.seed;
    let model = Model::new(&model_config)?;
    let name = spec.name;
    train(model, manifest, &spec.train_config(config), &mut |r| observer(name, r))
}

fn score(
    spec: &VariantSpec,
    model: &Model,
    test: &[&crate::data::SampleRecord],
    config: &TrainConfig,
) -> Result<MetricReport> {
    let (_, mut report, outputs) = evaluate(model, test, spec.lambda(config.lambda), DEFAULT_THRESHOLD)?;
    if spec.name == VariantName::NaiveMask {
        let masked: Vec<_> = outputs
            .iter()
            .map(|o| apply_naive_rule(o, DEFAULT_THRESHOLD))
            .collect();
        let records: Vec<_> = test.iter().map(|r| (*r).clone()).collect();
        report = evaluate_corpus(&masked, &records, DEFAULT_THRESHOLD)?;
    }
    if spec.name == VariantName::SegOnly {
        report.class_accuracy = None;
    }
    Ok(report)
}
