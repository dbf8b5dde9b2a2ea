use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One image with its binary fire mask and image-level label.
///
/// Ingestion always materializes a mask: non-fire images stored without one
/// receive an all-zero mask at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `(H, W, 3)`, values in `[0, 1]`.
    pub image: Array3<f64>,
    /// `(H, W)`, values in `{0, 1}`.
    pub mask: Array2<u8>,
    pub label: u8,
    /// True when the mask was synthesized rather than read from a file.
    pub mask_synthesized: bool,
}

impl SampleRecord {
    pub fn fire_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Checks that the mask matches the image size and agrees with the label.
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image.dim();
        let (mh, mw) = self.mask.dim();
        if (h, w) != (mh, mw) || c != 3 {
            return Err(Error::SizeMismatch {
                id: self.id.clone(),
                image_h: h,
                image_w: w,
                mask_h: mh,
                mask_w: mw,
            });
        }
        let fire = self.fire_pixels();
        if self.label > 1 || (fire > 0) != (self.label == 1) {
            return Err(Error::LabelMaskInconsistency {
                id: self.id.clone(),
                label: self.label,
                fire_pixels: fire,
            });
        }
        Ok(())
    }

    pub fn mask_f64(&self) -> Array2<f64> {
        self.mask.mapv(f64::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn fraction(self) -> f64 {
        match self {
            Split::Train => 0.6,
            Split::Val | Split::Test => 0.2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// Records plus their split assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub split_assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

/// File reference to one record inside a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordRef {
    pub id: String,
    pub image: String,
    pub mask: Option<String>,
    pub label: u8,
}

/// Serialized form of a [`DatasetManifest`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub records: Vec<RecordRef>,
    pub split_assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_in(&self, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| self.split_assignment.get(&r.id) == Some(&split))
            .collect()
    }

    pub fn ids_in(&self, split: Split) -> Vec<&str> {
        self.records_in(split).iter().map(|r| r.id.as_str()).collect()
    }

    /// SHA-256 over the sorted `(id, split)` pairs; equal hashes mean equal splits.
    pub fn split_hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, split) in &self.split_assignment {
            h.update(id.as_bytes());
            h.update([0]);
            h.update(split.to_string().as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn to_file(&self) -> ManifestFile {
        ManifestFile {
            records: self
                .records
                .iter()
                .map(|r| RecordRef {
                    id: r.id.clone(),
                    image: format!("images/{}.png", r.id),
                    mask: (!r.mask_synthesized).then(|| format!("masks/{}.png", r.id)),
                    label: r.label,
                })
                .collect(),
            split_assignment: self.split_assignment.clone(),
            seed: self.seed,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
