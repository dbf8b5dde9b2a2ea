//! On-disk corpus layout:
//!
//! ```text
//! root/images/<id>.png   RGB, 8 bits per channel
//! root/masks/<id>.png    single channel, 0 or 255 (optional for label 0)
//! root/labels.csv        header `id,label`, label in {0, 1}
//! root/manifest.json     optional split assignment
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3};

use super::record::{DatasetManifest, ManifestFile, SampleRecord};
use crate::error::{Error, Result};

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_owned(),
            message: other.to_string(),
        },
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

pub fn rgb_to_array(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

pub fn array_to_rgb(a: &Array3<f64>) -> RgbImage {
    let (h, w, _) = a.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (a[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn mask_to_gray(m: &Array2<u8>) -> GrayImage {
    let (h, w) = m.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if m[[y as usize, x as usize]] != 0 { 255 } else { 0 }])
    })
}

fn gray_to_mask(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        u8::from(img.get_pixel(x as u32, y as u32)[0] > 127)
    })
}

pub fn save_png(img: &impl ImageSave, path: &Path) -> Result<()> {
    img.save_png(path)
}

/// Thin seam so RGB and grayscale buffers share one save path.
pub trait ImageSave {
    fn save_png(&self, path: &Path) -> Result<()>;
}

impl ImageSave for RgbImage {
    fn save_png(&self, path: &Path) -> Result<()> {
        self.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }
}

impl ImageSave for GrayImage {
    fn save_png(&self, path: &Path) -> Result<()> {
        self.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, u8>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    let mut labels = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, line, e))?;
        let bad = |message: String| Error::LabelFile {
            path: path.to_owned(),
            line,
            message,
        };
        if row.len() != 2 {
            return Err(bad(format!("expected 2 columns, found {}", row.len())));
        }
        let label = match row[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(format!("label must be 0 or 1, found `{other}`"))),
        };
        labels.insert(row[0].trim().to_owned(), label);
    }
    Ok(labels)
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::LabelFile {
            path: path.to_owned(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_owned(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image under `root/images`, pairing it with its mask and label.
///
/// With `resize = Some(n)` images are resampled bilinearly and masks by
/// nearest neighbour to `n × n`. If `root/manifest.json` exists its split
/// assignment and seed are carried over.
pub fn load_corpus(root: &Path, resize: Option<usize>) -> Result<DatasetManifest> {
    let labels = read_labels(&root.join(LABELS_FILE))?;
    let images = list_images(&root.join("images"))?;
    let mut records = Vec::with_capacity(images.len());
    for (id, image_path) in &images {
        let label = *labels.get(id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
        let mut rgb = read_rgb(image_path)?;
        let mask_path = root.join("masks").join(format!("{id}.png"));
        let mut gray = if mask_path.exists() {
            Some(
                image::open(&mask_path)
                    .map_err(|e| image_err(&mask_path, e))?
                    .to_luma8(),
            )
        } else if label == 0 {
            None
        } else {
            return Err(Error::io(
                &mask_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "fire image without a mask"),
            ));
        };
        if let Some(g) = &gray {
            if g.dimensions() != rgb.dimensions() {
                return Err(Error::SizeMismatch {
                    id: id.clone(),
                    image_h: rgb.height() as usize,
                    image_w: rgb.width() as usize,
                    mask_h: g.height() as usize,
                    mask_w: g.width() as usize,
                });
            }
        }
        if let Some(n) = resize {
            let n = n as u32;
            if rgb.dimensions() != (n, n) {
                rgb = image::imageops::resize(&rgb, n, n, FilterType::Triangle);
                gray = gray.map(|g| image::imageops::resize(&g, n, n, FilterType::Nearest));
            }
        }
        let image = rgb_to_array(&rgb);
        let (h, w, _) = image.dim();
        let (mask, mask_synthesized) = match &gray {
            Some(g) => (gray_to_mask(g), false),
            None => (Array2::zeros((h, w)), true),
        };
        let record = SampleRecord {
            id: id.clone(),
            image,
            mask,
            label,
            mask_synthesized,
        };
        record.validate()?;
        records.push(record);
    }
    for id in labels.keys() {
        if images.binary_search_by(|(i, _)| i.cmp(id)).is_err() {
            let path = root.join("images").join(format!("{id}.png"));
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "labelled image is missing"),
            ));
        }
    }

    let mut manifest = DatasetManifest {
        records,
        ..Default::default()
    };
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let file: ManifestFile = serde_json::from_str(&text)?;
        manifest.seed = file.seed;
        manifest.split_assignment = file
            .split_assignment
            .into_iter()
            .filter(|(id, _)| labels.contains_key(id))
            .collect();
    }
    Ok(manifest)
}

/// Writes records in the layout [`load_corpus`] reads, plus `manifest.json`.
/// Synthesized masks are not written.
pub fn write_corpus(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    for dir in [root.join("images"), root.join("masks")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let labels_path = root.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| csv_err(&labels_path, 0, e))?;
    w.write_record(["id", "label"])
        .map_err(|e| csv_err(&labels_path, 1, e))?;
    for (i, r) in manifest.records.iter().enumerate() {
        w.write_record([r.id.as_str(), &r.label.to_string()])
            .map_err(|e| csv_err(&labels_path, i + 2, e))?;
        array_to_rgb(&r.image).save_png(&root.join("images").join(format!("{}.png", r.id)))?;
        if !r.mask_synthesized {
            mask_to_gray(&r.mask).save_png(&root.join("masks").join(format!("{}.png", r.id)))?;
        }
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;
    manifest.save_json(&root.join(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: u8, with_mask: bool, size: usize) -> SampleRecord {
        let mut mask = Array2::zeros((size, size));
        if label == 1 {
            mask[[1, 2]] = 1;
            mask[[3, 3]] = 1;
        }
        SampleRecord {
            id: id.into(),
            image: Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
                ((y * 13 + x * 7 + c * 50) % 256) as f64 / 255.0
            }),
            mask,
            label,
            mask_synthesized: !with_mask,
        }
    }

    #[test]
    fn ten_image_corpus_synthesizes_missing_masks() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::default();
        for i in 0..6 {
            m.records.push(record(&format!("fire{i}"), 1, true, 8));
        }
        for i in 0..4 {
            m.records.push(record(&format!("none{i}"), 0, false, 8));
        }
        write_corpus(dir.path(), &m).unwrap();
        assert_eq!(fs::read_dir(dir.path().join("masks")).unwrap().count(), 6);

        let loaded = load_corpus(dir.path(), None).unwrap();
        assert_eq!(loaded.len(), 10);
        let synthesized: Vec<_> = loaded.records.iter().filter(|r| r.mask_synthesized).collect();
        assert_eq!(synthesized.len(), 4);
        assert!(synthesized.iter().all(|r| r.fire_pixels() == 0 && r.mask.dim() == (8, 8)));
        let original: std::collections::BTreeMap<_, _> =
            m.records.iter().map(|r| (r.id.clone(), r)).collect();
        for r in &loaded.records {
            let o = original[&r.id];
            assert_eq!(r.mask, o.mask);
            assert_eq!(r.label, o.label);
            for (a, b) in r.image.iter().zip(o.image.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record("a", 1, true, 64)],
            ..Default::default()
        };
        write_corpus(dir.path(), &m).unwrap();
        mask_to_gray(&Array2::zeros((32, 32)))
            .save_png(&dir.path().join("masks/a.png"))
            .unwrap();
        let err = load_corpus(dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { .. }), "{err}");
        assert!(err.to_string().contains("size mismatch"));
    }

    #[test]
    fn empty_mask_with_fire_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record("a", 1, true, 8)],
            ..Default::default()
        };
        write_corpus(dir.path(), &m).unwrap();
        mask_to_gray(&Array2::zeros((8, 8)))
            .save_png(&dir.path().join("masks/a.png"))
            .unwrap();
        let err = load_corpus(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("label/mask inconsistency"), "{err}");
    }

    #[test]
    fn missing_label_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record("a", 0, false, 8), record("b", 0, false, 8)],
            ..Default::default()
        };
        write_corpus(dir.path(), &m).unwrap();
        fs::write(dir.path().join(LABELS_FILE), "id,label\na,0\n").unwrap();
        match load_corpus(dir.path(), None) {
            Err(Error::MissingLabel(id)) => assert_eq!(id, "b"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreadable_image_reports_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record("a", 0, false, 8)],
            ..Default::default()
        };
        write_corpus(dir.path(), &m).unwrap();
        fs::write(dir.path().join("images/a.png"), b"not a png").unwrap();
        let err = load_corpus(dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("a.png"), "{err}");
    }

    #[test]
    fn resize_applies_to_image_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            records: vec![record("a", 1, true, 16)],
            ..Default::default()
        };
        write_corpus(dir.path(), &m).unwrap();
        let loaded = load_corpus(dir.path(), Some(8)).unwrap();
        assert_eq!(loaded.records[0].image.dim(), (8, 8, 3));
        assert_eq!(loaded.records[0].mask.dim(), (8, 8));
    }
}
