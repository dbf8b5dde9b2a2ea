//! Desk-scale synthetic fire corpus with exact ground truth.
//!
//! Fire images carry one to three bright elliptical blobs with a hot core, a
//! flickering texture and a grey smoke plume above them. Distractor images
//! carry flat-coloured blobs drawn from the same warm hue range (R > G > B)
//! and no plume, so colour alone does not separate the classes.

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{DatasetManifest, SampleRecord};
use super::split::MIN_SAMPLES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub image_size: usize,
    pub fire_fraction: f64,
    pub distractor_fraction: f64,
    pub min_blob_area: usize,
    pub max_blob_area: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 400,
            image_size: 64,
            fire_fraction: 0.5,
            distractor_fraction: 0.5,
            min_blob_area: 30,
            max_blob_area: 400,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                got: self.n_images,
                min: MIN_SAMPLES,
            });
        }
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} is below 8", self.image_size));
        }
        for (name, v) in [
            ("fire_fraction", self.fire_fraction),
            ("distractor_fraction", self.distractor_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.min_blob_area == 0
            || self.min_blob_area > self.max_blob_area
            || self.max_blob_area >= self.image_size * self.image_size
        {
            return bad(format!(
                "blob areas must satisfy 1 <= {} <= {} < {}",
                self.min_blob_area,
                self.max_blob_area,
                self.image_size * self.image_size
            ));
        }
        Ok(())
    }

    fn n_fire(&self) -> usize {
        (self.n_images as f64 * self.fire_fraction).round() as usize
    }

    fn n_distractor(&self) -> usize {
        ((self.n_images - self.n_fire()) as f64 * self.distractor_fraction).round() as usize
    }
}

/// Rotated ellipse in pixel coordinates; pixel `(y, x)` belongs to it when
/// its centre `(x, y)` satisfies the ellipse inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Blob {
    /// Normalized squared radius; `<= 1` inside.
    pub fn radius2(&self, y: usize, x: usize) -> f64 {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v
    }

    pub fn support(&self, size: usize) -> Array2<u8> {
        Array2::from_shape_fn((size, size), |(y, x)| u8::from(self.radius2(y, x) <= 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Fire,
    Distractor,
    Plain,
}

/// A generated record plus the blobs it was rendered from.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub record: SampleRecord,
    pub kind: SceneKind,
    pub blobs: Vec<Blob>,
}

fn scene_kinds(config: &SynthConfig) -> Vec<SceneKind> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let n_fire = config.n_fire();
    let n_distractor = config.n_distractor();
    let mut kinds: Vec<SceneKind> = (0..config.n_images)
        .map(|i| {
            if i < n_fire {
                SceneKind::Fire
            } else if i < n_fire + n_distractor {
                SceneKind::Distractor
            } else {
                SceneKind::Plain
            }
        })
        .collect();
    kinds.shuffle(&mut rng);
    kinds
}

fn random_blob(rng: &mut ChaCha8Rng, config: &SynthConfig) -> Blob {
    let size = config.image_size as f64;
    let area = rng.random_range(config.min_blob_area as f64..=config.max_blob_area as f64);
    let aspect: f64 = rng.random_range(0.5..=2.0);
    let semi_major = (area * aspect / std::f64::consts::PI).sqrt().max(0.5);
    let semi_minor = (area / (aspect * std::f64::consts::PI)).sqrt().max(0.5);
    let margin = 2.0;
    Blob {
        cx: rng.random_range(margin..size - 1.0 - margin).round(),
        cy: rng.random_range(margin..size - 1.0 - margin).round(),
        semi_major,
        semi_minor,
        angle: rng.random_range(0.0..std::f64::consts::PI),
    }
}

/// Warm colour at position `t` in `[0, 1]` along the shared flame ramp,
/// from deep orange-red (0) to pale yellow (1).
fn warm(t: f64) -> [f64; 3] {
    [
        0.82 + 0.18 * t,
        0.28 + 0.62 * t,
        0.04 + 0.46 * t * t,
    ]
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn render_background(rng: &mut ChaCha8Rng, size: usize) -> Vec<[f64; 3]> {
    let r: f64 = rng.random_range(0.05..0.35);
    let g: f64 = rng.random_range(r..r + 0.25);
    let b = rng.random_range(g.max(0.35)..0.9);
    let top = [r, g, b];
    let shade: f64 = rng.random_range(0.55..0.95);
    let bottom = [r * shade, g * shade, b * shade * 0.9];
    let mut px = Vec::with_capacity(size * size);
    for y in 0..size {
        let t = y as f64 / (size - 1) as f64;
        let base = lerp(top, bottom, t);
        for _ in 0..size {
            let n: f64 = rng.random_range(-0.03..0.03);
            px.push([base[0] + n, base[1] + n, base[2] + n]);
        }
    }
    px
}

fn render_fire(px: &mut [[f64; 3]], rng: &mut ChaCha8Rng, size: usize, blob: &Blob) {
    let plume_x = blob.cx;
    let plume_y = blob.cy - 1.5 * blob.semi_major.max(blob.semi_minor);
    let plume_sigma = 1.2 * blob.semi_major.max(blob.semi_minor);
    let grey = [0.55, 0.55, 0.56];
    for y in 0..size {
        for x in 0..size {
            let d2 = (x as f64 - plume_x).powi(2) + (y as f64 - plume_y).powi(2);
            let k = 0.45 * (-d2 / (2.0 * plume_sigma * plume_sigma)).exp();
            let p = &mut px[y * size + x];
            *p = lerp(*p, grey, k);
        }
    }
    for y in 0..size {
        for x in 0..size {
            let r2 = blob.radius2(y, x);
            if r2 <= 1.0 {
                let flicker: f64 = rng.random_range(-0.2..0.2);
                let t = ((1.0 - r2.sqrt()) * 1.1 + flicker).clamp(0.0, 1.0);
                px[y * size + x] = warm(t);
            }
        }
    }
}

fn render_distractor(px: &mut [[f64; 3]], rng: &mut ChaCha8Rng, size: usize, blob: &Blob) {
    let color = warm(rng.random_range(0.0..1.0));
    for y in 0..size {
        for x in 0..size {
            if blob.radius2(y, x) <= 1.0 {
                px[y * size + x] = color;
            }
        }
    }
}

/// Renders record `index` of the corpus described by `config`.
pub fn generate_sample(config: &SynthConfig, index: usize, kind: SceneKind) -> SynthSample {
    let size = config.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut px = render_background(&mut rng, size);
    let n_blobs = if kind == SceneKind::Plain {
        0
    } else {
        rng.random_range(1..=3)
    };
    let blobs: Vec<Blob> = (0..n_blobs).map(|_| random_blob(&mut rng, config)).collect();
    let mut mask = Array2::<u8>::zeros((size, size));
    for blob in &blobs {
        match kind {
            SceneKind::Fire => {
                render_fire(&mut px, &mut rng, size, blob);
                mask.zip_mut_with(&blob.support(size), |m, &s| *m |= s);
            }
            SceneKind::Distractor => render_distractor(&mut px, &mut rng, size, blob),
            SceneKind::Plain => unreachable!(),
        }
    }
    // Stored images are 8-bit; quantize so in-memory and reloaded data agree.
    let image = Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        (px[y * size + x][c].clamp(0.0, 1.0) * 255.0).round() / 255.0
    });
    let label = u8::from(kind == SceneKind::Fire);
    SynthSample {
        record: SampleRecord {
            id: format!("synth_{index:05}"),
            image,
            mask,
            label,
            mask_synthesized: false,
        },
        kind,
        blobs,
    }
}

/// Generates the whole corpus together with per-record scene metadata.
pub fn generate_samples(config: &SynthConfig) -> Result<Vec<SynthSample>> {
    config.validate()?;
    Ok(scene_kinds(config)
        .into_iter()
        .enumerate()
        .map(|(i, kind)| generate_sample(config, i, kind))
        .collect())
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<DatasetManifest> {
    let records = generate_samples(config)?
        .into_iter()
        .map(|s| s.record)
        .collect();
    Ok(DatasetManifest {
        records,
        split_assignment: Default::default(),
        seed: config.seed,
    })
}
