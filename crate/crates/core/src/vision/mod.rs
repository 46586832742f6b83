//! Grayscale face datasets, a small CNN recognizer, and GradCAM heatmaps.

mod cnn;
mod gradcam;
mod pgm;

pub(crate) use cnn::argmax as cnn_argmax;
pub use cnn::{train_cnn, CnnArch, CnnConfig, CnnModel, EpochStats, Forward, Layer};
pub use gradcam::{gradcam, gradcam_batch, threshold_mask, upsample_bilinear, BinaryMask, Heatmap};
pub use pgm::{read_pgm, write_pgm, Pgm};

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::tensor::TensorError;

/// Side length of the face images.
pub const FACE_SIDE: usize = 64;
/// Number of people in the face dataset.
pub const FACE_CLASSES: usize = 40;
/// Images per person; class blocks are contiguous in this size.
pub const IMAGES_PER_CLASS: usize = 10;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Pgm { path: PathBuf, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: label {label} is outside 0..{classes}")]
    Label { path: PathBuf, label: i64, classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid CNN model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, VisionError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VisionError + '_ {
    move |source| VisionError::Io { path: path.to_owned(), source }
}

/// Square single-channel images with values in [0, 1], stored row-major
/// one after another, and their class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceDataset {
    pub side: usize,
    pub classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl FaceDataset {
    pub fn new(side: usize, classes: usize, images: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if side == 0 || images.len() != labels.len() * side * side {
            return Err(VisionError::InvalidParam(format!(
                "{} pixel values do not make {} images of {side}x{side}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(VisionError::InvalidParam(format!("label {bad} outside 0..{classes}")));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VisionError::InvalidParam(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { side, classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut images = Vec::with_capacity(idx.len() * self.pixels());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Self { side: self.side, classes: self.classes, images, labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Reads a `filename,label` manifest and the 64×64 P5 files it lists,
/// relative to `dir`. A leading `filename,label` header row is skipped.
pub fn load_faces(dir: &Path, manifest: &Path) -> Result<FaceDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(std::fs::File::open(manifest).map_err(io_err(manifest))?);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(VisionError::Manifest(format!("line {}: expected filename,label", line + 1)));
        }
        if line == 0 && &rec[1] == "label" {
            continue;
        }
        let path = dir.join(&rec[0]);
        let label: i64 = rec[1]
            .parse()
            .map_err(|_| VisionError::Manifest(format!("line {}: bad label `{}`", line + 1, &rec[1])))?;
        if !(0..FACE_CLASSES as i64).contains(&label) {
            return Err(VisionError::Label { path, label, classes: FACE_CLASSES });
        }
        let pgm = read_pgm(&path)?;
        if (pgm.width, pgm.height) != (FACE_SIDE, FACE_SIDE) {
            return Err(VisionError::Pgm {
                path,
                detail: format!("expected {FACE_SIDE}x{FACE_SIDE}, found {}x{}", pgm.width, pgm.height),
            });
        }
        images.extend(pgm.pixels.iter().map(|&p| p as f32 / 255.0));
        labels.push(label as usize);
    }
    FaceDataset::new(FACE_SIDE, FACE_CLASSES, images, labels)
}

/// Size of a synthetic face set; always ten images per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceSynthConfig {
    pub classes: usize,
    pub side: usize,
    pub seed: u64,
}

impl Default for FaceSynthConfig {
    fn default() -> Self {
        Self { classes: FACE_CLASSES, side: FACE_SIDE, seed: 0 }
    }
}

struct Blob {
    x: f32,
    y: f32,
    sigma: f32,
    amp: f32,
}

/// Eyes, nose and mouth. Rows come from a few fixed choices so faces stay
/// roughly aligned, as in a cropped face set.
fn class_blobs(rng: &mut ChaCha8Rng, side: f32) -> Vec<Blob> {
    let s = side / 64.0;
    let eye_y = if rng.random_bool(0.5) { 24.0 } else { 28.0 } * s;
    let eye_dx = rng.random_range(9.0..14.0) * s;
    let eye_sigma = rng.random_range(2.5..4.0) * s;
    vec![
        Blob { x: side / 2.0 - eye_dx, y: eye_y, sigma: eye_sigma, amp: -0.45 },
        Blob { x: side / 2.0 + eye_dx, y: eye_y, sigma: eye_sigma, amp: -0.45 },
        Blob { x: side / 2.0, y: 36.0 * s, sigma: rng.random_range(2.0..3.5) * s, amp: 0.2 },
        Blob {
            x: side / 2.0,
            y: if rng.random_bool(0.5) { 44.0 } else { 48.0 } * s,
            sigma: rng.random_range(3.0..5.0) * s,
            amp: rng.random_range(-0.4..-0.2),
        },
    ]
}

/// Class-specific skin texture.
struct Texture {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    kx: f32,
    ky: f32,
    phase: f32,
    amp: f32,
}

impl Texture {
    /// Grating over an ellipse a little larger than the face, fading towards
    /// its rim; the face mask cuts it to the face.
    fn draw(rng: &mut ChaCha8Rng, side: f32) -> Self {
        let s = side / 64.0;
        let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
        let period = rng.random_range(3.0..8.0) * s;
        let k = 2.0 * std::f32::consts::PI / period;
        Self {
            cx: 32.0 * s,
            cy: 32.0 * s,
            rx: 30.0 * s,
            ry: 34.0 * s,
            kx: k * theta.cos(),
            ky: k * theta.sin(),
            phase: rng.random_range(0.0..std::f32::consts::TAU),
            amp: rng.random_range(0.15..0.3),
        }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let r = ((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2);
        if r >= 1.0 {
            return 0.0;
        }
        self.amp * (1.0 - r) * (self.kx * x + self.ky * y + self.phase).sin()
    }
}

/// Procedural stand-in for the face set. Each class has an oval face with
/// eyes, nose and mouth and a skin texture (a grating of its own
/// orientation, period and phase); each image adds a small shift,
/// brightness change, feature-strength jitter and pixel noise.
/// Class blocks of ten are contiguous.
pub fn synth_faces(seed: u64) -> FaceDataset {
    synth_faces_with(&FaceSynthConfig { seed, ..Default::default() })
}

pub fn synth_faces_with(cfg: &FaceSynthConfig) -> FaceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let side = cfg.side;
    let sf = side as f32;
    let noise = Normal::new(0.0f32, 0.03).expect("valid sigma");
    let mut images = Vec::with_capacity(cfg.classes * IMAGES_PER_CLASS * side * side);
    let mut labels = Vec::with_capacity(cfg.classes * IMAGES_PER_CLASS);
    for class in 0..cfg.classes {
        let blobs = class_blobs(&mut rng, sf);
        let face_w = rng.random_range(18.0..24.0) * sf / 64.0;
        let face_h = rng.random_range(24.0..29.0) * sf / 64.0;
        let tone = rng.random_range(0.45..0.7);
        let texture = Texture::draw(&mut rng, sf);
        for _ in 0..IMAGES_PER_CLASS {
            let dx = rng.random_range(-2.0..2.0) * sf / 64.0;
            let dy = rng.random_range(-2.0..2.0) * sf / 64.0;
            let gain = rng.random_range(0.9..1.1);
            let jitter: Vec<f32> = blobs.iter().map(|_| rng.random_range(0.85..1.15)).collect();
            let (cx, cy) = (sf / 2.0 + dx, sf / 2.0 + dy);
            for py in 0..side {
                for px in 0..side {
                    let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
                    let r = ((x - cx) / face_w).powi(2) + ((y - cy) / face_h).powi(2);
                    // soft oval edge
                    let face = 1.0 / (1.0 + ((r - 1.0) * 8.0).exp());
                    let mut v = 0.12 + face * tone;
                    for (b, j) in blobs.iter().zip(&jitter) {
                        let d2 = (x - b.x - dx).powi(2) + (y - b.y - dy).powi(2);
                        v += face * b.amp * j * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
                    }
                    v += face * texture.at(x - dx, y - dy);
                    let v = (v * gain + noise.sample(&mut rng)).clamp(0.0, 1.0);
                    // 8-bit levels, so a PGM round trip is lossless
                    images.push((v * 255.0).round() / 255.0);
                }
            }
            labels.push(class);
        }
    }
    FaceDataset::new(side, cfg.classes, images, labels).expect("generator output is valid")
}

/// Images whose index is 0 or 1 modulo ten go to the test set.
pub fn split_faces(ds: &FaceDataset) -> Result<(FaceDataset, FaceDataset)> {
    if !ds.len().is_multiple_of(IMAGES_PER_CLASS) {
        return Err(VisionError::InvalidParam(format!(
            "{} images is not a multiple of {IMAGES_PER_CLASS}",
            ds.len()
        )));
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|i| i % IMAGES_PER_CLASS < 2);
    Ok((ds.select(&train), ds.select(&test)))
}

/// Writes images as 8-bit PGM files named `{prefix}{index:03}.pgm`.
pub fn write_faces(ds: &FaceDataset, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))?;
    manifest.write_record(["filename", "label"])?;
    let mut out = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let name = format!("{prefix}{i:03}.pgm");
        let path = dir.join(&name);
        write_pgm(&path, ds.side, ds.side, ds.image(i))?;
        manifest.write_record([name, ds.labels[i].to_string()])?;
        out.push(path);
    }
    manifest.flush().map_err(io_err(dir))?;
    out.push(dir.join("manifest.csv"));
    Ok(out)
}
