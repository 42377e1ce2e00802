//! Dataset loading, normalization, label-ratio splits, and synthesis.
//!
//! On-disk layout: `<root>/images/<id>.<ext>` and `<root>/masks/<id>.<ext>`
//! with ext png or tif; masks are single-channel integer images. Volumes
//! (see [`volume`]) are raw arrays with a sidecar text header.
//!
//! Masks of unlabeled training samples are moved into a quarantined field
//! that refuses reads while a [`MaskQuarantineGuard`] is alive; training
//! loops hold one, so only evaluation/diagnostics can see those masks.

pub mod io;
pub mod volume;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One 2D sample with optional ground truth and provenance id.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub image: Image,
    pub mask: Option<Mask>,
    pub split: Split,
    /// Mask withheld from training (unlabeled samples); see
    /// [`ImageSample::diagnostic_mask`].
    quarantined: Option<Mask>,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, image: Image, mask: Option<Mask>, split: Split) -> Self {
        Self { id: id.into(), image, mask, split, quarantined: None }
    }

    /// Withheld ground truth, readable only while no training guard is
    /// active. Training code must never call this; the guard makes an
    /// accidental call fail loudly.
    pub fn diagnostic_mask(&self) -> Result<Option<&Mask>> {
        if quarantine_active() {
            return Err(Error::MaskQuarantined);
        }
        Ok(self.quarantined.as_ref().or(self.mask.as_ref()))
    }

    pub fn has_quarantined_mask(&self) -> bool {
        self.quarantined.is_some()
    }
}

thread_local! {
    static QUARANTINE_GUARDS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// RAII guard held by training loops: while at least one guard is alive on
/// the current thread, quarantined masks refuse to be read. Training is
/// single-threaded per run, so the guard is thread-local; evaluation on
/// other threads is unaffected.
pub struct MaskQuarantineGuard(());

impl MaskQuarantineGuard {
    pub fn activate() -> Self {
        QUARANTINE_GUARDS.with(|g| g.set(g.get() + 1));
        Self(())
    }
}

impl Drop for MaskQuarantineGuard {
    fn drop(&mut self) {
        QUARANTINE_GUARDS.with(|g| g.set(g.get() - 1));
    }
}

pub fn quarantine_active() -> bool {
    QUARANTINE_GUARDS.with(|g| g.get()) > 0
}

/// Total mapping from original class ids to training class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassRemap {
    /// Ids pass through unchanged.
    Identity,
    /// Any nonzero id becomes foreground (1).
    Binarize,
    /// Explicit table; ids absent from the table map to background (0).
    Table(BTreeMap<u8, u8>),
}

impl ClassRemap {
    pub fn apply(&self, v: u8) -> u8 {
        match self {
            ClassRemap::Identity => v,
            ClassRemap::Binarize => u8::from(v != 0),
            ClassRemap::Table(t) => t.get(&v).copied().unwrap_or(0),
        }
    }

    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        Mask::new(mask.data.mapv(|v| self.apply(v)))
    }
}

/// Which crop size applies: the semi-supervised or self-supervised pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropMode {
    Semi,
    SelfSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub class_count: usize,
    pub crop_size_semi: (usize, usize),
    pub crop_size_self: (usize, usize),
    pub class_remap: ClassRemap,
}

impl DatasetSpec {
    pub fn crop_for(&self, mode: CropMode) -> (usize, usize) {
        match mode {
            CropMode::Semi => self.crop_size_semi,
            CropMode::SelfSup => self.crop_size_self,
        }
    }
}

/// Specs of the four built-in microscopy datasets.
pub fn builtin_spec(name: &str) -> Option<DatasetSpec> {
    let spec = match name {
        "phc" => DatasetSpec {
            name: "phc".into(),
            class_count: 2,
            crop_size_semi: (512, 512),
            crop_size_self: (128, 128),
            class_remap: ClassRemap::Binarize,
        },
        "fluogfp" => DatasetSpec {
            name: "fluogfp".into(),
            class_count: 2,
            crop_size_semi: (512, 512),
            crop_size_self: (128, 128),
            class_remap: ClassRemap::Binarize,
        },
        "fluohoechst" => DatasetSpec {
            name: "fluohoechst".into(),
            class_count: 2,
            crop_size_semi: (512, 512),
            crop_size_self: (128, 128),
            class_remap: ClassRemap::Binarize,
        },
        "bigbrain" => DatasetSpec {
            name: "bigbrain".into(),
            class_count: 4,
            crop_size_semi: (600, 600),
            crop_size_self: (256, 256),
            class_remap: ClassRemap::Table(BTreeMap::from([(2, 1), (3, 2), (5, 3)])),
        },
        _ => return None,
    };
    Some(spec)
}

fn center_crop_image(image: &Image, h: usize, w: usize) -> Option<Image> {
    let (ch, ih, iw) = image.data.dim();
    if ih < h || iw < w {
        return None;
    }
    let r0 = (ih - h) / 2;
    let c0 = (iw - w) / 2;
    let mut out = Array3::zeros((ch, h, w));
    out.assign(&image.data.slice(ndarray::s![.., r0..r0 + h, c0..c0 + w]));
    Some(Image { data: out })
}

fn center_crop_mask(mask: &Mask, h: usize, w: usize) -> Option<Mask> {
    let (ih, iw) = mask.data.dim();
    if ih < h || iw < w {
        return None;
    }
    let r0 = (ih - h) / 2;
    let c0 = (iw - w) / 2;
    Some(Mask::new(mask.data.slice(ndarray::s![r0..r0 + h, c0..c0 + w]).to_owned()))
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

/// Loads all samples under `root/images` (masks from `root/masks` when
/// present), center-cropped to the spec size for `mode` and class-remapped.
pub fn load_dataset(root: &Path, spec: &DatasetSpec, mode: CropMode) -> Result<Vec<ImageSample>> {
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Err(Error::Data(format!("no samples found: {} is missing", images_dir.display())));
    }
    let mut entries: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&images_dir)? {
        let path = entry?.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else { continue };
        if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        entries.push((id, path));
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("no samples found in {}", images_dir.display())));
    }
    entries.sort();

    let (crop_h, crop_w) = spec.crop_for(mode);
    let masks_dir = root.join("masks");
    let mut samples = Vec::with_capacity(entries.len());
    let mut channels: Option<usize> = None;
    for (id, path) in entries {
        let image = io::read_image(&path)?;
        match channels {
            None => channels = Some(image.channels()),
            Some(c) if c != image.channels() => {
                return Err(Error::Data(format!(
                    "{}: channel count {} differs from the rest of the dataset ({c})",
                    path.display(),
                    image.channels()
                )))
            }
            _ => {}
        }
        let image = center_crop_image(&image, crop_h, crop_w).ok_or_else(|| {
            Error::Data(format!(
                "{}: image smaller than crop {crop_h}x{crop_w}",
                path.display()
            ))
        })?;

        let mask = IMAGE_EXTENSIONS
            .iter()
            .map(|ext| masks_dir.join(format!("{id}.{ext}")))
            .find(|p| p.is_file())
            .map(|p| io::read_mask(&p))
            .transpose()?;
        let mask = match mask {
            Some(m) => {
                let m = center_crop_mask(&m, crop_h, crop_w).ok_or_else(|| {
                    Error::Data(format!("mask for {id} smaller than crop {crop_h}x{crop_w}"))
                })?;
                let m = spec.class_remap.apply_mask(&m);
                m.check_classes(spec.class_count)
                    .map_err(|e| Error::Data(format!("mask for {id}: {e}")))?;
                Some(m)
            }
            None => None,
        };
        samples.push(ImageSample::new(id, image, mask, Split::Train));
    }
    Ok(samples)
}

/// Per-channel min/max computed from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub per_channel: Vec<(f64, f64)>,
}

impl NormStats {
    pub fn apply(&self, image: &Image) -> Image {
        let mut data = image.data.clone();
        for (ch, mut plane) in data.outer_iter_mut().enumerate() {
            let (min, max) = self.per_channel[ch];
            plane.mapv_inplace(|v| ((v - min) / (max - min)).clamp(0.0, 1.0));
        }
        Image { data }
    }

    /// Key-value text representation, persisted alongside checkpoints.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("channels = {}\n", self.per_channel.len());
        for (ch, (min, max)) in self.per_channel.iter().enumerate() {
            text.push_str(&format!("channel{ch}.min = {min:.17e}\nchannel{ch}.max = {max:.17e}\n"));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let channels: usize = map
            .get("channels")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: missing channels", path.display())))?;
        let mut per_channel = Vec::with_capacity(channels);
        for ch in 0..channels {
            let parse = |key: String| -> Result<f64> {
                map.get(&key)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Data(format!("{}: missing {key}", path.display())))
            };
            per_channel.push((parse(format!("channel{ch}.min"))?, parse(format!("channel{ch}.max"))?));
        }
        Ok(Self { per_channel })
    }
}

/// Rescales every sample into [0,1] using per-channel min/max computed over
/// all training pixels; validation/test pixels use the same stats and clamp.
pub fn normalize(
    train: Vec<ImageSample>,
    other: Vec<ImageSample>,
) -> Result<(Vec<ImageSample>, Vec<ImageSample>, NormStats)> {
    let first = train.first().ok_or_else(|| Error::Data("empty training set".into()))?;
    let channels = first.image.channels();
    let mut per_channel = vec![(f64::INFINITY, f64::NEG_INFINITY); channels];
    for sample in &train {
        for (ch, plane) in sample.image.data.outer_iter().enumerate() {
            for &v in plane.iter() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite intensity in {}", sample.id)));
                }
                let slot = &mut per_channel[ch];
                slot.0 = slot.0.min(v);
                slot.1 = slot.1.max(v);
            }
        }
    }
    for &(min, max) in &per_channel {
        if max == min {
            return Err(Error::Data("constant training data".into()));
        }
    }
    let stats = NormStats { per_channel };
    let apply = |mut samples: Vec<ImageSample>| -> Vec<ImageSample> {
        for s in samples.iter_mut() {
            s.image = stats.apply(&s.image);
        }
        samples
    };
    Ok((apply(train), apply(other), stats))
}

/// A labeled/unlabeled partition of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub ratio: f64,
    pub seed: u64,
}

/// Randomly draws `round(ratio * n)` training samples to keep their masks;
/// the rest train unlabeled. Deterministic for a fixed seed.
pub fn make_label_split(train: &[ImageSample], ratio: f64, seed: u64) -> Result<LabelSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("label ratio must be in (0, 1], got {ratio}")));
    }
    if train.len() < 2 {
        return Err(Error::Data(format!("need at least 2 training samples, got {}", train.len())));
    }
    let n_labeled = (ratio * train.len() as f64).round() as usize;
    if n_labeled == 0 {
        return Err(Error::Config(format!(
            "ratio too small for dataset: {ratio} of {} samples rounds to 0",
            train.len()
        )));
    }
    let mut ids: Vec<String> = train.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    let mut rng = rng_for(seed, &[stream::SPLIT]);
    ids.shuffle(&mut rng);
    let labeled: Vec<String> = ids[..n_labeled].to_vec();
    let unlabeled: Vec<String> = ids[n_labeled..].to_vec();
    Ok(LabelSplit { labeled, unlabeled, ratio, seed })
}

impl LabelSplit {
    /// Moves the masks of unlabeled samples into quarantine.
    pub fn quarantine(&self, samples: Vec<ImageSample>) -> Vec<ImageSample> {
        samples
            .into_iter()
            .map(|mut s| {
                if self.unlabeled.contains(&s.id) {
                    s.quarantined = s.mask.take();
                }
                s
            })
            .collect()
    }
}

/// Deterministically assigns train/val/test splits: `test_frac` of all
/// samples become test, then `val_frac` of the remainder validation.
pub fn assign_splits(
    mut samples: Vec<ImageSample>,
    test_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Vec<ImageSample> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_for(seed, &[stream::SPLIT, 0x51]);
    order.shuffle(&mut rng);
    let n_test = (test_frac * samples.len() as f64).round() as usize;
    let n_val = (val_frac * (samples.len() - n_test) as f64).round() as usize;
    for (pos, &idx) in order.iter().enumerate() {
        samples[idx].split = if pos < n_test {
            Split::Test
        } else if pos < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }
    samples
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticKind {
    /// Bright elliptical blobs on a noisy dark background, exact masks.
    Blobs,
    /// Two regions whose class is separable by mean intensity alone.
    TwoIntensity,
}

impl SyntheticKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "blobs" => Some(Self::Blobs),
            "two-intensity" | "two_intensity" => Some(Self::TwoIntensity),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Blobs => "blobs",
            Self::TwoIntensity => "two-intensity",
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, r: usize, c: usize) -> bool {
        let (dy, dx) = (r as f64 - self.cy, c as f64 - self.cx);
        let (sin, cos) = self.angle.sin_cos();
        let u = cos * dx + sin * dy;
        let v = -sin * dx + cos * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn random_ellipses(h: usize, w: usize, count: usize, min_frac: f64, max_frac: f64, rng: &mut impl Rng) -> Vec<Ellipse> {
    (0..count)
        .map(|_| Ellipse {
            cy: rng.gen_range(0.2 * h as f64..0.8 * h as f64),
            cx: rng.gen_range(0.2 * w as f64..0.8 * w as f64),
            ry: rng.gen_range(min_frac * h as f64..max_frac * h as f64),
            rx: rng.gen_range(min_frac * w as f64..max_frac * w as f64),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        })
        .collect()
}

/// Generates `n` single-channel samples with exact masks; the last 20%
/// carry the test split. Deterministic for a fixed seed.
pub fn generate_synthetic(
    kind: SyntheticKind,
    n: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<Vec<ImageSample>> {
    if n == 0 {
        return Err(Error::Config("need at least one synthetic sample".into()));
    }
    let (h, w) = size;
    let n_test = n / 5;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(seed, &[stream::SYNTH, kind as u64, i as u64]);
        let (image, mask) = match kind {
            SyntheticKind::Blobs => synth_blobs(h, w, &mut rng),
            SyntheticKind::TwoIntensity => synth_two_intensity(h, w, &mut rng),
        };
        let split = if i >= n - n_test { Split::Test } else { Split::Train };
        samples.push(ImageSample::new(
            format!("{}-{i:04}", kind.as_str()),
            image,
            Some(mask),
            split,
        ));
    }
    Ok(samples)
}

fn synth_blobs(h: usize, w: usize, rng: &mut impl Rng) -> (Image, Mask) {
    let n_blobs = rng.gen_range(2..=5);
    let blobs = random_ellipses(h, w, n_blobs, 0.06, 0.16, rng);
    let mut image = Array2::zeros((h, w));
    let mut mask = Array2::zeros((h, w));
    let blob_level: Vec<f64> = (0..n_blobs).map(|_| rng.gen_range(0.65..0.9)).collect();
    for r in 0..h {
        for c in 0..w {
            let mut v: f64 = 0.08 + rng.gen_range(-0.03..0.03);
            for (b, blob) in blobs.iter().enumerate() {
                if blob.contains(r, c) {
                    mask[(r, c)] = 1u8;
                    v = v.max(blob_level[b] + rng.gen_range(-0.05..0.05));
                }
            }
            image[(r, c)] = v.clamp(0.0, 1.0);
        }
    }
    (Image::from_gray(image), Mask::new(mask))
}

fn synth_two_intensity(h: usize, w: usize, rng: &mut impl Rng) -> (Image, Mask) {
    let regions = random_ellipses(h, w, rng.gen_range(1..=3), 0.12, 0.28, rng);
    let fg_level: f64 = rng.gen_range(0.65..0.8);
    let bg_level: f64 = rng.gen_range(0.15..0.3);
    let mut image = Array2::zeros((h, w));
    let mut mask = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let fg = regions.iter().any(|e| e.contains(r, c));
            let base = if fg { fg_level } else { bg_level };
            if fg {
                mask[(r, c)] = 1u8;
            }
            let noise = rng.gen_range(-0.05..0.05);
            image[(r, c)] = (base + noise).clamp(0.0, 1.0);
        }
    }
    (Image::from_gray(image), Mask::new(mask))
}
