//! 3D volumes: raw-array IO with a sidecar text header, and 2D training
//! slices extracted at random 3D orientations.
//!
//! Header format (`<name>.hdr` next to `<name>.raw`):
//!
//! ```text
//! shape = Z Y X
//! dtype = f32 | f64 | u8 | u16
//! byte_order = little
//! ```
//!
//! Slicing rotates the sampling frame by a uniform random 3D rotation,
//! reads the central plane (trilinear for intensities, nearest for labels),
//! and center-crops. The identity rotation with parity-matched crop sizes
//! reproduces the axis-aligned central plane bit-exactly.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::rng::{rng_for, stream};

use super::{ImageSample, Split};

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeDtype {
    F32,
    F64,
    U8,
    U16,
}

impl VolumeDtype {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            "u8" => Ok(Self::U8),
            "u16" => Ok(Self::U16),
            other => Err(Error::Data(format!("unsupported volume dtype {other}"))),
        }
    }

    fn size(&self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
            Self::U8 => 1,
            Self::U16 => 2,
        }
    }
}

fn header_path(base: &Path) -> PathBuf {
    base.with_extension("hdr")
}

fn raw_path(base: &Path) -> PathBuf {
    base.with_extension("raw")
}

fn parse_header(path: &Path) -> Result<((usize, usize, usize), VolumeDtype)> {
    let text = std::fs::read_to_string(path)?;
    let mut shape = None;
    let mut dtype = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        match key.trim() {
            "shape" => {
                let dims: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::Data(format!("bad shape token {t}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 3 {
                    return Err(Error::Data(format!("shape needs 3 dims, got {}", dims.len())));
                }
                shape = Some((dims[0], dims[1], dims[2]));
            }
            "dtype" => dtype = Some(VolumeDtype::parse(value.trim())?),
            "byte_order" => {
                if value.trim() != "little" {
                    return Err(Error::Data("only little-endian volumes are supported".into()));
                }
            }
            _ => {}
        }
    }
    let shape = shape.ok_or_else(|| Error::Data(format!("{}: missing shape", path.display())))?;
    let dtype = dtype.ok_or_else(|| Error::Data(format!("{}: missing dtype", path.display())))?;
    Ok((shape, dtype))
}

/// Reads `<base>.raw` + `<base>.hdr` into a (Z, Y, X) array of f64.
pub fn read_volume(base: &Path) -> Result<Array3<f64>> {
    let ((z, y, x), dtype) = parse_header(&header_path(base))?;
    let raw = std::fs::read(raw_path(base))?;
    let expected = z * y * x * dtype.size();
    if raw.len() != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} bytes for shape {z}x{y}x{x}, found {}",
            raw_path(base).display(),
            raw.len()
        )));
    }
    let values: Vec<f64> = match dtype {
        VolumeDtype::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        VolumeDtype::F64 => raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        VolumeDtype::U8 => raw.iter().map(|&b| b as f64).collect(),
        VolumeDtype::U16 => raw
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")) as f64)
            .collect(),
    };
    Array3::from_shape_vec((z, y, x), values).map_err(|e| Error::Data(e.to_string()))
}

/// Writes a volume as f32 raw data plus header.
pub fn write_volume(volume: &Array3<f64>, base: &Path) -> Result<()> {
    let (z, y, x) = volume.dim();
    if let Some(parent) = base.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(
        header_path(base),
        format!("shape = {z} {y} {x}\ndtype = f32\nbyte_order = little\n"),
    )?;
    let mut raw = Vec::with_capacity(volume.len() * 4);
    for &v in volume.iter() {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(raw_path(base), raw)?;
    Ok(())
}

/// Writes a label volume as u8 raw data plus header.
pub fn write_label_volume(labels: &Array3<u8>, base: &Path) -> Result<()> {
    let (z, y, x) = labels.dim();
    if let Some(parent) = base.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(
        header_path(base),
        format!("shape = {z} {y} {x}\ndtype = u8\nbyte_order = little\n"),
    )?;
    std::fs::write(raw_path(base), labels.as_slice().expect("contiguous"))?;
    Ok(())
}

pub fn read_label_volume(base: &Path) -> Result<Array3<u8>> {
    let vol = read_volume(base)?;
    let mut out = Array3::zeros(vol.dim());
    for (slot, &v) in out.iter_mut().zip(vol.iter()) {
        if v < 0.0 || v > u8::MAX as f64 || v.fract() != 0.0 {
            return Err(Error::Data(format!("label volume value {v} is not a u8 class id")));
        }
        *slot = v as u8;
    }
    Ok(out)
}

/// A 3D rotation as an orthonormal basis of the slicing plane.
#[derive(Debug, Clone, Copy)]
pub struct Rotation3 {
    /// Rows are the rotated x, y, z axes.
    pub axes: [[f64; 3]; 3],
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self { axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Uniform random rotation from a normalized quaternion.
    pub fn random(rng: &mut impl Rng) -> Self {
        let q: [f64; 4] = {
            let mut q = [0.0; 4];
            for slot in q.iter_mut() {
                *slot = rng.sample(StandardNormal);
            }
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            for slot in q.iter_mut() {
                *slot /= norm;
            }
            q
        };
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
        Self {
            axes: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn trilinear(volume: &Array3<f64>, z: f64, y: f64, x: f64) -> f64 {
    let (dz, dy, dx) = volume.dim();
    let (z, y, x) = (snap(z), snap(y), snap(x));
    if z < 0.0 || y < 0.0 || x < 0.0 || z > (dz - 1) as f64 || y > (dy - 1) as f64 || x > (dx - 1) as f64 {
        return 0.0;
    }
    let (z0, y0, x0) = (z.floor(), y.floor(), x.floor());
    let (fz, fy, fx) = (z - z0, y - y0, x - x0);
    let (z0, y0, x0) = (z0 as usize, y0 as usize, x0 as usize);
    let z1 = if fz > 0.0 { z0 + 1 } else { z0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let mut acc = 0.0;
    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        if wz == 0.0 {
            continue;
        }
        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wz * wy * wx * volume[(zi, yi, xi)];
            }
        }
    }
    acc
}

fn nearest_label(labels: &Array3<u8>, z: f64, y: f64, x: f64) -> u8 {
    let (dz, dy, dx) = labels.dim();
    let (z, y, x) = (z.round(), y.round(), x.round());
    if z < 0.0 || y < 0.0 || x < 0.0 || z > (dz - 1) as f64 || y > (dy - 1) as f64 || x > (dx - 1) as f64 {
        return 0;
    }
    labels[(z as usize, y as usize, x as usize)]
}

/// Extracts the central plane of the volume viewed under `rotation`,
/// center-cropped to `crop`. The paired label volume, when given, is
/// sampled at identical positions with nearest-neighbor interpolation.
pub fn slice_with_rotation(
    volume: &Array3<f64>,
    labels: Option<&Array3<u8>>,
    rotation: &Rotation3,
    crop: (usize, usize),
) -> Result<(Image, Option<Mask>)> {
    let (dz, dy, dx) = volume.dim();
    let (h, w) = crop;
    // The crop must fit inside the inscribed sphere so an arbitrary
    // orientation never samples outside the volume.
    let circumradius = (((h - 1) as f64 / 2.0).powi(2) + ((w - 1) as f64 / 2.0).powi(2)).sqrt();
    let inradius = (dz.min(dy).min(dx) - 1) as f64 / 2.0;
    if circumradius > inradius {
        return Err(Error::Data(format!(
            "crop {h}x{w} is larger than the feasible slice of a {dz}x{dy}x{dx} volume"
        )));
    }
    let center = ((dz as f64 - 1.0) / 2.0, (dy as f64 - 1.0) / 2.0, (dx as f64 - 1.0) / 2.0);
    let mut plane = Array2::zeros((h, w));
    let mut mask = labels.map(|_| Array2::zeros((h, w)));
    for r in 0..h {
        for c in 0..w {
            let u = c as f64 - (w as f64 - 1.0) / 2.0;
            let v = r as f64 - (h as f64 - 1.0) / 2.0;
            // Point = center + u * x_axis + v * y_axis (central plane: no z offset).
            let ax = rotation.axes[0];
            let ay = rotation.axes[1];
            let z = center.0 + u * ax[2] + v * ay[2];
            let y = center.1 + u * ax[1] + v * ay[1];
            let x = center.2 + u * ax[0] + v * ay[0];
            plane[(r, c)] = trilinear(volume, z, y, x);
            if let (Some(m), Some(l)) = (mask.as_mut(), labels) {
                m[(r, c)] = nearest_label(l, z, y, x);
            }
        }
    }
    Ok((Image::from_gray(plane), mask.map(Mask::new)))
}

/// `count` random-orientation slices; deterministic for a fixed seed.
pub fn slice_volume(
    volume: &Array3<f64>,
    labels: Option<&Array3<u8>>,
    count: usize,
    seed: u64,
    crop: (usize, usize),
) -> Result<Vec<ImageSample>> {
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, &[stream::VOLUME, i as u64]);
        let rotation = Rotation3::random(&mut rng);
        let (image, mask) = slice_with_rotation(volume, labels, &rotation, crop)?;
        samples.push(ImageSample::new(format!("slice-{i:05}"), image, mask, Split::Train));
    }
    Ok(samples)
}
