//! Image and mask file IO (png/tif).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads an image as raw intensities (no normalization): 8-bit data spans
/// 0..255, 16-bit 0..65535.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = open(path)?;
    let data = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((1, h as usize, w as usize), |(_, r, c)| {
                buf.get_pixel(c as u32, r as u32).0[0] as f64
            })
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((1, h as usize, w as usize), |(_, r, c)| {
                buf.get_pixel(c as u32, r as u32).0[0] as f64
            })
        }
        other => {
            let buf = other.to_rgb8();
            let (w, h) = buf.dimensions();
            Array3::from_shape_fn((3, h as usize, w as usize), |(ch, r, c)| {
                buf.get_pixel(c as u32, r as u32).0[ch] as f64
            })
        }
    };
    Image::new(data)
}

/// Reads a single-channel integer mask.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?;
    let data: Array2<u8> = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                buf.get_pixel(c as u32, r as u32).0[0]
            })
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let mut out = Array2::zeros((h as usize, w as usize));
            for ((r, c), slot) in out.indexed_iter_mut() {
                let v = buf.get_pixel(c as u32, r as u32).0[0];
                if v > u8::MAX as u16 {
                    return Err(Error::Image {
                        path: path.to_path_buf(),
                        reason: format!("mask value {v} exceeds 255"),
                    });
                }
                *slot = v as u8;
            }
            out
        }
        _ => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                reason: "mask must be a single-channel integer image".into(),
            })
        }
    };
    Ok(Mask::new(data))
}

/// Writes a [0,1] image as 8-bit grayscale png (first channel).
pub fn write_gray_png(image: &Image, path: &Path) -> Result<()> {
    let (h, w) = (image.height(), image.width());
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        let v = image.data[(0, r as usize, c as usize)].clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// Writes a mask as 8-bit grayscale png with raw class ids.
pub fn write_mask_png(mask: &Mask, path: &Path) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let buf = ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        Luma([mask.data[(r as usize, c as usize)]])
    });
    buf.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}
