//! `.hevs` files and PNG images.

use std::fs;
use std::path::Path;

use evdemosaic_core::losses::DifferenceMap;
use evdemosaic_core::mosaic::{decode_hevs, encode_hevs, RawImage, RgbImage};
use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage as Rgb8};

use crate::error::{AppError, AppResult};

pub fn write_hevs(raw: &RawImage, path: &Path) -> AppResult<()> {
    let bytes = encode_hevs(raw)?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn read_hevs(path: &Path) -> AppResult<RawImage> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_hevs(&bytes).map_err(|e| AppError::from(e).at(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Reads any PNG as RGB in [0, 1]. 16-bit files keep their precision.
pub fn read_png(path: &Path) -> AppResult<RgbImage> {
    let img = image::open(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        _ => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    Ok(RgbImage::new(w, h, data)?)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub fn write_png(img: &RgbImage, path: &Path, depth: BitDepth) -> AppResult<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v, 255.0) as u8).collect();
            Rgb8::from_raw(w, h, raw).expect("buffer matches dimensions").save(path)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data.iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer matches dimensions").save(path)
        }
    };
    result.map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn write_gray8(width: usize, height: usize, pixels: Vec<u8>, path: &Path) -> AppResult<()> {
    GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| AppError::Internal("gray buffer does not match dimensions".into()))?
        .save(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

/// Difference map as 8-bit grayscale, `[0, 1] → [0, 255]`.
pub fn write_difference_map(map: &DifferenceMap, path: &Path) -> AppResult<()> {
    write_gray8(map.width, map.height, map.to_gray8(), path)
}

pub fn read_gray8(path: &Path) -> AppResult<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let g = img.to_luma8();
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

pub fn write_rgb8(width: usize, height: usize, pixels: Vec<u8>, path: &Path) -> AppResult<()> {
    Rgb8::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| AppError::Internal("RGB buffer does not match dimensions".into()))?
        .save(path)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}
