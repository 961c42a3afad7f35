//! On-disk formats: 8-bit sRGB PNG frames, binary float maps, masks,
//! datasets and checkpoints.

pub mod checkpoint;
pub mod dataset;

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::real::{lit, Real};

pub const GAMMA: f64 = 2.2;
pub const DEPTH_MAGIC: &[u8; 4] = b"SGSD";
pub const NORMAL_MAGIC: &[u8; 4] = b"SGSN";

fn decode_table() -> &'static [f32; 256] {
    static TABLE: OnceLock<[f32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|i| (i as f64 / 255.0).powf(GAMMA) as f32))
}

/// Linear intensity of an 8-bit sRGB code.
pub fn srgb_to_linear(v: u8) -> f32 {
    decode_table()[v as usize]
}

/// Nearest 8-bit code for a linear intensity, clamped to `[0, 1]`.
pub fn linear_to_srgb(v: f64) -> u8 {
    if !(v > 0.0) {
        return 0;
    }
    (255.0 * v.min(1.0).powf(1.0 / GAMMA)).round() as u8
}

pub fn write_png<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::DimensionMismatch(
            "PNG export needs three channels".into(),
        ));
    }
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| linear_to_srgb(v.as_f64()))
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Unit normals as an 8-bit map, `(n + 1) / 2` per channel without gamma.
pub fn write_normal_png<T: Real>(path: &Path, normals: &Image<T>) -> Result<()> {
    if normals.channels != 3 {
        return Err(Error::DimensionMismatch(
            "normal export needs three channels".into(),
        ));
    }
    let bytes: Vec<u8> = normals
        .data
        .iter()
        .map(|v| (127.5 * (v.as_f64().clamp(-1.0, 1.0) + 1.0)).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(normals.width as u32, normals.height as u32, bytes)
        .expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| lit(srgb_to_linear(v) as f64))
        .collect();
    Image::from_vec(w as usize, h as usize, 3, data)
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let bytes = m.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = image::GrayImage::from_raw(m.width as u32, m.height as u32, bytes)
        .expect("buffer sized from mask");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Nonzero pixels are occluded.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask {
        width: w as usize,
        height: h as usize,
        data: img.into_raw().into_iter().map(|v| v != 0).collect(),
    })
}

fn write_floats<T: Real>(path: &Path, magic: &[u8; 4], img: &Image<T>) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 4 * img.data.len());
    bytes.extend_from_slice(magic);
    bytes.extend_from_slice(&(img.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(img.height as u32).to_le_bytes());
    for v in &img.data {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_floats<T: Real>(path: &Path, magic: &[u8; 4], channels: usize) -> Result<Image<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(Error::format(
            path,
            format!("missing {} header", String::from_utf8_lossy(magic)),
        ));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = w * h * channels;
    if bytes.len() != 12 + 4 * n {
        return Err(Error::format(
            path,
            format!(
                "{w}x{h} map needs {} payload bytes, found {}",
                4 * n,
                bytes.len() - 12
            ),
        ));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Image::from_vec(w, h, channels, data)
}

/// Single-channel little-endian f32 depth map.
pub fn write_depth<T: Real>(path: &Path, depth: &Image<T>) -> Result<()> {
    if depth.channels != 1 {
        return Err(Error::DimensionMismatch(
            "depth map must have one channel".into(),
        ));
    }
    write_floats(path, DEPTH_MAGIC, depth)
}

pub fn read_depth<T: Real>(path: &Path) -> Result<Image<T>> {
    read_floats(path, DEPTH_MAGIC, 1)
}

/// Three-channel normal map in the same layout as depth.
pub fn write_normals<T: Real>(path: &Path, normals: &Image<T>) -> Result<()> {
    if normals.channels != 3 {
        return Err(Error::DimensionMismatch(
            "normal map must have three channels".into(),
        ));
    }
    write_floats(path, NORMAL_MAGIC, normals)
}

pub fn read_normals<T: Real>(path: &Path) -> Result<Image<T>> {
    read_floats(path, NORMAL_MAGIC, 3)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
