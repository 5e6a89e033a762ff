//! File output helpers: atomic writes and 8-bit grayscale PNG.

use std::fs;
use std::io;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};

use crate::tensor::Tensor;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn last_two(shape: &[usize]) -> (usize, usize) {
    let n = shape.len();
    (shape[n - 2], shape[n - 1])
}

/// Encodes the last two axes of a raw `[0, 1]` tensor as an 8-bit grayscale PNG.
pub fn encode_gray_png(raw: &Tensor<f32>) -> io::Result<Vec<u8>> {
    let (h, w) = last_two(raw.shape());
    let pixels: Vec<u8> = raw.data()[..h * w].iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer sized from shape");
    let mut out = io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(io::Error::other)?;
    Ok(out.into_inner())
}

pub fn save_gray_png(path: &Path, raw: &Tensor<f32>) -> io::Result<()> {
    write_atomic(path, &encode_gray_png(raw)?)
}

/// Reads any PNG as grayscale into a raw `[1, 1, H, W]` tensor in `[0, 1]`.
pub fn load_gray_png(path: &Path) -> io::Result<Tensor<f32>> {
    let img = image::open(path).map_err(io::Error::other)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|Luma([v])| *v as f32 / 255.0).collect();
    Tensor::new([1, 1, h as usize, w as usize], data).map_err(io::Error::other)
}
