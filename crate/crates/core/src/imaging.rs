//! Single-channel images: binary masks/contours and depth maps, plus PNG I/O.
//!
//! Origin is the top-left pixel; `x` grows right and `y` grows down.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::Result;

/// Depth PNG scale: one 16-bit unit is 0.1 mm.
pub const DEPTH_PNG_MM_PER_UNIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds reads are `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Ignores out-of-bounds writes.
    #[inline]
    pub fn set_signed(&mut self, x: i64, y: i64, v: bool) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.set(x as usize, y as usize, v);
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push([x as f64, y as f64]);
                }
            }
        }
        out
    }

    pub fn union(&self, other: &BinaryImage) -> BinaryImage {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
        out
    }

    /// Bytes 0 / 255, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .expect("buffer matches dimensions");
        img.save(path)?;
        Ok(())
    }

    /// Pixels above 127 are set.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0[0] > 127).collect(),
        })
    }
}

/// Depth map in millimeters; zero marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn valid_mask(&self) -> BinaryImage {
        BinaryImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&z| z > 0.0).collect(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&z| z > 0.0).count()
    }

    /// 16-bit PNG at [`DEPTH_PNG_MM_PER_UNIT`]; values saturate at 6553.5 mm.
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u16> = self
            .data
            .iter()
            .map(|&z| (z / DEPTH_PNG_MM_PER_UNIT).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer matches dimensions");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png16(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.to_luma16();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0[0] as f64 * DEPTH_PNG_MM_PER_UNIT).collect(),
        })
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let b = BinaryImage::from_fn(13, 7, |x, y| (x * y) % 3 == 0);
        b.save_png(dir.path().join("b.png")).unwrap();
        assert_eq!(BinaryImage::load_png(dir.path().join("b.png")).unwrap(), b);

        let mut d = DepthImage::new(5, 4);
        d.set(1, 2, 123.4);
        d.set(4, 3, 250.0);
        d.save_png16(dir.path().join("d.png")).unwrap();
        let back = DepthImage::load_png16(dir.path().join("d.png")).unwrap();
        for (a, b) in back.data().iter().zip(d.data()) {
            assert!((a - b).abs() <= DEPTH_PNG_MM_PER_UNIT / 2.0 + 1e-9);
        }
    }
}
