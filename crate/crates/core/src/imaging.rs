//! In-memory RGB images plus PNG and raw depth-map file I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with `f64` channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, color: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![color; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        self.data[y as usize * self.width as usize + x as usize] = c;
    }

    /// Loads an 8- or 16-bit PNG (or any format the decoder knows). Alpha is
    /// composited over `background`.
    pub fn load(path: &Path, background: [f64; 3]) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        // 16-bit keeps 8-bit inputs exact: v * 257 / 65535 == v / 255
        let rgba = img.to_rgba16();
        let (width, height) = rgba.dimensions();
        let data = rgba
            .pixels()
            .map(|p| {
                let a = p[3] as f64 / 65535.0;
                [0, 1, 2].map(|c| p[c] as f64 / 65535.0 * a + background[c] * (1.0 - a))
            })
            .collect();
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width, self.height, |x, y| {
            let c = self.get(x, y);
            image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resampling to a new size (pixel-center aligned).
    pub fn resize(&self, width: u32, height: u32) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf = image::Rgb32FImage::from_fn(self.width, self.height, |x, y| {
            image::Rgb(self.get(x, y).map(|v| v as f32))
        });
        let out = image::imageops::resize(&buf, width, height, image::imageops::FilterType::Triangle);
        RgbImage {
            width,
            height,
            data: out.pixels().map(|p| [0, 1, 2].map(|c| p[c] as f64)).collect(),
        }
    }
}

/// Grayscale map stored alongside renders (depth, opacity).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

const DEPTH_MAGIC: &[u8; 8] = b"VXSDEPTH";
const DEPTH_VERSION: u32 = 1;
const DEPTH_HEADER: usize = 8 + 4 + 4 + 4;

impl ScalarMap {
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Writes the raw map: 8-byte magic, then little-endian `u32` version,
    /// width and height, then `width * height` little-endian `f64` values.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(DEPTH_HEADER + self.data.len() * 8);
        buf.extend_from_slice(DEPTH_MAGIC);
        buf.extend_from_slice(&DEPTH_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        if buf.len() < DEPTH_HEADER || &buf[..8] != DEPTH_MAGIC {
            return Err(Error::format(path, "not a raw depth file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != DEPTH_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: DEPTH_VERSION,
            });
        }
        let (width, height) = (u32_at(12), u32_at(16));
        let n = width as usize * height as usize;
        if buf.len() != DEPTH_HEADER + n * 8 {
            return Err(Error::format(
                path,
                format!("expected {} bytes of samples, found {}", n * 8, buf.len() - DEPTH_HEADER),
            ));
        }
        let data = buf[DEPTH_HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ScalarMap {
            width,
            height,
            data,
        })
    }

    /// 16-bit grayscale PNG, linearly scaled so `max_value` maps to 65535.
    pub fn save_png16(&self, path: &Path, max_value: f64) -> Result<()> {
        let scale = if max_value > 0.0 { 65535.0 / max_value } else { 0.0 };
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(self.width, self.height, |x, y| {
            image::Luma([(self.get(x, y) * scale).clamp(0.0, 65535.0).round() as u16])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_depth_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.depth");
        let m = ScalarMap {
            width: 3,
            height: 2,
            data: vec![0.1, 1.0 / 3.0, 2.5, f64::MIN_POSITIVE, 7.0, 0.0],
        };
        m.save_raw(&p).unwrap();
        assert_eq!(ScalarMap::load_raw(&p).unwrap(), m);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(ScalarMap::load_raw(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        let img = RgbImage::from_fn(4, 3, |x, y| [x as f64 / 3.0, y as f64 / 2.0, 0.5]);
        img.save_png(&p).unwrap();
        let back = RgbImage::load(&p, [1.0; 3]).unwrap();
        assert_eq!((back.width, back.height), (4, 3));
        for (a, b) in img.data.iter().zip(&back.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }
}
