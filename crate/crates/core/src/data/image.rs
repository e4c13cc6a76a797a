use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Single-channel image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Render(format!(
                "{} pixels do not form a {height}×{width} image",
                pixels.len()
            )));
        }
        Ok(GrayImage { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// `1 × H × W` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, self.height, self.width],
            self.pixels.iter().map(|&p| T::from_f64_lossy(f64::from(p))).collect(),
        )
        .expect("image dims are positive")
    }

    /// 8-bit quantisation used by the on-disk format.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Round-trips pixels through 8 bits so in-memory and on-disk images agree.
    pub fn quantized(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.to_bytes().into_iter().map(|b| f32::from(b) / 255.0).collect(),
        }
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize(&self, height: usize, width: usize) -> Result<GrayImage> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        if height == 0 || width == 0 {
            return Err(Error::Render(format!("cannot resize to {height}×{width}")));
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |o: usize, scale: f64, len: usize| {
            let c = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = c.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, c - i0 as f64)
        };
        let mut pixels = Vec::with_capacity(height * width);
        for oy in 0..height {
            let (y0, y1, fy) = coord(oy, sy, self.height);
            for ox in 0..width {
                let (x0, x1, fx) = coord(ox, sx, self.width);
                let top = f64::from(self.get(y0, x0)) * (1.0 - fx) + f64::from(self.get(y0, x1)) * fx;
                let bot = f64::from(self.get(y1, x0)) * (1.0 - fx) + f64::from(self.get(y1, x1)) * fx;
                pixels.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
        GrayImage::new(height, width, pixels)
    }

    /// Binary PGM (P5), 8-bit.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
        let bad = |why: &str| Error::Dataset(format!("malformed PGM: {why}"));
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("expected P5 magic"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit images are supported"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        let raster = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
        if raster.len() != width * height {
            return Err(bad(&format!("raster has {} bytes, expected {}", raster.len(), width * height)));
        }
        GrayImage::new(height, width, raster.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<GrayImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&bytes).map_err(|e| match e {
            Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(2, 3, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap().quantized();
        let back = GrayImage::decode_pgm(&img.encode_pgm()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(GrayImage::decode_pgm(b"P6\n1 1\n255\n\x00").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n").is_err());
    }

    #[test]
    fn resize_keeps_constants_and_identity() {
        let img = GrayImage::filled(16, 64, 0.3).unwrap();
        let r = img.resize(16, 48).unwrap();
        assert!(r.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-6));
        let ramp = GrayImage::new(1, 4, vec![0.0, 0.25, 0.5, 0.75]).unwrap();
        assert_eq!(ramp.resize(1, 4).unwrap(), ramp);
        let up = ramp.resize(1, 8).unwrap();
        assert_eq!(up.pixels()[0], 0.0);
        assert!((up.pixels()[7] - 0.75).abs() < 1e-6);
    }
}
