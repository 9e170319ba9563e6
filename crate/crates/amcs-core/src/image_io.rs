//! 8-bit grayscale images and binary PGM (P5) reading/writing.
//!
//! PGM is the mandatory interchange format; the writer emits a canonical
//! header so that write/read round trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image extents must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image wants {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel values scaled to [0, 1] as an `h x w` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        )
        .expect("pixel count matches extents")
    }

    /// Quantize a `[0, 1]`-ranged tensor back to 8 bits: clamp then
    /// round half away from zero.
    pub fn from_tensor_clamped(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!(
                "expected an h x w tensor, got {:?}",
                t.shape()
            )));
        }
        let pixels = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::new(t.shape()[1], t.shape()[0], pixels)
    }
}

fn parse_header_token(
    bytes: &[u8],
    pos: &mut usize,
    path: &Path,
    what: &str,
) -> Result<usize> {
    // Skip whitespace and '#' comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, format!("missing {what} in PGM header")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad {what} in PGM header")))
}

/// Read a binary (P5) PGM file with maxval 255.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::format(path, "not a binary PGM (P5) file"));
    }
    let mut pos = 2;
    let width = parse_header_token(&bytes, &mut pos, path, "width")?;
    let height = parse_header_token(&bytes, &mut pos, path, "height")?;
    let maxval = parse_header_token(&bytes, &mut pos, path, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval}, expected 255"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing separator before raster"));
    }
    pos += 1;
    let want = width * height;
    if bytes.len() - pos < want {
        return Err(Error::format(
            path,
            format!(
                "raster truncated: want {want} bytes, have {}",
                bytes.len() - pos
            ),
        ));
    }
    GrayImage::new(width, height, bytes[pos..pos + want].to_vec())
}

/// Write a binary (P5) PGM file with a canonical header.
pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(image.pixels.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", image.width, image.height).as_bytes());
    out.extend_from_slice(&image.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = GrayImage::new(5, 3, (0u8..15).collect()).unwrap();
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(img, back);
        // Writing again produces identical bytes.
        let bytes1 = std::fs::read(&path).unwrap();
        write_pgm(&path, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn reads_comments_in_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3, 4]);
    }

    #[test]
    fn rejects_truncated_raster() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nxx").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn tensor_round_trip_quantization() {
        let img = GrayImage::new(3, 2, vec![0, 64, 128, 192, 255, 10]).unwrap();
        let t = img.to_tensor();
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = GrayImage::from_tensor_clamped(&t).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn clamping_out_of_range() {
        let t = Tensor::new(vec![1, 3], vec![-0.5, 0.5, 1.7]).unwrap();
        let img = GrayImage::from_tensor_clamped(&t).unwrap();
        assert_eq!(img.pixels(), &[0, 128, 255]);
    }
}
