//! Binary PPM (P6) reader/writer, maxval 255 only.
//!
//! The canonical dataset format stores every image as an 8-bit P6 file;
//! round-trips are bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl PpmImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "pixel buffer length {} does not match {}x{}x3",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(PpmImage { width, height, pixels })
    }
}

/// Parse a P6 image. Header tokens may be separated by whitespace and
/// `#` comments; the sample data must be exactly `w*h*3` bytes of 8-bit RGB.
pub fn decode(bytes: &[u8]) -> Result<PpmImage> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Format("not a binary PPM (missing P6 magic)".into()));
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "unsupported PPM maxval {maxval}; only 8-bit (255) images are accepted"
        )));
    }
    // exactly one whitespace byte separates the header from the samples
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("PPM header not terminated by whitespace".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Format("PPM dimensions overflow".into()))?;
    let data = &bytes[pos..];
    if data.len() != expected {
        return Err(Error::Format(format!(
            "PPM sample data is {} bytes, expected {} for {}x{}",
            data.len(),
            expected,
            width,
            height
        )));
    }
    PpmImage::new(width, height, data.to_vec())
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and '#' comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(Error::Format("malformed PPM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PPM header integer".into()))
}

/// Encode as P6 with the fixed header `P6\n{w} {h}\n255\n`.
pub fn encode(img: &PpmImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_file(path: &Path) -> Result<PpmImage> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, img: &PpmImage) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}
