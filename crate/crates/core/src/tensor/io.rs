//! Raster file formats: binary P6 PPM and the raw `FTEN` tensor dump.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

const FTEN_MAGIC: &[u8; 4] = b"FTEN";
const FTEN_VERSION: u32 = 1;

/// Reads a binary P6 pixmap with maxval 255. Values are scaled to `[0, 1]`.
pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut header = HeaderReader { bytes, pos: 0 };
    let magic = header.token()?;
    if magic != b"P6" {
        return Err(Error::MalformedHeader(format!(
            "expected magic P6, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => {
            return Err(Error::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }

    let (width, height) = (width as usize, height as usize);
    let expected = width * height * 3;
    let payload = &bytes[header.pos..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Image::new(height, width, 3, data)
}

/// Writes a binary P6 pixmap. Values are clamped to `[0, 1]` and quantized
/// with `round(v * 255)` (half away from zero).
///
/// Single-channel images are replicated to gray RGB.
pub fn save_ppm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.shape();
    if c != 1 && c != 3 {
        return Err(Error::InvalidDimensions(format!(
            "PPM needs 1 or 3 channels, image has {c}"
        )));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for px in img.data().chunks_exact(c) {
        if c == 1 {
            let b = quantize(px[0]);
            out.extend_from_slice(&[b, b, b]);
        } else {
            out.extend(px.iter().map(|&v| quantize(v)));
        }
    }
    Ok(out)
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    // f64::round is half-away-from-zero, and the clamp keeps us non-negative.
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&b) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "bad {what} field {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

/// Raw tensor dump: `"FTEN"`, u32 version, u32 H, u32 W, u32 C, then
/// `H*W*C` little-endian f64 values.
pub fn save_ften(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ften(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_ften(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.shape();
    let mut out = Vec::with_capacity(20 + img.len() * 8);
    out.extend_from_slice(FTEN_MAGIC);
    for v in [FTEN_VERSION, h as u32, w as u32, c as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_ften(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ften(&bytes)
}

pub fn decode_ften(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            expected: 20,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != FTEN_MAGIC {
        return Err(Error::MalformedHeader("expected FTEN magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FTEN_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported FTEN version {version}"
        )));
    }
    let (h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expected = h * w * c * 8;
    let payload = &bytes[20..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Image::new(h, w, c, data)
}
