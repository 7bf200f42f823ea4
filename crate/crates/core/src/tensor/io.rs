//! Binary portable pixmaps (P5/P6, maxval 255) and the `PGT1` raw tensor
//! format.
//!
//! `PGT1` layout: the four magic bytes `PGT1`, then `C`, `H`, `W` as
//! little-endian `u32`, then `C*H*W` little-endian `f32` values in
//! channel-major order.

use std::fs;
use std::path::Path;

use super::{ImageTensor, MaskTensor, Shape};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"PGT1";

const HEADER_LEN: usize = 16;

#[inline]
fn byte_to_model(v: u8) -> f64 {
    2.0 * (v as f64 / 255.0) - 1.0
}

/// Clamps to `[-1, 1]` and quantizes with round-half-up.
#[inline]
fn model_to_byte(x: f64) -> u8 {
    let scaled = 255.0 * (x.clamp(-1.0, 1.0) + 1.0) / 2.0;
    (scaled + 0.5).floor() as u8
}

struct Pnm {
    magic: [u8; 2],
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_pnm(path: &Path, bytes: &[u8]) -> Result<Pnm> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(malformed(path, "expected P5 or P6 magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed(path, "truncated or non-numeric header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(path, "header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(malformed(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(malformed(path, "zero image dimension"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed(path, "missing whitespace after maxval"));
    }
    pos += 1;
    let channels = if magic[1] == b'6' { 3 } else { 1 };
    let expected = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(malformed(
            path,
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    Ok(Pnm {
        magic,
        width,
        height,
        pixels: payload[..expected].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a P5 (1 channel) or P6 (3 channel) pixmap into model space.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let pnm = parse_pnm(path, &read(path)?)?;
    let channels = if pnm.magic[1] == b'6' { 3 } else { 1 };
    let shape = Shape::new(channels, pnm.height, pnm.width);
    let plane = shape.plane();
    // interleaved RGB -> channel-major
    Ok(ImageTensor::from_fn(shape, |i| {
        let (c, p) = (i / plane, i % plane);
        byte_to_model(pnm.pixels[p * channels + c])
    }))
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let channels = img.channels();
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidArgument(format!(
                "cannot save {c}-channel tensor as a pixmap"
            )))
        }
    };
    let mut bytes = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let plane = img.shape().plane();
    bytes.reserve(img.len());
    for p in 0..plane {
        for c in 0..channels {
            bytes.push(model_to_byte(img.data()[c * plane + p]));
        }
    }
    write(path, &bytes)
}

/// Loads a mask from a P5 pixmap: bytes `>= 128` are kept (1), others masked (0).
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskTensor> {
    let path = path.as_ref();
    let pnm = parse_pnm(path, &read(path)?)?;
    if pnm.magic[1] != b'5' {
        return Err(malformed(path, "masks must be P5 graymaps"));
    }
    let data = pnm.pixels.iter().map(|&b| (b >= 128) as u8).collect();
    MaskTensor::new(pnm.height, pnm.width, data)
}

pub fn save_mask(mask: &MaskTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    bytes.extend(mask.data().iter().map(|&v| v * 255));
    write(path.as_ref(), &bytes)
}

/// Writes a `PGT1` tensor. Values are narrowed to `f32`.
pub fn save_tensor(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let shape = img.shape();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * img.len());
    bytes.extend_from_slice(TENSOR_MAGIC);
    for dim in [shape.channels, shape.height, shape.width] {
        let dim = u32::try_from(dim).map_err(|_| Error::InvalidArgument(format!("dimension {dim} exceeds u32")))?;
        bytes.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in img.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write(path.as_ref(), &bytes)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let bad = |reason: String| Error::MalformedTensor {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * shape.len() {
        return Err(bad(format!(
            "header {shape} needs {} payload bytes, found {}",
            4 * shape.len(),
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageTensor::from_vec(shape, data).map_err(|e| bad(e.to_string()))
}
