//! Bit-exact binary codecs for slices and masks.
//!
//! ```text
//! image: "MCICIMG1" | H: u32 LE | W: u32 LE | H*W f32 LE (row-major)
//! mask:  "MCICMSK1" | H: u32 LE | W: u32 LE | H*W u8 in {0,1,2}
//! ```

use std::fs;
use std::path::Path;

use super::image::{ImageSlice, LabelMask};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 8] = b"MCICIMG1";
pub const MASK_MAGIC: &[u8; 8] = b"MCICMSK1";
const HEADER_LEN: usize = 16;

fn header(magic: &[u8; 8], height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out
}

fn parse_header(bytes: &[u8], magic: &[u8; 8], what: &str) -> Result<(usize, usize)> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::BadMagic(what.to_string()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{what}: header")));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    Ok((h, w))
}

pub fn encode_image(image: &ImageSlice) -> Vec<u8> {
    let mut out = header(IMAGE_MAGIC, image.height(), image.width());
    out.reserve(image.values().len() * 4);
    for v in image.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageSlice> {
    let (h, w) = parse_header(bytes, IMAGE_MAGIC, "image")?;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Truncated("image dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != need {
        return Err(Error::Truncated(format!(
            "image {h}x{w}: expected {need} payload bytes, found {}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageSlice::new(h, w, values)
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = header(MASK_MAGIC, mask.height(), mask.width());
    out.extend_from_slice(mask.labels());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMask> {
    let (h, w) = parse_header(bytes, MASK_MAGIC, "mask")?;
    let need = h
        .checked_mul(w)
        .ok_or_else(|| Error::Truncated("mask dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != need {
        return Err(Error::Truncated(format!(
            "mask {h}x{w}: expected {need} payload bytes, found {}",
            payload.len()
        )));
    }
    LabelMask::new(h, w, payload.to_vec())
}

pub fn read_image(path: &Path) -> Result<ImageSlice> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| with_path(e, path))
}

pub fn write_image(path: &Path, image: &ImageSlice) -> Result<()> {
    fs::write(path, encode_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes).map_err(|e| with_path(e, path))
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::BadMagic(_) => Error::BadMagic(path.display().to_string()),
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        other => other,
    }
}
