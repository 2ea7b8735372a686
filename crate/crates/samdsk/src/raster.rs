//! `RAST` container for probability stacks and feature rasters.
//!
//! Layout (little-endian): magic `RAST`, `u16` version 1, `u32` channels,
//! `u32` height, `u32` width, then `channels·height·width` `f32` values,
//! channel-major then row-major.

use std::path::Path;

use samdsk_core::{FeatureRaster, ProbStack};

use crate::error::{IoError, Result};
use crate::json::write_atomic;

pub const MAGIC: &[u8; 4] = b"RAST";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

/// Decoded container contents, before any semantic checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterData {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

pub fn encode_raster(channels: usize, height: usize, width: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), channels * height * width, "payload length");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [channels, height, width] {
        let d = u32::try_from(d).expect("dimension fits in u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn malformed(offset: usize, reason: impl Into<String>) -> IoError {
    IoError::MalformedRaster {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterData> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let shown = &bytes[..bytes.len().min(4)];
        return Err(malformed(0, format!("expected magic \"RAST\", found {shown:?}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(malformed(
            bytes.len(),
            format!("header truncated: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(malformed(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 3];
    for (i, name) in ["channels", "height", "width"].into_iter().enumerate() {
        let at = 6 + 4 * i;
        let d = u32_at(bytes, at);
        if d == 0 {
            return Err(malformed(at, format!("{name} is zero")));
        }
        dims[i] = d as usize;
    }
    let [channels, height, width] = dims;
    let expected = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| malformed(6, "payload size overflows"))?;
    if bytes.len() < expected {
        return Err(malformed(
            bytes.len(),
            format!("payload truncated: file ends at byte {}, expected {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(malformed(
            expected,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(RasterData {
        channels,
        height,
        width,
        data,
    })
}

fn value_offset(i: usize) -> usize {
    HEADER_LEN + 4 * i
}

/// Probability values must lie in [0, 1]; the normalization flag is set from
/// the per-pixel sums.
pub fn decode_prob_stack(bytes: &[u8]) -> Result<ProbStack> {
    let r = decode_raster(bytes)?;
    if r.channels < 2 {
        return Err(malformed(6, format!("probability stack needs ≥ 2 channels, found {}", r.channels)));
    }
    if let Some(i) = r.data.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(malformed(
            value_offset(i),
            format!("probability {} outside [0, 1]", r.data[i]),
        ));
    }
    let stack = ProbStack::new(r.height, r.width, r.channels, r.data)?.with_normalized(true);
    let normalized = samdsk_core::validate_prob_stack(&stack).is_ok();
    Ok(stack.with_normalized(normalized))
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureRaster> {
    let r = decode_raster(bytes)?;
    if let Some(i) = r.data.iter().position(|x| !x.is_finite()) {
        return Err(malformed(value_offset(i), format!("non-finite feature value {}", r.data[i])));
    }
    Ok(FeatureRaster::new(r.channels, r.height, r.width, r.data)?)
}

pub fn encode_prob_stack(p: &ProbStack) -> Vec<u8> {
    encode_raster(p.classes(), p.height(), p.width(), p.data())
}

pub fn encode_features(f: &FeatureRaster) -> Vec<u8> {
    encode_raster(f.channels(), f.height(), f.width(), f.data())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub fn load_prob_stack(path: &Path) -> Result<ProbStack> {
    decode_prob_stack(&read(path)?).map_err(|e| e.in_file(path))
}

pub fn load_features(path: &Path) -> Result<FeatureRaster> {
    decode_features(&read(path)?).map_err(|e| e.in_file(path))
}

pub fn save_prob_stack(path: &Path, p: &ProbStack) -> Result<()> {
    write_atomic(path, &encode_prob_stack(p))
}

pub fn save_features(path: &Path, f: &FeatureRaster) -> Result<()> {
    write_atomic(path, &encode_features(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(e: IoError) -> u64 {
        match e {
            IoError::MalformedRaster { offset, .. } => offset,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_layout() {
        let b = encode_raster(2, 1, 3, &[0.0; 6]);
        assert_eq!(b.len(), HEADER_LEN + 24);
        assert_eq!(&b[..6], b"RAST\x01\x00");
        assert_eq!(&b[6..10], &2u32.to_le_bytes());
        assert_eq!(&b[14..18], &3u32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_reports_file_end() {
        let b = encode_raster(2, 2, 2, &[0.5; 8]);
        let cut = &b[..b.len() - 3];
        assert_eq!(offset_of(decode_raster(cut).unwrap_err()), cut.len() as u64);
    }

    #[test]
    fn header_errors_point_at_fields() {
        let mut b = encode_raster(2, 2, 2, &[0.5; 8]);
        b[4] = 2;
        assert_eq!(offset_of(decode_raster(&b).unwrap_err()), 4);
        let mut b = encode_raster(2, 2, 2, &[0.5; 8]);
        b[10..14].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset_of(decode_raster(&b).unwrap_err()), 10);
        assert_eq!(offset_of(decode_raster(b"RAS").unwrap_err()), 0);
        assert_eq!(offset_of(decode_raster(b"RAST\x01\x00\x01").unwrap_err()), 7);
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut b = encode_raster(2, 1, 1, &[0.5, 0.5]);
        let end = b.len();
        b.push(0);
        assert_eq!(offset_of(decode_raster(&b).unwrap_err()), end as u64);
    }

    #[test]
    fn probability_range_is_checked() {
        let b = encode_raster(2, 1, 2, &[0.5, 1.5, 0.5, 0.0]);
        assert_eq!(offset_of(decode_prob_stack(&b).unwrap_err()), (HEADER_LEN + 4) as u64);
        let b = encode_raster(2, 1, 1, &[0.5, f32::NAN]);
        assert_eq!(offset_of(decode_prob_stack(&b).unwrap_err()), (HEADER_LEN + 4) as u64);
        let b = encode_raster(1, 1, 1, &[1.0]);
        assert_eq!(offset_of(decode_prob_stack(&b).unwrap_err()), 6);
    }

    #[test]
    fn normalization_flag_follows_sums() {
        let ok = decode_prob_stack(&encode_raster(2, 1, 1, &[0.25, 0.75])).unwrap();
        assert!(ok.is_normalized());
        let off = decode_prob_stack(&encode_raster(2, 1, 1, &[0.25, 0.25])).unwrap();
        assert!(!off.is_normalized());
    }
}
