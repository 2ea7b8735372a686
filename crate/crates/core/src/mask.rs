//! Dense and run-length encoded binary masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A single-channel binary raster stored as a row-major bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    words: Vec<u64>,
}

fn word_count(len: usize) -> usize {
    len.div_ceil(64)
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "mask must be at least 1x1, got {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            words: vec![0; word_count(height * width)],
        })
    }

    pub fn filled(height: usize, width: usize) -> Result<Self> {
        Self::from_fn(height, width, |_, _| true)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut mask = Self::new(height, width)?;
        for row in 0..height {
            for col in 0..width {
                if f(row, col) {
                    mask.set_index(row * width + col, true);
                }
            }
        }
        Ok(mask)
    }

    /// Builds a mask from a row-major slice of flags.
    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                bits.len()
            )));
        }
        Self::from_fn(height, width, |r, c| bits[r * width + c])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    /// True when no pixel is set.
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        self.get_index(row * self.width + col)
    }

    #[inline]
    pub fn get_index(&self, index: usize) -> bool {
        (self.words[index / 64] >> (index % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(row < self.height && col < self.width, "pixel out of bounds");
        self.set_index(row * self.width + col, value);
    }

    #[inline]
    pub fn set_index(&mut self, index: usize, value: bool) {
        let bit = 1u64 << (index % 64);
        if value {
            self.words[index / 64] |= bit;
        } else {
            self.words[index / 64] &= !bit;
        }
    }

    /// Foreground pixel count.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Row-major indices of set pixels, ascending.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// In-place pixelwise OR.
    pub fn union_with(&mut self, other: &Self) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn intersects(&self, other: &Self) -> Result<bool> {
        Ok(self.intersection_count(other)? > 0)
    }

    /// Pixelwise complement.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len() % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

/// Uncompressed run-length encoding in column-major pixel order.
///
/// Runs alternate between background and foreground, starting with a
/// (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    pub height: usize,
    pub width: usize,
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn new(height: usize, width: usize, counts: Vec<u32>) -> Self {
        Self {
            height,
            width,
            counts,
        }
    }

    /// Checks the run invariants without decoding.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::MalformedRle(format!(
                "size must be at least 1x1, got {}x{}",
                self.height, self.width
            )));
        }
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        let expected = (self.height * self.width) as u64;
        if total != expected {
            return Err(Error::MalformedRle(format!(
                "counts sum to {total}, expected {expected}"
            )));
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::MalformedRle(format!(
                "zero-length run at position {}",
                pos + 1
            )));
        }
        Ok(())
    }

    /// Foreground pixel count (sum of odd-indexed runs).
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for col in 0..w {
        for row in 0..h {
            let v = mask.get_index(row * w + col);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask::new(h, w, counts)
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    rle.validate()?;
    let (h, w) = (rle.height, rle.width);
    let mut mask = BinaryMask::new(h, w)?;
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 {
            for p in pos..pos + run {
                let (col, row) = (p / h, p % h);
                mask.set_index(row * w + col, true);
            }
        }
        pos += run;
    }
    Ok(mask)
}

/// Pixelwise OR of the selected proposals, i.e. the sum of the masks clipped
/// at 1. An empty selection yields the all-zero mask of size `dims`.
pub fn clip_union(
    dims: (usize, usize),
    proposals: &[BinaryMask],
    selected: &[usize],
) -> Result<BinaryMask> {
    let mut out = BinaryMask::new(dims.0, dims.1)?;
    for &k in selected {
        let mask = proposals.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: proposals.len(),
        })?;
        out.union_with(mask)?;
    }
    Ok(out)
}
