//! Overlap metrics between probability rasters and binary masks.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Denominators below this are treated as "both regions empty".
pub const EMPTY_EPS: f64 = 1e-12;

/// Threshold used by the binarizing metric variants.
pub const BINARIZE_AT: f32 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Metric {
    /// Ruzicka similarity `Σ min / Σ max`; equals IoU on binary inputs.
    #[default]
    SoftIou,
    /// IoU after thresholding the raster at 0.5.
    BinaryIou,
    /// Dice after thresholding the raster at 0.5.
    Dice,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SoftIou => "soft-iou",
            Metric::BinaryIou => "binary-iou",
            Metric::Dice => "dice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "soft-iou" => Some(Metric::SoftIou),
            "binary-iou" => Some(Metric::BinaryIou),
            "dice" => Some(Metric::Dice),
            _ => None,
        }
    }
}

fn check_len(p: &[f32], m: &BinaryMask) -> Result<()> {
    if p.len() != m.len() {
        let found = if p.len().is_multiple_of(m.width()) {
            (p.len() / m.width(), m.width())
        } else {
            (1, p.len())
        };
        return Err(Error::DimensionMismatch {
            expected: m.dims(),
            found,
        });
    }
    Ok(())
}

/// Ruzicka similarity between two non-negative rasters of equal length.
/// Two all-zero rasters score 1.
pub fn ruzicka(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "raster lengths differ");
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        lo += x.min(y);
        hi += x.max(y);
    }
    if hi < EMPTY_EPS {
        1.0
    } else {
        lo / hi
    }
}

/// Soft IoU `Σ min(p, m) / Σ max(p, m)` of a probability raster against a mask.
pub fn soft_iou(p: &[f32], m: &BinaryMask) -> Result<f64> {
    check_len(p, m)?;
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (i, &v) in p.iter().enumerate() {
        let v = v as f64;
        if m.get_index(i) {
            lo += v.min(1.0);
            hi += v.max(1.0);
        } else {
            lo += v.min(0.0);
            hi += v.max(0.0);
        }
    }
    Ok(if hi < EMPTY_EPS { 1.0 } else { lo / hi })
}

fn iou_counts(inter: usize, a: usize, b: usize) -> f64 {
    let union = a + b - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn dice_counts(inter: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

/// Overlap between two binary masks. Soft and binary IoU coincide here.
pub fn binary_overlap(a: &BinaryMask, b: &BinaryMask, metric: Metric) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    Ok(match metric {
        Metric::SoftIou | Metric::BinaryIou => iou_counts(inter, a.count(), b.count()),
        Metric::Dice => dice_counts(inter, a.count(), b.count()),
    })
}

/// Scores a probability raster against a mask under `metric`.
pub fn score_raster(p: &[f32], m: &BinaryMask, metric: Metric) -> Result<f64> {
    match metric {
        Metric::SoftIou => soft_iou(p, m),
        Metric::BinaryIou | Metric::Dice => {
            check_len(p, m)?;
            let bin = BinaryMask::from_fn(m.height(), m.width(), |r, c| {
                p[r * m.width() + c] >= BINARIZE_AT
            })?;
            binary_overlap(&bin, m, metric)
        }
    }
}

/// Precomputed per-raster state for scoring many candidate masks quickly.
///
/// For `p ∈ [0,1]` and binary `m`, `Σ min = S` and `Σ max = |m| + P − S`
/// where `S = Σ_{i∈m} p_i` and `P = Σ p_i`, so each score only touches the
/// mask's set pixels.
#[derive(Debug, Clone)]
pub(crate) struct RasterScorer {
    values: Vec<f64>,
    total: f64,
    metric: Metric,
}

impl RasterScorer {
    pub(crate) fn new(p: &[f32], metric: Metric) -> Self {
        let values: Vec<f64> = match metric {
            Metric::SoftIou => p.iter().map(|&v| v as f64).collect(),
            Metric::BinaryIou | Metric::Dice => p
                .iter()
                .map(|&v| if v >= BINARIZE_AT { 1.0 } else { 0.0 })
                .collect(),
        };
        let total = values.iter().sum();
        Self {
            values,
            total,
            metric,
        }
    }

    pub(crate) fn score(&self, m: &BinaryMask) -> f64 {
        let inside: f64 = m.iter_ones().map(|i| self.values[i]).sum();
        let area = m.count() as f64;
        let (num, den) = match self.metric {
            Metric::SoftIou | Metric::BinaryIou => (inside, area + self.total - inside),
            Metric::Dice => (2.0 * inside, area + self.total),
        };
        if den < EMPTY_EPS {
            1.0
        } else {
            num / den
        }
    }
}
