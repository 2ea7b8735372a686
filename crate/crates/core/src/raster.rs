//! Multi-channel float rasters: per-class probability stacks and per-pixel features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Tolerance on the per-pixel class sum of a normalized stack.
pub const NORMALIZATION_TOLERANCE: f32 = 1e-3;

/// How many offending pixels a [`ValidationReport`] lists.
pub const MAX_REPORTED_VIOLATIONS: usize = 10;

fn check_shape(channels: usize, height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(format!(
            "raster must be at least 1x1, got {height}x{width}"
        )));
    }
    if channels * height * width != len {
        return Err(Error::InvalidShape(format!(
            "expected {} values for {channels}x{height}x{width}, got {len}",
            channels * height * width
        )));
    }
    Ok(())
}

/// Per-class probability maps, channel-major then row-major. The last channel
/// is the background class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbStack {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<f32>,
    normalized: bool,
}

impl ProbStack {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidShape(format!(
                "a probability stack needs at least 2 classes, got {classes}"
            )));
        }
        check_shape(classes, height, width, data.len())?;
        Ok(Self {
            height,
            width,
            classes,
            data,
            normalized: false,
        })
    }

    /// Every class at probability `1/classes`.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Result<Self> {
        let v = 1.0 / classes as f32;
        Ok(Self::new(height, width, classes, vec![v; classes * height * width])?.with_normalized(true))
    }

    /// Marks the stack as normalized, so validation also checks per-pixel sums.
    pub fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Total number of classes including background.
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn background(&self) -> usize {
        self.classes - 1
    }

    /// Row-major raster of class `class` (0-based).
    pub fn channel(&self, class: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[class * n..(class + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Per-pixel argmax label map (ties go to the lower class).
    pub fn argmax(&self) -> Vec<u16> {
        let n = self.height * self.width;
        (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect()
    }
}

/// Per-pixel feature vectors, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRaster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureRaster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidShape("feature raster needs at least one channel".into()));
        }
        check_shape(channels, height, width, data.len())?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of channel `channel` at row-major pixel `index`.
    #[inline]
    pub fn value(&self, channel: usize, index: usize) -> f32 {
        self.data[channel * self.height * self.width + index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    /// A class probability outside [0, 1] (or NaN).
    OutOfRange { class: usize, value: f32 },
    /// Cross-class sum outside `1 ± NORMALIZATION_TOLERANCE`.
    BadSum { sum: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// The first offending pixels, at most [`MAX_REPORTED_VIOLATIONS`].
    pub violations: Vec<Violation>,
    pub total: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.total == 0
    }

    fn push(&mut self, v: Violation) {
        if self.violations.len() < MAX_REPORTED_VIOLATIONS {
            self.violations.push(v);
        }
        self.total += 1;
    }
}

/// Checks value ranges, and per-pixel sums when the stack claims to be normalized.
pub fn validate_prob_stack(q: &ProbStack) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = q.height * q.width;
    for i in 0..n {
        let (row, col) = (i / q.width, i % q.width);
        let mut sum = 0.0f32;
        for c in 0..q.classes {
            let v = q.data[c * n + i];
            if !(0.0..=1.0).contains(&v) {
                report.push(Violation {
                    row,
                    col,
                    kind: ViolationKind::OutOfRange { class: c, value: v },
                });
            }
            sum += v;
        }
        if q.normalized && !((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            report.push(Violation {
                row,
                col,
                kind: ViolationKind::BadSum { sum },
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_value_is_reported() {
        let mut data = vec![0.5f32; 2 * 3 * 3];
        data[4] = 1.2;
        let q = ProbStack::new(3, 3, 2, data).unwrap();
        let report = validate_prob_stack(&q);
        assert_eq!(report.total, 1);
        assert_eq!(
            report.violations[0],
            Violation {
                row: 1,
                col: 1,
                kind: ViolationKind::OutOfRange { class: 0, value: 1.2 }
            }
        );
    }

    #[test]
    fn normalized_flag_controls_sum_check() {
        let ok = ProbStack::uniform(4, 4, 3).unwrap();
        assert!(validate_prob_stack(&ok).is_ok());

        let loose = ProbStack::new(2, 2, 2, vec![0.9; 8]).unwrap();
        assert!(validate_prob_stack(&loose).is_ok());
        let strict = loose.with_normalized(true);
        let report = validate_prob_stack(&strict);
        assert_eq!(report.total, 4);
        assert!(matches!(report.violations[0].kind, ViolationKind::BadSum { .. }));
    }

    #[test]
    fn report_is_capped() {
        let q = ProbStack::new(5, 5, 2, vec![-1.0; 50]).unwrap();
        let report = validate_prob_stack(&q);
        assert_eq!(report.total, 50);
        assert_eq!(report.violations.len(), MAX_REPORTED_VIOLATIONS);
    }

    #[test]
    fn nan_is_out_of_range() {
        let q = ProbStack::new(1, 1, 2, vec![f32::NAN, 0.5]).unwrap();
        assert_eq!(validate_prob_stack(&q).total, 1);
    }

    #[test]
    fn shape_checks() {
        assert!(ProbStack::new(2, 2, 1, vec![0.0; 4]).is_err());
        assert!(ProbStack::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(FeatureRaster::new(0, 2, 2, vec![]).is_err());
        assert!(FeatureRaster::new(2, 2, 2, vec![0.0; 8]).is_ok());
    }
}
