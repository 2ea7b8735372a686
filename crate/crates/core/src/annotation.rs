//! Annotation maps built from matched proposals.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{clip_union, BinaryMask};
use crate::matching::Assignment;
use crate::raster::ProbStack;

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub image_id: String,
    pub assignment: Assignment,
}

/// Per-foreground-class binary maps; background is whatever no class covers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMap {
    height: usize,
    width: usize,
    classes: Vec<BinaryMask>,
    /// Pixels claimed by more than one foreground class.
    conflicts: usize,
    pub provenance: Option<Provenance>,
}

impl AnnotationMap {
    pub fn from_class_masks(dims: (usize, usize), classes: Vec<BinaryMask>) -> Result<Self> {
        BinaryMask::new(dims.0, dims.1)?;
        if classes.is_empty() {
            return Err(Error::InvalidShape("annotation needs a foreground class".into()));
        }
        for m in &classes {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: m.dims(),
                });
            }
        }
        let n = dims.0 * dims.1;
        let mut conflicts = 0;
        for i in 0..n {
            if classes.iter().filter(|m| m.get_index(i)).count() > 1 {
                conflicts += 1;
            }
        }
        Ok(Self {
            height: dims.0,
            width: dims.1,
            classes,
            conflicts,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, image_id: impl Into<String>, assignment: Assignment) -> Self {
        self.provenance = Some(Provenance {
            image_id: image_id.into(),
            assignment,
        });
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of foreground classes (`C − 1`).
    pub fn foreground(&self) -> usize {
        self.classes.len()
    }

    /// Foreground class masks `q_1 … q_{C−1}` (0-based here).
    pub fn class_masks(&self) -> &[BinaryMask] {
        &self.classes
    }

    pub fn class_mask(&self, class: usize) -> &BinaryMask {
        &self.classes[class]
    }

    pub fn conflicts(&self) -> usize {
        self.conflicts
    }

    pub fn background(&self) -> BinaryMask {
        let mut any = BinaryMask::new(self.height, self.width).expect("valid dims");
        for m in &self.classes {
            any.union_with(m).expect("same dims");
        }
        any.complement()
    }

    /// Single-label map: each pixel gets its lowest covering class, or
    /// `foreground()` (the background index) when uncovered.
    pub fn label_map(&self) -> Vec<u16> {
        let n = self.height * self.width;
        let bg = self.classes.len() as u16;
        let mut labels = vec![bg; n];
        for (c, m) in self.classes.iter().enumerate().rev() {
            for i in m.iter_ones() {
                labels[i] = c as u16;
            }
        }
        labels
    }

    /// The annotation as a 0/1 probability stack (background last).
    pub fn to_prob_stack(&self) -> ProbStack {
        let n = self.height * self.width;
        let classes = self.classes.len() + 1;
        let mut data = vec![0.0f32; classes * n];
        for (c, m) in self.classes.iter().enumerate() {
            for i in m.iter_ones() {
                data[c * n + i] = 1.0;
            }
        }
        for i in self.background().iter_ones() {
            data[(classes - 1) * n + i] = 1.0;
        }
        ProbStack::new(self.height, self.width, classes, data)
            .expect("shape derived from annotation")
            .with_normalized(self.conflicts == 0)
    }
}

/// `q_c` is the clipped union of the proposals selected for class `c`.
pub fn build_annotation(
    proposals: &[BinaryMask],
    a: &Assignment,
    dims: (usize, usize),
) -> Result<AnnotationMap> {
    let classes = a
        .z
        .iter()
        .map(|set| clip_union(dims, proposals, set))
        .collect::<Result<Vec<_>>>()?;
    AnnotationMap::from_class_masks(dims, classes)
}
