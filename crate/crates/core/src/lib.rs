//! Proposal matching and label-set expansion for semi-supervised segmentation.
//!
//! Class-agnostic segmentation proposals (binary masks produced by an external
//! foundation model) are matched against per-class probability maps emitted by
//! a task model. The match is constrained by per-class region-count bounds; its
//! mean soft IoU (`beta`) decides whether an unlabeled image is admitted to the
//! training pool with the constructed annotation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, persistence and
//! the command-line front end live in the `samdsk` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod annotation;
pub mod error;
pub mod mask;
pub mod matching;
pub mod metric;
pub mod model;
pub mod oracle;
pub mod orchestrator;
pub mod raster;
pub mod synth;
pub mod trials;

pub use annotation::{build_annotation, AnnotationMap, Provenance};
pub use error::{Error, Result};
pub use mask::{clip_union, rle_decode, rle_encode, BinaryMask, RleMask};
pub use matching::{
    beta_score, classify_case, solve_matching, solve_matching_greedy, Assignment, CaseLabel,
    MatchConstraints,
};
pub use metric::{binary_overlap, score_raster, soft_iou, Metric};
pub use raster::{validate_prob_stack, FeatureRaster, ProbStack, ValidationReport};
