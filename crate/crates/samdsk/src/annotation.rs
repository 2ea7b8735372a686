//! Annotation documents: ground truth and constructed labels.
//!
//! `masks[c]` holds the column-major run lengths of foreground class `c`;
//! background is implicit. Constructed labels also carry the assignment they
//! came from.

use std::path::Path;

use samdsk_core::{rle_decode, rle_encode, AnnotationMap, Assignment};
use serde_json::{json, Value};

use crate::error::Result;
use crate::json::{self, dims_value, each, optional, required, Field, Kind};
use crate::proposals::{counts_value, read_counts};

pub fn assignment_value(a: &Assignment) -> Value {
    json!({
        "z": a.z,
        "per_class_iou": a.per_class_iou,
        "beta": a.beta,
        "exact": a.exact,
    })
}

pub(crate) fn read_assignment(f: Field<'_>) -> Result<Assignment> {
    f.only_keys(&["z", "per_class_iou", "beta", "exact"])?;
    let z = required(&f, "z", |l| each(&l, |_, s| each(&s, |_, k| k.usize())))?;
    let per_class_iou = required(&f, "per_class_iou", |l| each(&l, |_, x| x.f64()))?;
    if per_class_iou.len() != z.len() {
        return Err(f.error(format!(
            "{} class scores for {} classes",
            per_class_iou.len(),
            z.len()
        )));
    }
    Ok(Assignment {
        z,
        per_class_iou,
        beta: required(&f, "beta", |x| x.f64())?,
        exact: required(&f, "exact", |x| x.bool())?,
    })
}

/// Masks only; provenance is written by [`annotation_value`].
pub(crate) fn masks_value(ann: &AnnotationMap) -> Value {
    Value::from(
        ann.class_masks()
            .iter()
            .map(|m| counts_value(&rle_encode(m)))
            .collect::<Vec<_>>(),
    )
}

pub(crate) fn read_masks(f: Field<'_>, dims: (usize, usize)) -> Result<AnnotationMap> {
    let masks = each(&f, |_, m| Ok(rle_decode(&read_counts(m, dims)?)?))?;
    if masks.is_empty() {
        return Err(f.error("at least one foreground class is required"));
    }
    Ok(AnnotationMap::from_class_masks(dims, masks)?)
}

pub fn annotation_value(image_id: &str, ann: &AnnotationMap) -> Value {
    let mut v = json!({
        "image_id": image_id,
        "size": dims_value(ann.dims()),
        "masks": masks_value(ann),
    });
    if let Some(p) = &ann.provenance {
        v["assignment"] = assignment_value(&p.assignment);
    }
    v
}

/// Returns the image id and the annotation (with provenance when the document
/// carries an assignment).
pub fn annotation_from_value(v: &Value) -> Result<(String, AnnotationMap)> {
    let root = json::root(v, Kind::Annotation);
    root.only_keys(&["image_id", "size", "masks", "assignment"])?;
    let image_id = required(&root, "image_id", |f| Ok(f.str()?.to_string()))?;
    let dims = required(&root, "size", json::dims)?;
    let mut ann = required(&root, "masks", |f| read_masks(f, dims))?;
    if let Some(a) = optional(&root, "assignment", read_assignment)? {
        if a.z.len() != ann.foreground() {
            return Err(json::error_at(
                Kind::Annotation,
                "$.assignment.z",
                None,
                format!("{} classes, masks have {}", a.z.len(), ann.foreground()),
            ));
        }
        ann = ann.with_provenance(image_id.clone(), a);
    }
    Ok((image_id, ann))
}

pub fn parse_annotation(text: &str) -> Result<(String, AnnotationMap)> {
    annotation_from_value(&json::parse(text)?)
}

pub fn load_annotation(path: &Path) -> Result<(String, AnnotationMap)> {
    parse_annotation(&json::read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn save_annotation(path: &Path, image_id: &str, ann: &AnnotationMap) -> Result<()> {
    json::write_atomic(path, json::canonical(&annotation_value(image_id, ann)).as_bytes())
}
