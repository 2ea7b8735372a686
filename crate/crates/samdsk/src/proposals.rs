//! Proposal files: one image's class-agnostic masks as column-major run
//! lengths, plus free-form provenance from the generator.
//!
//! ```json
//! {
//!   "generator": {"crop_nms_threshold": 0.5},
//!   "image_id": "img0001",
//!   "proposals": [{"counts": [3, 2, 11], "id": "p0", "source": {}}],
//!   "size": [4, 4]
//! }
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use samdsk_core::{rle_decode, rle_encode, BinaryMask, RleMask};
use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::json::{self, dims_value, each, optional, required, Field, Kind};

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalEntry {
    pub id: String,
    pub rle: RleMask,
    pub source: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalFile {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub proposals: Vec<ProposalEntry>,
    pub generator: Value,
}

/// Parses a `counts` array against `dims`. A string is taken as a compressed
/// encoding and refused.
pub(crate) fn read_counts(f: Field<'_>, dims: (usize, usize)) -> Result<RleMask> {
    if f.value.is_string() {
        return Err(f.error("compressed RLE strings are not supported; give uncompressed counts"));
    }
    let counts = each(&f, |_, c| match c.value.as_i64() {
        Some(n) if n < 0 => Err(c.error(format!("negative run length {n}"))),
        _ => u32::try_from(c.u64()?).map_err(|_| c.error("run length exceeds u32")),
    })?;
    let rle = RleMask::new(dims.0, dims.1, counts);
    let expected = (dims.0 * dims.1) as u64;
    let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if total != expected {
        return Err(f.error(format!(
            "run lengths sum to {total}, expected {}x{} = {expected}",
            dims.0, dims.1
        )));
    }
    rle.validate().map_err(|e| f.error(e.to_string()))?;
    Ok(rle)
}

pub(crate) fn counts_value(rle: &RleMask) -> Value {
    Value::from(rle.counts.clone())
}

impl ProposalFile {
    pub fn from_masks(
        image_id: impl Into<String>,
        masks: &[BinaryMask],
        generator: Value,
    ) -> Result<Self> {
        let (height, width) = masks.first().map(BinaryMask::dims).unwrap_or((1, 1));
        let proposals = masks
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if m.dims() != (height, width) {
                    return Err(samdsk_core::Error::DimensionMismatch {
                        expected: (height, width),
                        found: m.dims(),
                    }
                    .into());
                }
                Ok(ProposalEntry {
                    id: format!("p{k}"),
                    rle: rle_encode(m),
                    source: Value::Object(Map::new()),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            image_id: image_id.into(),
            height,
            width,
            proposals,
            generator,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn masks(&self) -> Result<Vec<BinaryMask>> {
        self.proposals
            .iter()
            .map(|p| Ok(rle_decode(&p.rle)?))
            .collect()
    }

    pub fn to_value(&self) -> Value {
        let proposals: Vec<Value> = self
            .proposals
            .iter()
            .map(|p| json!({"id": p.id, "counts": counts_value(&p.rle), "source": p.source}))
            .collect();
        json!({
            "image_id": self.image_id,
            "size": dims_value(self.dims()),
            "proposals": proposals,
            "generator": self.generator,
        })
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let root = json::root(v, Kind::Proposal);
        root.only_keys(&["image_id", "size", "proposals", "generator"])?;
        let image_id = required(&root, "image_id", |f| Ok(f.str()?.to_string()))?;
        let dims = required(&root, "size", json::dims)?;
        let generator = optional(&root, "generator", |f| Ok(f.value.clone()))?
            .unwrap_or_else(|| Value::Object(Map::new()));
        let mut seen = BTreeSet::new();
        let proposals = required(&root, "proposals", |list| {
            each(&list, |_, p| {
                p.only_keys(&["id", "counts", "source"])?;
                let id = required(&p, "id", |f| Ok(f.str()?.to_string()))?;
                let p = p.with_tag(&id);
                if !seen.insert(id.clone()) {
                    return Err(p.error("duplicate proposal id"));
                }
                let rle = required(&p, "counts", |f| read_counts(f, dims))?;
                let source = optional(&p, "source", |f| Ok(f.value.clone()))?
                    .unwrap_or_else(|| Value::Object(Map::new()));
                Ok(ProposalEntry {
                    id: id.clone(),
                    rle,
                    source,
                })
            })
        })?;
        Ok(Self {
            image_id,
            height: dims.0,
            width: dims.1,
            proposals,
            generator,
        })
    }

    pub fn to_canonical(&self) -> String {
        json::canonical(&self.to_value())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_value(&json::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&json::read_text(path)?).map_err(|e| e.in_file(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write_atomic(path, self.to_canonical().as_bytes())
    }
}
