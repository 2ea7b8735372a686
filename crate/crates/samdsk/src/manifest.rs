//! Dataset manifests.
//!
//! ```json
//! {
//!   "classes": 2,
//!   "images": [
//!     {"id": "img0000", "features": "features/img0000.rast",
//!      "proposals": "proposals/img0000.json", "gt": "gt/img0000.json",
//!      "pool": "labeled"}
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Labeled and test images
//! need a ground-truth path.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use samdsk_core::synth::Pool;
use serde_json::{json, Value};

use crate::error::Result;
use crate::json::{self, each, optional, required, Kind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub features: PathBuf,
    pub proposals: PathBuf,
    pub gt: Option<PathBuf>,
    pub pool: Pool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Total classes including background.
    pub classes: usize,
    pub images: Vec<ManifestEntry>,
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

impl Manifest {
    pub fn ids(&self, pool: Pool) -> Vec<String> {
        self.images
            .iter()
            .filter(|e| e.pool == pool)
            .map(|e| e.id.clone())
            .collect()
    }

    pub fn to_value(&self) -> Value {
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|e| {
                let mut v = json!({
                    "id": e.id,
                    "features": path_str(&e.features),
                    "proposals": path_str(&e.proposals),
                    "pool": e.pool.name(),
                });
                if let Some(gt) = &e.gt {
                    v["gt"] = Value::from(path_str(gt));
                }
                v
            })
            .collect();
        json!({"classes": self.classes, "images": images})
    }

    pub fn from_value(v: &Value) -> Result<Self> {
        let root = json::root(v, Kind::Manifest);
        root.only_keys(&["classes", "images"])?;
        let classes = required(&root, "classes", |f| {
            let c = f.usize()?;
            if c < 2 {
                return Err(f.error(format!("need at least 2 classes, got {c}")));
            }
            Ok(c)
        })?;
        let mut seen = BTreeSet::new();
        let images = required(&root, "images", |list| {
            each(&list, |_, e| {
                e.only_keys(&["id", "features", "proposals", "gt", "pool"])?;
                let id = required(&e, "id", |f| {
                    let id = f.str()?;
                    if id.is_empty() {
                        return Err(f.error("empty image id"));
                    }
                    if !seen.insert(id.to_string()) {
                        return Err(f.error(format!("duplicate image id {id:?}")));
                    }
                    Ok(id.to_string())
                })?;
                let path = |f: json::Field<'_>| Ok(PathBuf::from(f.str()?));
                let pool = required(&e, "pool", |f| {
                    let s = f.str()?;
                    Pool::parse(s).ok_or_else(|| {
                        f.error(format!("unknown pool {s:?} (labeled, unlabeled or test)"))
                    })
                })?;
                let gt = optional(&e, "gt", path)?;
                if gt.is_none() && pool != Pool::Unlabeled {
                    return Err(e.error(format!("{} image {id:?} needs a gt path", pool.name())));
                }
                Ok(ManifestEntry {
                    features: required(&e, "features", path)?,
                    proposals: required(&e, "proposals", path)?,
                    id,
                    gt,
                    pool,
                })
            })
        })?;
        Ok(Self { classes, images })
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
