//! Writes a synthetic dataset as files plus a manifest.

use std::path::{Path, PathBuf};

use samdsk_core::synth::{gen_synthetic_dataset, DatasetParams};
use serde_json::json;

use crate::annotation::save_annotation;
use crate::error::{IoError, Result};
use crate::manifest::{Manifest, ManifestEntry};
use crate::proposals::ProposalFile;
use crate::raster::save_features;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Creates `features/`, `proposals/`, `gt/` and `manifest.json` under `dir`;
/// returns the manifest path. Every image gets a ground-truth file; only the
/// labeled and test entries reference it.
pub fn export_synthetic(dir: &Path, seed: u64, params: &DatasetParams) -> Result<PathBuf> {
    let images = gen_synthetic_dataset(seed, params)?;
    for sub in ["features", "proposals", "gt"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| IoError::io(&d, e))?;
    }
    let generator = json!({
        "kind": "synthetic",
        "seed": seed,
        "epsilon_target": params.geometry.epsilon_target,
        "boundary_noise": params.geometry.boundary_noise,
    });
    let mut entries = Vec::with_capacity(images.len());
    for img in &images {
        let features = PathBuf::from(format!("features/{}.rast", img.id));
        let proposals = PathBuf::from(format!("proposals/{}.json", img.id));
        let gt = PathBuf::from(format!("gt/{}.json", img.id));
        save_features(&dir.join(&features), &img.features)?;
        ProposalFile::from_masks(&img.id, &img.proposals, generator.clone())?
            .save(&dir.join(&proposals))?;
        save_annotation(&dir.join(&gt), &img.id, &img.gt)?;
        entries.push(ManifestEntry {
            id: img.id.clone(),
            features,
            proposals,
            gt: (img.pool != samdsk_core::synth::Pool::Unlabeled).then_some(gt),
            pool: img.pool,
        });
    }
    let manifest = Manifest {
        classes: params.geometry.classes,
        images: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}
