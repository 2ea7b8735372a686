//! In-memory image data loaded from a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use samdsk_core::orchestrator::ImageSource;
use samdsk_core::{AnnotationMap, BinaryMask, Error, FeatureRaster};

use crate::annotation::load_annotation;
use crate::error::{IoError, Result};
use crate::manifest::Manifest;
use crate::proposals::ProposalFile;
use crate::raster::load_features;

#[derive(Debug, Clone)]
pub struct ImageData {
    pub features: FeatureRaster,
    pub proposals: Vec<BinaryMask>,
    pub gt: Option<AnnotationMap>,
}

/// Every file referenced by a manifest, loaded and cross-checked up front.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub manifest: Manifest,
    images: BTreeMap<String, ImageData>,
}

fn mismatch(id: &str, reason: String) -> IoError {
    IoError::Core(Error::MissingData {
        image_id: id.to_string(),
        reason,
    })
}

impl DatasetSource {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut images = BTreeMap::new();
        for e in &manifest.images {
            let features = load_features(&base.join(&e.features))?;
            let pfile = base.join(&e.proposals);
            let pf = ProposalFile::load(&pfile)?;
            if pf.image_id != e.id {
                return Err(mismatch(
                    &e.id,
                    format!("{} describes image {:?}", pfile.display(), pf.image_id),
                ));
            }
            if pf.dims() != features.dims() {
                return Err(mismatch(
                    &e.id,
                    format!("proposal size {:?} differs from feature size {:?}", pf.dims(), features.dims()),
                ));
            }
            let proposals = pf.masks().map_err(|err| err.in_file(&pfile))?;
            let gt = match &e.gt {
                Some(p) => {
                    let (gid, ann) = load_annotation(&base.join(p))?;
                    if gid != e.id {
                        return Err(mismatch(&e.id, format!("{} describes image {gid:?}", p.display())));
                    }
                    if ann.dims() != features.dims() || ann.foreground() != manifest.classes - 1 {
                        return Err(mismatch(
                            &e.id,
                            format!(
                                "ground truth has size {:?} and {} classes, expected {:?} and {}",
                                ann.dims(),
                                ann.foreground() + 1,
                                features.dims(),
                                manifest.classes
                            ),
                        ));
                    }
                    Some(ann)
                }
                None => None,
            };
            images.insert(
                e.id.clone(),
                ImageData {
                    features,
                    proposals,
                    gt,
                },
            );
        }
        Ok(Self { manifest, images })
    }

    pub fn image(&self, id: &str) -> samdsk_core::Result<&ImageData> {
        self.images.get(id).ok_or_else(|| Error::MissingData {
            image_id: id.to_string(),
            reason: "not listed in the manifest".into(),
        })
    }
}

impl ImageSource for DatasetSource {
    fn features(&self, id: &str) -> samdsk_core::Result<FeatureRaster> {
        Ok(self.image(id)?.features.clone())
    }

    fn proposals(&self, id: &str) -> samdsk_core::Result<Vec<BinaryMask>> {
        Ok(self.image(id)?.proposals.clone())
    }

    fn ground_truth(&self, id: &str) -> samdsk_core::Result<AnnotationMap> {
        self.image(id)?.gt.clone().ok_or_else(|| Error::MissingData {
            image_id: id.to_string(),
            reason: "no ground truth".into(),
        })
    }
}
