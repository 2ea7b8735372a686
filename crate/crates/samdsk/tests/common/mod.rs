#![allow(dead_code)]

use std::path::{Path, PathBuf};

use samdsk::annotation::load_annotation;
use samdsk::manifest::Manifest;
use samdsk::proposals::ProposalFile;
use samdsk::raster::{load_features, load_prob_stack};
use samdsk::IoError;

pub fn malformed_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/malformed")
}

/// Loads a corpus file with the loader its name implies and returns the error.
pub fn load_malformed(name: &str) -> Option<IoError> {
    let path = malformed_dir().join(name);
    let err = if name.ends_with(".rast") {
        if name.starts_with("prob") || name.starts_with("single") {
            load_prob_stack(&path).err()
        } else {
            load_features(&path).err()
        }
    } else if name.ends_with(".proposals.json") {
        ProposalFile::load(&path).err()
    } else if name.ends_with(".manifest.json") {
        Manifest::load(&path).err()
    } else if name.ends_with(".annotation.json") {
        load_annotation(&path).err()
    } else {
        panic!("no loader for {name}")
    };
    err.map(|e| match e {
        IoError::InFile { source, .. } => *source,
        e => e,
    })
}

pub type Check = fn(&IoError) -> bool;

/// Every corpus file with a check on the error it must produce.
pub fn expected() -> Vec<(&'static str, Check)> {
    fn raster_at(e: &IoError, at: u64) -> bool {
        matches!(e, IoError::MalformedRaster { offset, .. } if *offset == at)
    }
    fn proposal(e: &IoError, id: Option<&str>, field_has: &str) -> bool {
        matches!(e, IoError::MalformedProposal { field, id: got, .. }
            if got.as_deref() == id && field.contains(field_has))
    }
    fn manifest(e: &IoError, field_has: &str) -> bool {
        matches!(e, IoError::MalformedManifest { field, .. } if field.contains(field_has))
    }
    vec![
        ("bad_magic.rast", |e| raster_at(e, 0)),
        ("truncated_header.rast", |e| raster_at(e, 11)),
        ("bad_version.rast", |e| raster_at(e, 4)),
        ("zero_height.rast", |e| raster_at(e, 10)),
        ("truncated_payload.rast", |e| raster_at(e, 45)),
        ("trailing_bytes.rast", |e| raster_at(e, 50)),
        ("prob_out_of_range.rast", |e| raster_at(e, 22)),
        ("prob_nan.rast", |e| raster_at(e, 18)),
        ("single_channel.rast", |e| raster_at(e, 6)),
        ("rle_short.proposals.json", |e| proposal(e, Some("p1"), "counts")),
        ("rle_negative.proposals.json", |e| proposal(e, Some("p0"), "counts")),
        ("rle_compressed.proposals.json", |e| proposal(e, Some("p0"), "counts")),
        ("rle_interior_zero.proposals.json", |e| proposal(e, Some("p0"), "counts")),
        ("duplicate_id.proposals.json", |e| proposal(e, Some("p0"), "proposals[1]")),
        ("zero_size.proposals.json", |e| proposal(e, None, "size")),
        ("truncated.proposals.json", |e| matches!(e, IoError::Json { .. })),
        ("labeled_without_gt.manifest.json", |e| manifest(e, "images[0]")),
        ("duplicate_image.manifest.json", |e| manifest(e, "images[1]")),
        ("unknown_pool.manifest.json", |e| manifest(e, "pool")),
        ("one_class.manifest.json", |e| manifest(e, "classes")),
        ("wrong_size.annotation.json", |e| {
            matches!(e, IoError::MalformedDocument { kind: "annotation", field, .. } if field.contains("masks[0]"))
        }),
    ]
}
