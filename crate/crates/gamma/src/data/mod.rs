//! Ingestion, manifests, synthetic generators and the train-mix split.

pub mod dataset;
pub mod image_io;
pub mod mix;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boxes::{Annotation, Box2, Detection, DetectionSample};
use crate::GammaError;

pub use dataset::{DomainDataset, DomainTag, EpochSampler};
pub use image_io::{load_image, resize_shorter_side, save_image};
pub use mix::{mix_indices, mix_split, MixSpec, PoolTag};
pub use synth::{
    channel_mean, synth_detection_set, synth_domain_pair, underwater_style, Degradations,
    SceneStyle,
};

pub const ANNOTATION_SCHEMA: &str = "annotations.v1";
pub const DETECTION_SCHEMA: &str = "detections.v1";

/// Ordered dataset listing rooted at a directory; entry order is the
/// canonical iteration order.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub path: String,
    pub annotations: Option<Vec<Annotation>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a manifest file, used as the dataset fingerprint.
pub fn manifest_fingerprint(path: &Path) -> Result<String, GammaError> {
    let bytes = fs::read(path).map_err(|e| GammaError::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(sha256_hex(&bytes))
}

/// Plain-text domain manifest: one relative image path per line.
pub fn write_domain_manifest(dir: &Path, names: &[String]) -> Result<PathBuf, GammaError> {
    let path = dir.join("manifest.txt");
    let mut body = String::new();
    for n in names {
        body.push_str(n);
        body.push('\n');
    }
    fs::write(&path, body)?;
    Ok(path)
}

pub fn load_domain_manifest(path: &Path) -> Result<Manifest, GammaError> {
    let body = fs::read_to_string(path).map_err(|e| GammaError::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut entries = Vec::new();
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let full = root.join(line);
        if !full.exists() {
            return Err(GammaError::Ingestion {
                path: full,
                reason: "referenced by manifest but missing".into(),
            });
        }
        entries.push(ManifestEntry { path: line.to_string(), annotations: None });
    }
    Ok(Manifest { root, entries, fingerprint: sha256_hex(body.as_bytes()) })
}

#[derive(Serialize, Deserialize)]
struct SchemaLine {
    schema: String,
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    image: String,
    boxes: Vec<[f64; 5]>,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    image: String,
    detections: Vec<[f64; 6]>,
}

/// Line-delimited annotation manifest: a schema header line, then one
/// record per image with `[x_min, y_min, x_max, y_max, class_id]` rows.
pub fn write_detection_manifest(
    path: &Path,
    entries: &[(String, Vec<Annotation>)],
) -> Result<(), GammaError> {
    let mut body = serde_json::to_string(&SchemaLine { schema: ANNOTATION_SCHEMA.into() })
        .expect("schema line serializes");
    body.push('\n');
    for (image, annotations) in entries {
        let boxes: Vec<[f64; 5]> = annotations
            .iter()
            .map(|a| [a.rect.x0, a.rect.y0, a.rect.x1, a.rect.y1, a.class_id as f64])
            .collect();
        body.push_str(
            &serde_json::to_string(&AnnotationLine { image: image.clone(), boxes })
                .expect("annotation line serializes"),
        );
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

pub fn load_detection_manifest(path: &Path) -> Result<Manifest, GammaError> {
    let body = fs::read_to_string(path).map_err(|e| GammaError::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    let header: SchemaLine = match lines.next() {
        Some(l) => serde_json::from_str(l).map_err(|e| GammaError::Ingestion {
            path: path.to_path_buf(),
            reason: format!("bad schema line: {e}"),
        })?,
        None => {
            return Err(GammaError::Ingestion {
                path: path.to_path_buf(),
                reason: "empty manifest".into(),
            })
        }
    };
    if header.schema != ANNOTATION_SCHEMA {
        return Err(GammaError::Ingestion {
            path: path.to_path_buf(),
            reason: format!("schema {:?} != {ANNOTATION_SCHEMA:?}", header.schema),
        });
    }
    let mut entries = Vec::new();
    for line in lines {
        let rec: AnnotationLine = serde_json::from_str(line).map_err(|e| {
            GammaError::Ingestion { path: path.to_path_buf(), reason: format!("bad record: {e}") }
        })?;
        let full = root.join(&rec.image);
        if !full.exists() {
            return Err(GammaError::Ingestion {
                path: full,
                reason: "referenced by manifest but missing".into(),
            });
        }
        let annotations = rec
            .boxes
            .iter()
            .map(|b| {
                Ok(Annotation {
                    rect: Box2::new(b[0], b[1], b[2], b[3])?,
                    class_id: b[4] as usize,
                })
            })
            .collect::<Result<Vec<_>, GammaError>>()?;
        entries.push(ManifestEntry { path: rec.image, annotations: Some(annotations) });
    }
    Ok(Manifest { root, entries, fingerprint: sha256_hex(body.as_bytes()) })
}

/// Same line-delimited convention with confidence appended.
pub fn write_detections_file(
    path: &Path,
    entries: &[(String, Vec<Detection>)],
) -> Result<(), GammaError> {
    let mut body = serde_json::to_string(&SchemaLine { schema: DETECTION_SCHEMA.into() })
        .expect("schema line serializes");
    body.push('\n');
    for (image, dets) in entries {
        let detections: Vec<[f64; 6]> = dets
            .iter()
            .map(|d| {
                [d.rect.x0, d.rect.y0, d.rect.x1, d.rect.y1, d.class_id as f64, d.confidence]
            })
            .collect();
        body.push_str(
            &serde_json::to_string(&DetectionLine { image: image.clone(), detections })
                .expect("detection line serializes"),
        );
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

/// Load every image of a domain manifest.
pub fn load_domain_dataset(manifest: &Manifest, tag: DomainTag) -> Result<DomainDataset, GammaError> {
    let images = manifest
        .entries
        .iter()
        .map(|e| image_io::load_image(&manifest.root.join(&e.path)))
        .collect::<Result<Vec<_>, _>>()?;
    DomainDataset::new(tag, images)
}

/// Load every sample of a detection manifest.
pub fn load_detection_samples(manifest: &Manifest) -> Result<Vec<DetectionSample>, GammaError> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let image = image_io::load_image(&manifest.root.join(&e.path))?;
            DetectionSample::new(image, e.annotations.clone().unwrap_or_default())
        })
        .collect()
}

/// Guard that two manifests do not share content (train vs eval).
pub fn assert_disjoint(a: &Manifest, b: &Manifest) -> Result<(), GammaError> {
    if a.fingerprint == b.fingerprint {
        return Err(GammaError::Contract(format!(
            "manifests share fingerprint {}; train and eval pools must be disjoint",
            a.fingerprint
        )));
    }
    Ok(())
}
