use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::hseg::read_hseg;
use super::sample::Dataset;
use crate::error::{HemlError, Result};

/// Explicit pairing plan: a leaf name, or a list of one (pass-through) or
/// two child plans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairingNode {
    Leaf(String),
    Group(Vec<PairingNode>),
}

impl PairingNode {
    fn collect_leaves<'a>(&'a self, path: String, out: &mut Vec<(String, &'a str)>) -> Result<()> {
        match self {
            PairingNode::Leaf(name) => out.push((path, name)),
            PairingNode::Group(children) => {
                if children.is_empty() || children.len() > 2 {
                    return Err(HemlError::Parse {
                        path,
                        message: format!("a pairing group needs 1 or 2 members, got {}", children.len()),
                    });
                }
                for (i, c) in children.iter().enumerate() {
                    c.collect_leaves(format!("{path}[{i}]"), out)?;
                }
            }
        }
        Ok(())
    }
}

fn default_background() -> f32 {
    0.0
}

/// Leaf segments of an input, their files per split, and optionally how
/// they pair up. Split paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentManifest {
    pub segments: Vec<String>,
    pub input_dim: usize,
    #[serde(default = "default_background")]
    pub background_value: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing: Option<PairingNode>,
    pub splits: BTreeMap<String, BTreeMap<String, PathBuf>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SegmentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(HemlError::Parse {
                path: "segments".into(),
                message: "at least one segment is required".into(),
            });
        }
        if self.input_dim == 0 {
            return Err(HemlError::Parse {
                path: "input_dim".into(),
                message: "must be positive".into(),
            });
        }
        if !self.background_value.is_finite() {
            return Err(HemlError::Parse {
                path: "background_value".into(),
                message: "must be finite".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.segments.iter().enumerate() {
            if s.is_empty() || s.contains('+') {
                return Err(HemlError::Parse {
                    path: format!("segments[{i}]"),
                    message: format!("segment name {s:?} must be non-empty and must not contain '+'"),
                });
            }
            if !seen.insert(s.as_str()) {
                return Err(HemlError::Parse {
                    path: format!("segments[{i}]"),
                    message: format!("duplicate segment name {s:?}"),
                });
            }
        }
        if let Some(plan) = &self.pairing {
            let mut leaves = Vec::new();
            plan.collect_leaves("pairing".into(), &mut leaves)?;
            let mut used = BTreeSet::new();
            for (path, name) in leaves {
                if !seen.contains(name) {
                    return Err(HemlError::Parse {
                        path,
                        message: format!("pairing references unknown segment {name:?}"),
                    });
                }
                if !used.insert(name) {
                    return Err(HemlError::Parse {
                        path,
                        message: format!("segment {name:?} appears twice in pairing"),
                    });
                }
            }
            if let Some(missing) = self.segments.iter().find(|s| !used.contains(s.as_str())) {
                return Err(HemlError::Parse {
                    path: "pairing".into(),
                    message: format!("segment {missing:?} is missing from pairing"),
                });
            }
        }
        for (split, files) in &self.splits {
            if let Some(unknown) = files.keys().find(|k| !seen.contains(k.as_str())) {
                return Err(HemlError::Parse {
                    path: format!("splits.{split}.{unknown}"),
                    message: format!("file for unknown segment {unknown:?}"),
                });
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn split_path(&self, segment_id: &str, split: &str) -> Result<PathBuf> {
        let files = self
            .splits
            .get(split)
            .ok_or_else(|| HemlError::Usage(format!("manifest has no split {split:?}")))?;
        let rel = files
            .get(segment_id)
            .ok_or_else(|| HemlError::Data(format!("split {split:?} lists no file for segment {segment_id:?}")))?;
        Ok(self.base_dir.join(rel))
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<SegmentManifest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut manifest: SegmentManifest = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HemlError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    manifest.base_dir = base_dir.to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<SegmentManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| HemlError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base)
}

/// Reads one leaf segment's file for `split` and checks it against the manifest.
pub fn load_dataset(manifest: &SegmentManifest, segment_id: &str, split: &str) -> Result<Dataset> {
    if !manifest.segments.iter().any(|s| s == segment_id) {
        return Err(HemlError::Usage(format!("unknown segment {segment_id:?}")));
    }
    let path = manifest.split_path(segment_id, split)?;
    let ds = read_hseg(&path, segment_id)?;
    if ds.dim() != manifest.input_dim {
        return Err(HemlError::Format(format!(
            "{}: dimension {} disagrees with manifest input_dim {}",
            path.display(),
            ds.dim(),
            manifest.input_dim
        )));
    }
    ds.validate(manifest.background_value)?;
    Ok(ds)
}
