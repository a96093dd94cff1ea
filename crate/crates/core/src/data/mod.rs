//! Segment samples, manifests, HSEG files and synthetic data.

mod hseg;
mod manifest;
mod sample;
mod synthetic;

pub use hseg::{decode_hseg, encode_hseg, read_hseg, write_hseg, HSEG_MAGIC, HSEG_VERSION};
pub use manifest::{load_dataset, load_manifest, parse_manifest, PairingNode, SegmentManifest};
pub use sample::{compose_datasets, compose_segments, composite_id, Composition, Dataset, SegmentSample};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticMode, SyntheticSpec};
