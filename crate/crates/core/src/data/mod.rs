//! Dataset ingestion, codecs, preprocessing, phantom synthesis and batching.

pub mod batch;
pub mod codec;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod phantom;

pub use batch::{BatchPlan, BatchStreams};
pub use codec::{read_image, read_mask, write_image, write_mask};
pub use dataset::{preprocess, Dataset, Sample};
pub use image::{crop_or_pad, zscore_normalize, ImageSlice, LabelMask, NUM_CLASSES};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use phantom::{generate_phantom_dataset, render_slice, JitterRanges, PhantomConfig, ZoneGeometry};
