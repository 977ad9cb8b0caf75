//! Ingestion of checkpoints, configuration, class embeddings, images, and
//! dataset manifests; export of segmentation maps.
//!
//! Everything here is deterministic: two loads of the same file produce
//! identical in-memory tensors, and writers emit byte-identical files for
//! identical inputs. All multi-byte integers in raw payloads are
//! little-endian (16-bit PNM samples are big-endian, per that format).

mod checkpoint;
mod class_embeddings;
mod config;
mod image_io;
mod manifest;
mod segmap;

pub use checkpoint::{CheckpointStore, LayerWeights, NormParams, TensorFile};
pub use class_embeddings::{load_class_embeddings, write_class_embeddings, ClassEmbeddingSet};
pub use config::{
    ModelConfig, ModelConfigPatch, Variant, DEFAULT_CHANNEL_MEAN, DEFAULT_CHANNEL_STD,
    DISTRACTION_DIMS_B16, DISTRACTION_DIMS_L14,
};
pub use image_io::{
    load_image, load_label_map, probe_dimensions, save_pgm_indices, save_png_indices, save_pnm,
    save_raw_image,
};
pub use manifest::{DatasetManifest, ManifestItem};
pub use segmap::{
    read_segmentation, sidecar_path, write_segmentation, SegmentationMap, SegmentationSidecar,
};
