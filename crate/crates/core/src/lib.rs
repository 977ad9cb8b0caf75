//! Training-free attention-refocusing inference engine for CLIP-style
//! vision transformers.
//!
//! The engine runs a plain ViT image tower over sliding windows and, at every
//! residual layer, rewrites the attention maps in place: tokens that soak up
//! attention because of over-activated embedding dimensions ("distraction"
//! tokens) are located, the defocused target region is recovered with a
//! normalized-cut bipartition of the accumulated key-key attention, and the
//! attention mass removed from the distraction columns is re-granted to the
//! defocused columns in proportion to their existing shares. The final dense
//! features are classified against precomputed class text embeddings to yield
//! an open-vocabulary segmentation map.
//!
//! Module map:
//!
//! - [`numerics`] — dense kernels: matmul, softmax, layernorm, bilinear
//!   resize, symmetric eigensolver.
//! - [`model_io`] — checkpoint / image / class-embedding / manifest ingestion
//!   and segmentation-map export.
//! - [`vit`] — the image tower with a per-layer modulation hook.
//! - [`refocus`] — distraction-token localization and weight redistribution.
//! - [`spectral`] — normalized-cut Fiedler bipartition for defocus
//!   localization.
//! - [`head`] — dense prediction: proxy attention, cosine classification,
//!   logit upsampling.
//! - [`pipeline`] — sliding-window inference, mIoU evaluation, diagnostics,
//!   parameter sweeps, and the bundled synthetic fixture.
//! - [`protocol`] — JSON wire types for the HTTP service.

pub mod error;
pub mod head;
pub mod model_io;
pub mod numerics;
pub mod pipeline;
pub mod protocol;
pub mod refocus;
pub mod spectral;
pub mod vit;

pub use error::{Error, ErrorKind, Result};
