//! JSON wire types for the HTTP service. The server and the thin client
//! both build against these, so the wire format lives in one place.
//!
//! Requests reference inputs by filesystem path: the service is a local
//! inference daemon that keeps loaded checkpoints warm, and artifacts
//! (checkpoints, datasets, output maps) stay on shared storage rather than
//! traveling through request bodies.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::pipeline::{EvalReport, RunConfigPatch, SweepRow};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    /// Checkpoints currently held in the model cache.
    pub loaded_models: usize,
}

/// Common model inputs: checkpoint path plus the run configuration (a patch
/// over the variant defaults, exactly like a config file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub checkpoint: PathBuf,
    pub class_embeddings: PathBuf,
    pub image: PathBuf,
    #[serde(default)]
    pub run: RunConfigPatch,
    /// Output map path; defaults to `<output_dir>/<image stem>_seg.pgm`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub map_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub windows: usize,
    pub resized_height: usize,
    pub resized_width: usize,
    pub zero_norm_patches: usize,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub checkpoint: PathBuf,
    pub class_embeddings: PathBuf,
    pub manifest: PathBuf,
    #[serde(default)]
    pub run: RunConfigPatch,
    /// When set, the JSON report is also written here.
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub report: EvalReport,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    #[serde(default)]
    pub run: RunConfigPatch,
    /// Patch index for the attention heatmaps; global token when absent.
    pub query: Option<usize>,
    /// Output directory; defaults to `<output_dir>/analysis_<image stem>`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub files: Vec<PathBuf>,
    pub layers: usize,
    pub grid: usize,
    pub layers_with_distraction: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub checkpoint: PathBuf,
    pub class_embeddings: PathBuf,
    pub manifest: PathBuf,
    #[serde(default)]
    pub run: RunConfigPatch,
    pub param: String,
    pub values: Vec<String>,
    /// CSV output path; defaults to `<output_dir>/sweep_<param>.csv`.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Error body mirrored onto HTTP status codes; `kind` matches the process
/// exit-code taxonomy (config, data, numeric).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}
