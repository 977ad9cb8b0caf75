//! Named-tensor checkpoint container and the validated weight store for the
//! visual tower.
//!
//! The container is the de-facto single-file format used by published CLIP
//! checkpoints: an 8-byte little-endian header length, a JSON table mapping
//! tensor names to dtype/shape/offsets, then the raw little-endian payload.
//! Both the original `visual.*` naming and the `vision_model.*` naming are
//! accepted; fixtures are written with split q/k/v projections.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

use super::config::ModelConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (usize, usize),
}

/// Raw parsed container: name -> (dtype, shape, payload slice).
pub struct TensorFile {
    tensors: BTreeMap<String, TensorInfo>,
    payload: Vec<u8>,
    /// SHA-256 of the whole file, for reproducibility logs.
    pub checksum: String,
}

impl TensorFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Decode(format!(
                "{}: shorter than the 8-byte header length",
                path.display()
            )));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + header_len {
            return Err(Error::Decode(format!(
                "{}: truncated header (want {header_len} bytes)",
                path.display()
            )));
        }
        let header: BTreeMap<String, serde_json::Value> =
            serde_json::from_slice(&bytes[8..8 + header_len])
                .map_err(|e| Error::Decode(format!("{}: header json: {e}", path.display())))?;
        let payload = bytes[8 + header_len..].to_vec();
        let mut tensors = BTreeMap::new();
        for (name, value) in header {
            if name == "__metadata__" {
                continue;
            }
            let info: TensorInfo = serde_json::from_value(value)
                .map_err(|e| Error::Decode(format!("tensor {name}: {e}")))?;
            let (b, e) = info.data_offsets;
            if b > e || e > payload.len() {
                return Err(Error::Decode(format!(
                    "tensor {name}: offsets {b}..{e} outside payload of {} bytes",
                    payload.len()
                )));
            }
            tensors.insert(name, info);
        }
        let checksum = hex_digest(&bytes);
        Ok(TensorFile {
            tensors,
            payload,
            checksum,
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.tensors.get(name).map(|t| t.shape.as_slice())
    }

    /// Tensor values widened to f32. F32, F16 and BF16 payloads supported.
    pub fn tensor_f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let info = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        let raw = &self.payload[info.data_offsets.0..info.data_offsets.1];
        let count: usize = info.shape.iter().product::<usize>().max(1);
        let data = match info.dtype.as_str() {
            "F32" => {
                if raw.len() != count * 4 {
                    return Err(Error::Shape(format!(
                        "tensor {name}: {} bytes for {count} f32 values",
                        raw.len()
                    )));
                }
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            "F16" => {
                if raw.len() != count * 2 {
                    return Err(Error::Shape(format!(
                        "tensor {name}: {} bytes for {count} f16 values",
                        raw.len()
                    )));
                }
                raw.chunks_exact(2)
                    .map(|c| f16_to_f32(u16::from_le_bytes(c.try_into().unwrap())))
                    .collect()
            }
            "BF16" => {
                if raw.len() != count * 2 {
                    return Err(Error::Shape(format!(
                        "tensor {name}: {} bytes for {count} bf16 values",
                        raw.len()
                    )));
                }
                raw.chunks_exact(2)
                    .map(|c| f32::from_bits((u16::from_le_bytes(c.try_into().unwrap()) as u32) << 16))
                    .collect()
            }
            other => {
                return Err(Error::Decode(format!(
                    "tensor {name}: unsupported dtype {other}"
                )))
            }
        };
        Ok((info.shape.clone(), data))
    }

    /// Write a container with F32 tensors in sorted-name order, so identical
    /// inputs produce byte-identical files.
    pub fn write(
        path: &Path,
        tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
        metadata: &BTreeMap<String, String>,
    ) -> Result<()> {
        let mut header = serde_json::Map::new();
        let mut offset = 0usize;
        let mut payload = Vec::new();
        for (name, (shape, values)) in tensors {
            let count: usize = shape.iter().product::<usize>().max(1);
            if values.len() != count {
                return Err(Error::Shape(format!(
                    "tensor {name}: {} values for shape {shape:?}",
                    values.len()
                )));
            }
            let begin = offset;
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += values.len() * 4;
            header.insert(
                name.clone(),
                json!({"dtype": "F32", "shape": shape, "data_offsets": [begin, offset]}),
            );
        }
        if !metadata.is_empty() {
            header.insert("__metadata__".into(), json!(metadata));
        }
        let header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))
            .map_err(|e| Error::Decode(format!("header encode: {e}")))?;
        let mut out = Vec::with_capacity(8 + header_bytes.len() + payload.len());
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// IEEE half to single conversion, subnormals included.
fn f16_to_f32(h: u16) -> f32 {
    let sign = (h as u32 >> 15) & 1;
    let exp = (h as u32 >> 10) & 0x1f;
    let frac = h as u32 & 0x3ff;
    let bits = if exp == 0 {
        if frac == 0 {
            sign << 31
        } else {
            let mut e = 127 - 15 + 1;
            let mut m = frac;
            while m & 0x400 == 0 {
                m <<= 1;
                e -= 1;
            }
            (sign << 31) | ((e as u32) << 23) | ((m & 0x3ff) << 13)
        }
    } else if exp == 31 {
        (sign << 31) | 0x7f80_0000 | (frac << 13)
    } else {
        (sign << 31) | ((exp + 127 - 15) << 23) | (frac << 13)
    };
    f32::from_bits(bits)
}

#[derive(Debug, Clone)]
pub struct NormParams {
    pub gain: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Weights of one residual layer. Projection matrices are stored in torch
/// layout (out, in) and applied as `x W^T + b`.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1: NormParams,
    pub w_q: DenseMatrix,
    pub b_q: Vec<f32>,
    pub w_k: DenseMatrix,
    pub b_k: Vec<f32>,
    pub w_v: DenseMatrix,
    pub b_v: Vec<f32>,
    pub w_out: DenseMatrix,
    pub b_out: Vec<f32>,
    pub ln2: NormParams,
    pub w_fc: DenseMatrix,
    pub b_fc: Vec<f32>,
    pub w_mlp_out: DenseMatrix,
    pub b_mlp_out: Vec<f32>,
}

/// Immutable, shareable weight store for the visual tower, validated against
/// a [`ModelConfig`] at load time.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    /// Patch-embedding kernel, one row per output channel, inner layout
    /// (channel, ky, kx) flattened: shape (width, 3 * patch * patch).
    pub patch_kernel: DenseMatrix,
    pub patch_bias: Option<Vec<f32>>,
    pub class_embedding: Vec<f32>,
    /// (tokens, width) positional embeddings, global token first.
    pub positional: DenseMatrix,
    pub ln_pre: Option<NormParams>,
    pub layers: Vec<LayerWeights>,
    pub ln_post: NormParams,
    /// Visual projection to the shared space, stored (width, proj_dim) and
    /// applied as a plain right-multiplication.
    pub proj: DenseMatrix,
    pub proj_dim: usize,
    pub checksum: String,
}

struct Loader<'a> {
    file: &'a TensorFile,
    config: &'a ModelConfig,
}

impl<'a> Loader<'a> {
    fn find(&self, candidates: &[String], what: &str) -> Result<(Vec<usize>, Vec<f32>, usize)> {
        for (idx, name) in candidates.iter().enumerate() {
            if self.file.contains(name) {
                let (shape, data) = self.file.tensor_f32(name)?;
                return Ok((shape, data, idx));
            }
        }
        Err(Error::MissingTensor(format!(
            "{} ({what})",
            candidates.join(" | ")
        )))
    }

    fn vector(&self, candidates: &[String], len: usize, what: &str) -> Result<Vec<f32>> {
        let (shape, data, _) = self.find(candidates, what)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{what}: shape {shape:?}, expected {len} values"
            )));
        }
        Ok(data)
    }

    fn optional_vector(&self, candidates: &[String], len: usize, what: &str) -> Result<Option<Vec<f32>>> {
        if candidates.iter().any(|n| self.file.contains(n)) {
            Ok(Some(self.vector(candidates, len, what)?))
        } else {
            Ok(None)
        }
    }

    fn matrix(
        &self,
        candidates: &[String],
        rows: usize,
        cols: usize,
        what: &str,
    ) -> Result<DenseMatrix> {
        let (shape, data, _) = self.find(candidates, what)?;
        if shape != [rows, cols] {
            return Err(Error::Shape(format!(
                "{what}: shape {shape:?}, expected [{rows}, {cols}]"
            )));
        }
        DenseMatrix::from_vec(rows, cols, data)
    }

    fn norm(&self, gain: &[String], bias: &[String], what: &str) -> Result<NormParams> {
        Ok(NormParams {
            gain: self.vector(gain, self.config.width, &format!("{what} gain"))?,
            bias: self.vector(bias, self.config.width, &format!("{what} bias"))?,
        })
    }
}

fn names(list: &[String]) -> Vec<String> {
    list.to_vec()
}

impl CheckpointStore {
    pub fn load(path: &Path, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let file = TensorFile::read(path)?;
        Self::from_tensor_file(&file, config)
    }

    pub fn from_tensor_file(file: &TensorFile, config: &ModelConfig) -> Result<Self> {
        let d = config.width;
        let p = config.patch_size;
        let tokens = config.token_count();
        let ld = Loader { file, config };

        let (conv_shape, conv_data, _) = ld.find(
            &[
                "visual.conv1.weight".into(),
                "vision_model.embeddings.patch_embedding.weight".into(),
            ],
            "patch embedding kernel",
        )?;
        if conv_shape != [d, 3, p, p] {
            return Err(Error::Shape(format!(
                "patch embedding kernel: shape {conv_shape:?}, expected [{d}, 3, {p}, {p}]"
            )));
        }
        let patch_kernel = DenseMatrix::from_vec(d, 3 * p * p, conv_data)?;
        let patch_bias = ld.optional_vector(
            &[
                "visual.conv1.bias".into(),
                "vision_model.embeddings.patch_embedding.bias".into(),
            ],
            d,
            "patch embedding bias",
        )?;

        let class_embedding = ld.vector(
            &[
                "visual.class_embedding".into(),
                "vision_model.embeddings.class_embedding".into(),
            ],
            d,
            "class token",
        )?;
        let positional = ld.matrix(
            &[
                "visual.positional_embedding".into(),
                "vision_model.embeddings.position_embedding.weight".into(),
            ],
            tokens,
            d,
            "positional embeddings",
        )?;

        let ln_pre = if file.contains("visual.ln_pre.weight")
            || file.contains("vision_model.pre_layrnorm.weight")
        {
            Some(ld.norm(
                &names(&[
                    "visual.ln_pre.weight".into(),
                    "vision_model.pre_layrnorm.weight".into(),
                ]),
                &names(&[
                    "visual.ln_pre.bias".into(),
                    "vision_model.pre_layrnorm.bias".into(),
                ]),
                "pre-tower norm",
            )?)
        } else {
            None
        };

        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            layers.push(load_layer(&ld, i)?);
        }

        let ln_post = ld.norm(
            &names(&[
                "visual.ln_post.weight".into(),
                "vision_model.post_layernorm.weight".into(),
            ]),
            &names(&[
                "visual.ln_post.bias".into(),
                "vision_model.post_layernorm.bias".into(),
            ]),
            "final norm",
        )?;

        // `visual.proj` is stored (width, proj_dim) and right-multiplied;
        // `visual_projection.weight` is the torch (out, in) layout.
        let proj = if file.contains("visual.proj") {
            let (shape, data) = file.tensor_f32("visual.proj")?;
            if shape.len() != 2 || shape[0] != d {
                return Err(Error::Shape(format!(
                    "visual projection: shape {shape:?}, expected [{d}, proj_dim]"
                )));
            }
            DenseMatrix::from_vec(shape[0], shape[1], data)?
        } else if file.contains("visual_projection.weight") {
            let (shape, data) = file.tensor_f32("visual_projection.weight")?;
            if shape.len() != 2 || shape[1] != d {
                return Err(Error::Shape(format!(
                    "visual projection: shape {shape:?}, expected [proj_dim, {d}]"
                )));
            }
            DenseMatrix::from_vec(shape[0], shape[1], data)?.transpose()
        } else {
            return Err(Error::MissingTensor(
                "visual.proj | visual_projection.weight (visual projection)".into(),
            ));
        };
        let proj_dim = proj.cols();

        Ok(CheckpointStore {
            patch_kernel,
            patch_bias,
            class_embedding,
            positional,
            ln_pre,
            layers,
            ln_post,
            proj,
            proj_dim,
            checksum: file.checksum.clone(),
        })
    }

    /// Cheap re-validation used when a cached store is reused under a new
    /// request configuration.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        if self.layers.len() != config.layers
            || self.positional.rows() != config.token_count()
            || self.positional.cols() != config.width
            || self.patch_kernel.cols() != 3 * config.patch_size * config.patch_size
        {
            return Err(Error::Shape(format!(
                "checkpoint ({} layers, {} tokens, width {}) does not match configuration \
                 ({} layers, {} tokens, width {})",
                self.layers.len(),
                self.positional.rows(),
                self.positional.cols(),
                config.layers,
                config.token_count(),
                config.width,
            )));
        }
        Ok(())
    }
}

fn load_layer(ld: &Loader, i: usize) -> Result<LayerWeights> {
    let d = ld.config.width;
    let ocp = format!("visual.transformer.resblocks.{i}");
    let hf = format!("vision_model.encoder.layers.{i}");

    let ln1 = ld.norm(
        &[format!("{ocp}.ln_1.weight"), format!("{hf}.layer_norm1.weight")],
        &[format!("{ocp}.ln_1.bias"), format!("{hf}.layer_norm1.bias")],
        &format!("layer {i} pre-attention norm"),
    )?;

    let combined = format!("{ocp}.attn.in_proj_weight");
    let (w_q, w_k, w_v, b_q, b_k, b_v) = if ld.file.contains(&combined) {
        let (shape, data) = ld.file.tensor_f32(&combined)?;
        if shape != [3 * d, d] {
            return Err(Error::Shape(format!(
                "layer {i} in_proj_weight: shape {shape:?}, expected [{}, {d}]",
                3 * d
            )));
        }
        let full = DenseMatrix::from_vec(3 * d, d, data)?;
        let bias = ld
            .optional_vector(
                &[format!("{ocp}.attn.in_proj_bias")],
                3 * d,
                &format!("layer {i} in_proj_bias"),
            )?
            .unwrap_or_else(|| vec![0.0; 3 * d]);
        (
            full.sub_square(0, 0, d),
            full.sub_square(d, 0, d),
            full.sub_square(2 * d, 0, d),
            bias[..d].to_vec(),
            bias[d..2 * d].to_vec(),
            bias[2 * d..].to_vec(),
        )
    } else {
        let proj = |role: &str, what: &str| -> Result<(DenseMatrix, Vec<f32>)> {
            let w = ld.matrix(
                &[
                    format!("{ocp}.attn.{role}_proj.weight"),
                    format!("{hf}.self_attn.{role}_proj.weight"),
                ],
                d,
                d,
                &format!("layer {i} {what} projection"),
            )?;
            let b = ld
                .optional_vector(
                    &[
                        format!("{ocp}.attn.{role}_proj.bias"),
                        format!("{hf}.self_attn.{role}_proj.bias"),
                    ],
                    d,
                    &format!("layer {i} {what} projection bias"),
                )?
                .unwrap_or_else(|| vec![0.0; d]);
            Ok((w, b))
        };
        let (w_q, b_q) = proj("q", "query")?;
        let (w_k, b_k) = proj("k", "key")?;
        let (w_v, b_v) = proj("v", "value")?;
        (w_q, w_k, w_v, b_q, b_k, b_v)
    };

    let w_out = ld.matrix(
        &[
            format!("{ocp}.attn.out_proj.weight"),
            format!("{hf}.self_attn.out_proj.weight"),
        ],
        d,
        d,
        &format!("layer {i} output projection"),
    )?;
    let b_out = ld
        .optional_vector(
            &[
                format!("{ocp}.attn.out_proj.bias"),
                format!("{hf}.self_attn.out_proj.bias"),
            ],
            d,
            &format!("layer {i} output projection bias"),
        )?
        .unwrap_or_else(|| vec![0.0; d]);

    let ln2 = ld.norm(
        &[format!("{ocp}.ln_2.weight"), format!("{hf}.layer_norm2.weight")],
        &[format!("{ocp}.ln_2.bias"), format!("{hf}.layer_norm2.bias")],
        &format!("layer {i} pre-mlp norm"),
    )?;

    let (fc_shape, fc_data, _) = ld.find(
        &[format!("{ocp}.mlp.c_fc.weight"), format!("{hf}.mlp.fc1.weight")],
        &format!("layer {i} mlp expansion"),
    )?;
    if fc_shape.len() != 2 || fc_shape[1] != d {
        return Err(Error::Shape(format!(
            "layer {i} mlp expansion: shape {fc_shape:?}, expected [hidden, {d}]"
        )));
    }
    let hidden = fc_shape[0];
    let w_fc = DenseMatrix::from_vec(hidden, d, fc_data)?;
    let b_fc = ld
        .optional_vector(
            &[format!("{ocp}.mlp.c_fc.bias"), format!("{hf}.mlp.fc1.bias")],
            hidden,
            &format!("layer {i} mlp expansion bias"),
        )?
        .unwrap_or_else(|| vec![0.0; hidden]);
    let w_mlp_out = ld.matrix(
        &[format!("{ocp}.mlp.c_proj.weight"), format!("{hf}.mlp.fc2.weight")],
        d,
        hidden,
        &format!("layer {i} mlp contraction"),
    )?;
    let b_mlp_out = ld
        .optional_vector(
            &[format!("{ocp}.mlp.c_proj.bias"), format!("{hf}.mlp.fc2.bias")],
            d,
            &format!("layer {i} mlp contraction bias"),
        )?
        .unwrap_or_else(|| vec![0.0; d]);

    Ok(LayerWeights {
        ln1,
        w_q,
        b_q,
        w_k,
        b_k,
        w_v,
        b_v,
        w_out,
        b_out,
        ln2,
        w_fc,
        b_fc,
        w_mlp_out,
        b_mlp_out,
    })
}
