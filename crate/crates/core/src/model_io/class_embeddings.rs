//! Precomputed class text embeddings.
//!
//! The text encoder is external; this file format carries its output. Either
//! a binary container (JSON header + little-endian f32 payload) or, for
//! small fixtures, a CSV with one `name,v0,v1,...` row per class.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone)]
pub struct ClassEmbeddingSet {
    pub names: Vec<String>,
    /// (classes, shared width), rows unit-normalized.
    pub embeddings: DenseMatrix,
    pub prompt_note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    classes: Vec<String>,
    width: usize,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_note: Option<String>,
}

impl ClassEmbeddingSet {
    /// Build from raw rows, renormalizing each to unit L2 norm.
    pub fn new(
        names: Vec<String>,
        mut embeddings: DenseMatrix,
        prompt_note: Option<String>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Parameter("class list is empty".into()));
        }
        if names.len() != embeddings.rows() {
            return Err(Error::Shape(format!(
                "{} class names but {} embedding rows",
                names.len(),
                embeddings.rows()
            )));
        }
        for i in 0..embeddings.rows() {
            let row = embeddings.row_mut(i);
            let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Decode(format!(
                    "class '{}' has a zero embedding",
                    names[i]
                )));
            }
            let inv = (1.0 / norm) as f32;
            for v in row {
                *v *= inv;
            }
        }
        Ok(ClassEmbeddingSet {
            names,
            embeddings,
            prompt_note,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn width(&self) -> usize {
        self.embeddings.cols()
    }
}

pub fn load_class_embeddings(path: &Path) -> Result<ClassEmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        return parse_csv(&bytes, path);
    }
    if bytes.len() < 8 {
        return Err(Error::Decode(format!("{}: truncated", path.display())));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + len {
        return Err(Error::Decode(format!("{}: truncated header", path.display())));
    }
    let header: EmbeddingHeader = serde_json::from_slice(&bytes[8..8 + len])
        .map_err(|e| Error::Decode(format!("{}: header json: {e}", path.display())))?;
    if header.dtype != "F32" {
        return Err(Error::Decode(format!(
            "{}: dtype {} unsupported",
            path.display(),
            header.dtype
        )));
    }
    let payload = &bytes[8 + len..];
    let count = header.classes.len() * header.width;
    if payload.len() != count * 4 {
        return Err(Error::Decode(format!(
            "{}: payload {} bytes, expected {}",
            path.display(),
            payload.len(),
            count * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = DenseMatrix::from_vec(header.classes.len(), header.width, data)?;
    ClassEmbeddingSet::new(header.classes, matrix, header.prompt_note)
}

pub fn write_class_embeddings(path: &Path, set: &ClassEmbeddingSet) -> Result<()> {
    let header = serde_json::to_vec(&EmbeddingHeader {
        classes: set.names.clone(),
        width: set.width(),
        dtype: "F32".into(),
        prompt_note: set.prompt_note.clone(),
    })
    .map_err(|e| Error::Decode(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(8 + header.len() + set.embeddings.data().len() * 4);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in set.embeddings.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_csv(bytes: &[u8], path: &Path) -> Result<ClassEmbeddingSet> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Decode(format!("{}: not utf-8", path.display())))?;
    let mut names = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let name = parts
            .next()
            .ok_or_else(|| Error::Decode(format!("{}:{}: empty row", path.display(), lineno + 1)))?
            .trim();
        let values: Vec<f32> = parts
            .map(|p| p.trim().parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| {
                Error::Decode(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(Error::Decode(format!(
                    "{}:{}: width {} differs from {}",
                    path.display(),
                    lineno + 1,
                    values.len(),
                    first.len()
                )));
            }
        }
        names.push(name.to_string());
        rows.push(values);
    }
    if names.is_empty() {
        return Err(Error::Parameter(format!(
            "{}: no classes in file",
            path.display()
        )));
    }
    let matrix = DenseMatrix::from_rows(&rows)?;
    ClassEmbeddingSet::new(names, matrix, None)
}
