//! Bundled synthetic fixture: a tiny random-weight checkpoint (2 layers, 2
//! heads, width 16, patch 8, window 24), four images with label maps, class
//! embeddings, a manifest, and a matching run configuration. Everything is
//! deterministic in the seed, so the full test suite runs without any
//! external download.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model_io::{
    save_pgm_indices, save_pnm, save_raw_image, write_class_embeddings, ClassEmbeddingSet,
    DatasetManifest, ManifestItem, TensorFile, Variant,
};
use crate::numerics::{DenseMatrix, ImageTensor};

use super::run_config::{RunConfig, RunConfigPatch};

pub const FIXTURE_LAYERS: usize = 2;
pub const FIXTURE_HEADS: usize = 2;
pub const FIXTURE_WIDTH: usize = 16;
pub const FIXTURE_PATCH: usize = 8;
pub const FIXTURE_WINDOW: usize = 24;
pub const FIXTURE_PROJ_DIM: usize = 8;
pub const FIXTURE_DISTRACTION_DIMS: [usize; 2] = [4, 11];
pub const FIXTURE_TAU: f64 = 0.2;
pub const FIXTURE_CLASSES: [&str; 3] = ["alpha", "beta", "gamma"];
pub const FIXTURE_IGNORE: u32 = 255;

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub run_config: PathBuf,
    pub class_embeddings: PathBuf,
    pub manifest: PathBuf,
    pub images: Vec<PathBuf>,
}

/// The run configuration matching the fixture checkpoint.
pub fn fixture_run_config() -> RunConfig {
    let patch: RunConfigPatch = serde_json::from_value(serde_json::json!({
        "model": {
            "variant": "custom",
            "layers": FIXTURE_LAYERS,
            "heads": FIXTURE_HEADS,
            "width": FIXTURE_WIDTH,
            "patch_size": FIXTURE_PATCH,
            "image_size": FIXTURE_WINDOW,
            "distraction_dims": FIXTURE_DISTRACTION_DIMS,
            "tau": FIXTURE_TAU,
        },
        "stride": 12,
        "short_side": 32,
    }))
    .expect("fixture config is well-formed");
    let mut run = patch.resolve().expect("fixture config resolves");
    run.model.variant = Variant::Custom;
    run
}

fn uniform(rng: &mut ChaCha8Rng, scale: f32) -> f32 {
    (rng.random::<f32>() * 2.0 - 1.0) * scale
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> (Vec<usize>, Vec<f32>) {
    let count: usize = shape.iter().product();
    (
        shape.to_vec(),
        (0..count).map(|_| uniform(rng, scale)).collect(),
    )
}

fn norm_pair(rng: &mut ChaCha8Rng, d: usize) -> ((Vec<usize>, Vec<f32>), (Vec<usize>, Vec<f32>)) {
    let gain = (0..d).map(|_| 1.0 + uniform(rng, 0.05)).collect();
    let bias = (0..d).map(|_| uniform(rng, 0.02)).collect();
    ((vec![d], gain), (vec![d], bias))
}

/// Write the tiny checkpoint with split projection names.
pub fn write_fixture_checkpoint(path: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = FIXTURE_WIDTH;
    let p = FIXTURE_PATCH;
    let grid = FIXTURE_WINDOW / p;
    let tokens = grid * grid + 1;
    let w_scale = 0.5 / (d as f32).sqrt();

    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    tensors.insert(
        "visual.conv1.weight".into(),
        tensor(&mut rng, &[d, 3, p, p], 0.2),
    );
    tensors.insert("visual.class_embedding".into(), tensor(&mut rng, &[d], 0.3));
    tensors.insert(
        "visual.positional_embedding".into(),
        tensor(&mut rng, &[tokens, d], 0.3),
    );
    let (g, b) = norm_pair(&mut rng, d);
    tensors.insert("visual.ln_pre.weight".into(), g);
    tensors.insert("visual.ln_pre.bias".into(), b);

    for layer in 0..FIXTURE_LAYERS {
        let base = format!("visual.transformer.resblocks.{layer}");
        let (g, b) = norm_pair(&mut rng, d);
        tensors.insert(format!("{base}.ln_1.weight"), g);
        tensors.insert(format!("{base}.ln_1.bias"), b);
        for role in ["q", "k", "v"] {
            tensors.insert(
                format!("{base}.attn.{role}_proj.weight"),
                tensor(&mut rng, &[d, d], w_scale),
            );
            tensors.insert(
                format!("{base}.attn.{role}_proj.bias"),
                tensor(&mut rng, &[d], 0.02),
            );
        }
        tensors.insert(
            format!("{base}.attn.out_proj.weight"),
            tensor(&mut rng, &[d, d], w_scale),
        );
        tensors.insert(
            format!("{base}.attn.out_proj.bias"),
            tensor(&mut rng, &[d], 0.02),
        );
        let (g, b) = norm_pair(&mut rng, d);
        tensors.insert(format!("{base}.ln_2.weight"), g);
        tensors.insert(format!("{base}.ln_2.bias"), b);
        tensors.insert(
            format!("{base}.mlp.c_fc.weight"),
            tensor(&mut rng, &[2 * d, d], w_scale),
        );
        tensors.insert(
            format!("{base}.mlp.c_fc.bias"),
            tensor(&mut rng, &[2 * d], 0.02),
        );
        tensors.insert(
            format!("{base}.mlp.c_proj.weight"),
            tensor(&mut rng, &[d, 2 * d], w_scale),
        );
        tensors.insert(
            format!("{base}.mlp.c_proj.bias"),
            tensor(&mut rng, &[d], 0.02),
        );
    }
    let (g, b) = norm_pair(&mut rng, d);
    tensors.insert("visual.ln_post.weight".into(), g);
    tensors.insert("visual.ln_post.bias".into(), b);
    tensors.insert(
        "visual.proj".into(),
        tensor(&mut rng, &[d, FIXTURE_PROJ_DIM], 0.3),
    );

    let mut metadata = BTreeMap::new();
    metadata.insert("purpose".to_string(), "synthetic test fixture".to_string());
    metadata.insert("seed".to_string(), seed.to_string());
    TensorFile::write(path, &tensors, &metadata)
}

struct SyntheticImage {
    name: &'static str,
    height: usize,
    width: usize,
    raw: bool,
    label: fn(usize, usize, usize, usize) -> u32,
}

const IMAGES: [SyntheticImage; 4] = [
    SyntheticImage {
        name: "bands",
        height: 32,
        width: 48,
        raw: false,
        // Vertical thirds.
        label: |_y, x, _h, w| (3 * x / w).min(2) as u32,
    },
    SyntheticImage {
        name: "halves",
        height: 48,
        width: 36,
        raw: false,
        // Horizontal halves with an ignored strip on the boundary.
        label: |y, _x, h, _w| {
            if y >= h / 2 - 2 && y < h / 2 + 2 {
                FIXTURE_IGNORE
            } else if y < h / 2 {
                0
            } else {
                1
            }
        },
    },
    SyntheticImage {
        name: "quadrants",
        height: 40,
        width: 40,
        raw: false,
        label: |y, x, h, w| match (y < h / 2, x < w / 2) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 0,
        },
    },
    SyntheticImage {
        name: "diagonal",
        height: 28,
        width: 36,
        raw: true,
        label: |y, x, h, w| {
            if x * h > y * w {
                1
            } else {
                2
            }
        },
    },
];

fn class_color(class: u32) -> [f32; 3] {
    match class {
        0 => [0.75, 0.25, 0.2],
        1 => [0.2, 0.7, 0.3],
        2 => [0.25, 0.3, 0.8],
        _ => [0.5, 0.5, 0.5],
    }
}

/// Materialize the full fixture into `dir`.
pub fn make_fixture(dir: &Path, seed: u64) -> Result<FixturePaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F177);

    let checkpoint = dir.join("tiny.safetensors");
    write_fixture_checkpoint(&checkpoint, seed)?;

    let run = fixture_run_config();
    let run_config = dir.join("run_config.json");
    let text = serde_json::to_string_pretty(&run)
        .map_err(|e| Error::Decode(format!("run config encode: {e}")))?;
    fs::write(&run_config, text).map_err(|e| Error::io(&run_config, e))?;

    // Near-axis class embeddings; normalization happens on load.
    let mut emb = DenseMatrix::zeros(FIXTURE_CLASSES.len(), FIXTURE_PROJ_DIM);
    for (c, _) in FIXTURE_CLASSES.iter().enumerate() {
        for j in 0..FIXTURE_PROJ_DIM {
            let base = if j == c { 1.0 } else { 0.0 };
            emb.set(c, j, base + uniform(&mut rng, 0.15));
        }
    }
    let set = ClassEmbeddingSet::new(
        FIXTURE_CLASSES.iter().map(|s| s.to_string()).collect(),
        emb,
        Some("synthetic fixture embeddings".into()),
    )?;
    let class_embeddings = dir.join("classes.cemb");
    write_class_embeddings(&class_embeddings, &set)?;

    let mut items = Vec::new();
    let mut image_paths = Vec::new();
    for spec in &IMAGES {
        let (h, w) = (spec.height, spec.width);
        let mut img = ImageTensor::zeros(h, w, 3);
        let mut labels = vec![0u32; h * w];
        for y in 0..h {
            for x in 0..w {
                let class = (spec.label)(y, x, h, w);
                labels[y * w + x] = class;
                let color = class_color(class);
                for c in 0..3 {
                    let v = (color[c] + uniform(&mut rng, 0.08)).clamp(0.0, 1.0);
                    img.set(y, x, c, v);
                }
            }
        }
        let image_path = if spec.raw {
            let p = dir.join(format!("{}.rawimg", spec.name));
            save_raw_image(&p, &img)?;
            p
        } else {
            let p = dir.join(format!("{}.ppm", spec.name));
            save_pnm(&p, &img)?;
            p
        };
        let label_path = dir.join(format!("{}_labels.pgm", spec.name));
        save_pgm_indices(&label_path, w, h, &labels)?;
        items.push(ManifestItem {
            image: PathBuf::from(image_path.file_name().unwrap()),
            label: PathBuf::from(label_path.file_name().unwrap()),
        });
        image_paths.push(image_path);
    }

    let manifest_path = dir.join("manifest.json");
    let manifest = DatasetManifest {
        classes: FIXTURE_CLASSES.iter().map(|s| s.to_string()).collect(),
        ignore_label: FIXTURE_IGNORE,
        items,
    };
    manifest.save(&manifest_path)?;

    Ok(FixturePaths {
        dir: dir.to_path_buf(),
        checkpoint,
        run_config,
        class_embeddings,
        manifest: manifest_path,
        images: image_paths,
    })
}
