//! Small built-in dataset used by the CLI when no meshes are given, and by the test suites.

use std::sync::Arc;

use crate::error::Result;
use crate::features::geo_features;
use crate::geom::Vec3;
use crate::mesh::{primitives, TriMesh};
use crate::model::{InputMode, ModelConfig, PatchConfig, TextureInputConfig};
use crate::saliency::{MapKind, Normalization, SaliencyMap};
use crate::ssm::SsmConfig;
use crate::texture::TextureImage;
use crate::train::TrainConfig;

/// RGB checkerboard with `cell`-texel squares, red/blue swapped between squares.
pub fn checker_texture(size: usize, cell: usize) -> TextureImage {
    let data = (0..size * size)
        .flat_map(|i| {
            let (x, y) = (i % size, i / size);
            let c = ((x / cell + y / cell) % 2) as f64;
            [c, 0.5, 1.0 - c]
        })
        .collect();
    TextureImage::new(size, size, 3, data).expect("valid checker")
}

/// 200-face perturbed sphere with spherical UVs and a checker texture.
pub fn demo_mesh() -> TriMesh {
    primitives::with_spherical_uvs(&primitives::bumpy_sphere(10, 11, 0.15, 4))
        .with_texture(Arc::new(checker_texture(32, 4)))
}

/// Per-face `ln(irregularity / sqrt 3)`: zero on equilateral faces, growing with distortion.
pub fn irregularity_target(mesh: &TriMesh) -> Result<SaliencyMap> {
    let values = geo_features(mesh)?
        .iter()
        .map(|g| (g.shape.irregularity / 3f64.sqrt()).ln())
        .collect();
    SaliencyMap::new(values, MapKind::GroundTruth, Normalization::Raw)
}

/// Compact model sized for the demo mesh.
pub fn demo_model_config(input: InputMode) -> ModelConfig {
    ModelConfig {
        input,
        encoder_width: 32,
        token_dim: 32,
        head_hidden: 32,
        patches: PatchConfig {
            count: 16,
            size: 16,
            ..Default::default()
        },
        ssm: SsmConfig {
            state_dim: 8,
            blocks: 2,
            ..Default::default()
        },
        texture: TextureInputConfig {
            density: 4,
            ..Default::default()
        },
        seed: 3,
        ..Default::default()
    }
}

pub fn demo_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 300,
        lr: 3e-3,
        decay_every: 100,
        lr_decay: 0.3,
        weight_decay: 0.0,
        ..Default::default()
    }
}

/// Gaussian bump `exp(-|c - anchor|^2 / width)` over face centers.
pub fn salient_patch(mesh: &TriMesh, anchor: Vec3, width: f64) -> Vec<f64> {
    mesh.face_centers()
        .iter()
        .map(|c| (-c.distance(anchor).powi(2) / width).exp())
        .collect()
}

/// Indices of the highest `fraction` of `values`, ties broken by index.
pub fn top_fraction(values: &[f64], fraction: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    order.truncate((values.len() as f64 * fraction).round() as usize);
    order
}
