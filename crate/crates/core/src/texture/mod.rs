//! Texture alignment: encode a texture into a latent code map, then sample it per face
//! on an aspect-corrected uniform grid with bilinear interpolation.

mod cache;
mod encoder;
mod grid;

use std::path::Path;

pub use cache::{latent_cache_key, load_latent_sidecar, save_latent_sidecar};
pub use encoder::{encoder_registry, im2col, ConvEncoder, EncoderConfig, IdentityEncoder, TextureEncoder};
pub use grid::{face_feature_grid, face_sample_points, pool_face_feature, FaceFeatureGrid, PoolMode, SampleWindow};

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Row-major raster (row 0 is the top of the image), values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl TextureImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Config("texture dimensions must be positive".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height * channels,
            });
        }
        Ok(TextureImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, color: &[f64]) -> Self {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * color.len())
            .collect();
        TextureImage::new(width, height, color.len(), data).expect("valid constant image")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw): (usize, Vec<u8>) = match img.color().channel_count() {
            1 | 2 => (1, img.to_luma8().into_raw()),
            3 => (3, img.to_rgb8().into_raw()),
            _ => (4, img.to_rgba8().into_raw()),
        };
        let data = raw.into_iter().map(|b| b as f64 / 255.0).collect();
        TextureImage::new(w, h, channels, data)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

/// Feature grid spatially aligned with the texture it was encoded from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodeMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub codes: Vec<f64>,
}

impl LatentCodeMap {
    pub fn code(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.dim;
        &self.codes[i..i + self.dim]
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }
}

/// The four cells surrounding `uv` and their bilinear weights, as `(cell_index, weight)`.
///
/// Cell `(x, y)` has its center at `u = (x + 0.5) / width`, `v = 1 - (y + 0.5) / height`
/// (image rows run top-down, `v` runs bottom-up). Indices wrap (repeat mode).
pub fn bilinear_taps(width: usize, height: usize, uv: Vec2) -> [(usize, f64); 4] {
    // Snap to the lattice so cell-center queries are exact despite rounding.
    let snap = |p: f64| if (p - p.round()).abs() < 1e-9 { p.round() } else { p };
    let px = snap(uv.x * width as f64 - 0.5);
    let py = snap((1.0 - uv.y) * height as f64 - 0.5);
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let wrap = |i: f64, n: usize| (i as i64).rem_euclid(n as i64) as usize;
    let (xa, xb) = (wrap(x0, width), wrap(x0 + 1.0, width));
    let (ya, yb) = (wrap(y0, height), wrap(y0 + 1.0, height));
    [
        (ya * width + xa, (1.0 - fx) * (1.0 - fy)),
        (ya * width + xb, fx * (1.0 - fy)),
        (yb * width + xa, (1.0 - fx) * fy),
        (yb * width + xb, fx * fy),
    ]
}

/// Bilinear blend of the four cell codes nearest to `uv`.
pub fn sample_latent(map: &LatentCodeMap, uv: Vec2) -> Vec<f64> {
    let uv = crate::mesh::wrap_uv(uv);
    let mut out = vec![0.0; map.dim];
    for (cell, w) in bilinear_taps(map.width, map.height, uv) {
        if w == 0.0 {
            continue;
        }
        let code = &map.codes[cell * map.dim..(cell + 1) * map.dim];
        for (o, c) in out.iter_mut().zip(code) {
            *o += w * c;
        }
    }
    out
}
