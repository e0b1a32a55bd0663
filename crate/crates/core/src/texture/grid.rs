use serde::{Deserialize, Serialize};

use super::{sample_latent, LatentCodeMap};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::mesh::{wrap_uv, TriMesh};

const DEGENERATE_UV_AREA: f64 = 1e-14;

/// Square UV window a face's grid is sampled over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWindow {
    pub center: Vec2,
    pub side: f64,
    /// Factors applied to the UV bounding box width and height to make it square.
    pub extension: (f64, f64),
    /// Zero-area UV triangle: every sample sits at the UV centroid.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceFeatureGrid {
    pub face: usize,
    pub density: usize,
    pub dim: usize,
    /// `density * density` vectors of length `dim`, row-major in (v, u).
    pub values: Vec<f64>,
    pub window: SampleWindow,
}

impl FaceFeatureGrid {
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.density + col) * self.dim;
        &self.values[i..i + self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

/// Uniform `density x density` sample positions for one face (row-major in v, then u).
///
/// The UV triangle is centred in a square window: the shorter side of its bounding box is
/// extended to the longer one, so sample spacing is equal along both axes. Samples outside
/// the triangle read whatever surrounds it in the map.
pub fn face_sample_points(mesh: &TriMesh, face: usize, density: usize) -> Result<(Vec<Vec2>, SampleWindow)> {
    if density == 0 {
        return Err(Error::Config("grid density must be positive".into()));
    }
    let uvs = mesh
        .uvs()
        .ok_or_else(|| Error::TextureAbsent("mesh has no UV coordinates".into()))?;
    let [a, b, c] = uvs[face];
    let uv_area = 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs();
    let lo = Vec2::new(a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y));
    let hi = Vec2::new(a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y));

    if uv_area <= DEGENERATE_UV_AREA {
        let centroid = Vec2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let window = SampleWindow {
            center: centroid,
            side: 0.0,
            extension: (1.0, 1.0),
            degenerate: true,
        };
        return Ok((vec![wrap_uv(centroid); density * density], window));
    }

    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let side = w.max(h);
    let center = Vec2::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
    let window = SampleWindow {
        center,
        side,
        extension: (side / w, side / h),
        degenerate: false,
    };
    let step = side / density as f64;
    let origin = Vec2::new(center.x - side / 2.0, center.y - side / 2.0);
    let mut points = Vec::with_capacity(density * density);
    for j in 0..density {
        for i in 0..density {
            let p = Vec2::new(origin.x + (i as f64 + 0.5) * step, origin.y + (j as f64 + 0.5) * step);
            points.push(wrap_uv(p));
        }
    }
    Ok((points, window))
}

pub fn face_feature_grid(mesh: &TriMesh, map: &LatentCodeMap, face: usize, density: usize) -> Result<FaceFeatureGrid> {
    let (points, window) = face_sample_points(mesh, face, density)?;
    let mut values = Vec::with_capacity(points.len() * map.dim);
    for p in points {
        values.extend(sample_latent(map, p));
    }
    Ok(FaceFeatureGrid {
        face,
        density,
        dim: map.dim,
        values,
        window,
    })
}

/// Reduces a grid to one vector. Max pooling keeps the first maximum on ties.
pub fn pool_face_feature(grid: &FaceFeatureGrid, mode: PoolMode) -> Vec<f64> {
    let n = grid.density * grid.density;
    let mut out = match mode {
        PoolMode::Mean => vec![0.0; grid.dim],
        PoolMode::Max => vec![f64::NEG_INFINITY; grid.dim],
    };
    for cell in grid.values.chunks_exact(grid.dim) {
        for (o, &v) in out.iter_mut().zip(cell) {
            match mode {
                PoolMode::Mean => *o += v,
                PoolMode::Max => {
                    if v > *o {
                        *o = v
                    }
                }
            }
        }
    }
    if mode == PoolMode::Mean {
        out.iter_mut().for_each(|o| *o /= n as f64);
    }
    out
}
