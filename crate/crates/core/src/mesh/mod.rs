//! Indexed triangle meshes with per-face adjacency.
//!
//! A [`TriMesh`] is immutable once built: construction drops degenerate faces,
//! wraps UVs into the unit square and builds the edge-adjacency table that every
//! downstream stage (features, graph convolution, random walks) relies on.

mod adjacency;
mod obj;
pub mod primitives;

use std::sync::Arc;

pub use adjacency::{build_adjacency, winding_lint, AdjacencyReport};
pub use obj::{load_mesh, parse_obj, write_obj, LoadOptions};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec2, Vec3};
use crate::texture::TextureImage;

/// Faces whose doubled area falls below this fraction of their squared longest edge are
/// treated as zero-area.
const DEGENERATE_REL_AREA: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    uvs: Option<Vec<[Vec2; 3]>>,
    colors: Option<Vec<Vec3>>,
    adjacency: Vec<Vec<usize>>,
    texture: Option<Arc<TextureImage>>,
    report: LoadReport,
}

/// What construction had to fix or flag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub dropped_degenerate: usize,
    pub non_manifold_edges: usize,
    pub inconsistent_winding_edges: usize,
    pub warnings: Vec<String>,
}

/// Per-face frame: center, unit normal and corner offsets from the center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBasis {
    pub center: Vec3,
    pub normal: Vec3,
    pub corners: [Vec3; 3],
    pub area: f64,
}

/// Builder input for [`TriMesh::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct MeshParts {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Option<Vec<[Vec2; 3]>>,
    pub colors: Option<Vec<Vec3>>,
}

impl TriMesh {
    /// Geometry-only constructor.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        Self::from_parts(MeshParts {
            vertices,
            faces,
            ..Default::default()
        })
    }

    pub fn from_parts(parts: MeshParts) -> Result<Self> {
        let MeshParts {
            vertices,
            faces,
            uvs,
            colors,
        } = parts;
        if let Some(c) = &colors {
            if c.len() != vertices.len() {
                return Err(Error::LengthMismatch {
                    left: c.len(),
                    right: vertices.len(),
                });
            }
        }
        if let Some(u) = &uvs {
            if u.len() != faces.len() {
                return Err(Error::LengthMismatch {
                    left: u.len(),
                    right: faces.len(),
                });
            }
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Config(format!("vertex {i} is not finite")));
            }
        }

        let mut report = LoadReport::default();
        let mut kept_faces = Vec::with_capacity(faces.len());
        let mut kept_uvs = uvs.as_ref().map(|_| Vec::with_capacity(faces.len()));
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::Config(format!(
                    "face {fi} references vertex {bad} but only {} exist",
                    vertices.len()
                )));
            }
            if is_degenerate(&vertices, *f) {
                report.dropped_degenerate += 1;
                continue;
            }
            kept_faces.push(*f);
            if let (Some(dst), Some(src)) = (kept_uvs.as_mut(), uvs.as_ref()) {
                dst.push(src[fi].map(wrap_uv));
            }
        }
        if report.dropped_degenerate > 0 {
            report
                .warnings
                .push(format!("dropped {} degenerate face(s)", report.dropped_degenerate));
        }

        let adj = build_adjacency(&kept_faces);
        report.non_manifold_edges = adj.non_manifold_edges;
        if adj.non_manifold_edges > 0 {
            report.warnings.push(format!(
                "{} non-manifold edge(s); incident faces made mutually adjacent",
                adj.non_manifold_edges
            ));
        }
        report.inconsistent_winding_edges = winding_lint(&kept_faces);
        if report.inconsistent_winding_edges > 0 {
            report.warnings.push(format!(
                "{} edge(s) with inconsistent winding",
                report.inconsistent_winding_edges
            ));
        }
        for w in &report.warnings {
            log::warn!("{w}");
        }

        Ok(TriMesh {
            vertices,
            faces: kept_faces,
            uvs: kept_uvs,
            colors,
            adjacency: adj.adjacency,
            texture: None,
            report,
        })
    }

    pub fn with_texture(mut self, texture: Arc<TextureImage>) -> Self {
        self.texture = Some(texture);
        self
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn uvs(&self) -> Option<&[[Vec2; 3]]> {
        self.uvs.as_deref()
    }

    pub fn colors(&self) -> Option<&[Vec3]> {
        self.colors.as_deref()
    }

    pub fn texture(&self) -> Option<&Arc<TextureImage>> {
        self.texture.as_ref()
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn neighbors(&self, face: usize) -> &[usize] {
        &self.adjacency[face]
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    pub fn face_center(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(face);
        (a + b + c) / 3.0
    }

    pub fn face_centers(&self) -> Vec<Vec3> {
        (0..self.faces.len()).map(|f| self.face_center(f)).collect()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_vertices(face);
        0.5 * (b - a).cross(c - a).length()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    pub fn face_bounds(&self, face: usize) -> Aabb {
        Aabb::from_points(self.face_vertices(face))
    }

    /// Center, normal, corner offsets and area of one face.
    pub fn face_basis(&self, face: usize) -> Result<FaceBasis> {
        if face >= self.faces.len() {
            return Err(Error::Config(format!(
                "face index {face} out of range ({} faces)",
                self.faces.len()
            )));
        }
        let [a, b, c] = self.face_vertices(face);
        let center = (a + b + c) / 3.0;
        let n = (b - a).cross(c - a);
        let normal = n.try_normalize().ok_or(Error::DegenerateGeometry { face })?;
        Ok(FaceBasis {
            center,
            normal,
            corners: [a - center, b - center, c - center],
            area: 0.5 * n.length(),
        })
    }

    /// Unit normal by the right-hand rule on stored vertex order; zero for degenerate faces.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(face);
        (b - a).cross(c - a).try_normalize().unwrap_or(Vec3::ZERO)
    }
}

fn is_degenerate(vertices: &[Vec3], f: [usize; 3]) -> bool {
    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
        return true;
    }
    let [a, b, c] = f.map(|i| vertices[i]);
    let twice_area = (b - a).cross(c - a).length();
    let longest = (b - a)
        .length_squared()
        .max((c - b).length_squared())
        .max((a - c).length_squared());
    twice_area <= DEGENERATE_REL_AREA * longest || longest == 0.0
}

/// Repeat wrap; coordinates already inside [0, 1] (including 1.0) are left untouched.
pub fn wrap_uv(uv: Vec2) -> Vec2 {
    fn wrap(x: f64) -> f64 {
        if (0.0..=1.0).contains(&x) {
            x
        } else {
            x - x.floor()
        }
    }
    Vec2::new(wrap(uv.x), wrap(uv.y))
}
