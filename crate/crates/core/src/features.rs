//! Per-face geometric descriptors: position, local curvature and triangle shape.
//!
//! Model-input layout (columns in this order, each group can be switched off):
//!
//! | group   | columns | content                                                  |
//! |---------|---------|----------------------------------------------------------|
//! | spatial | 3       | center in the unit bounding box                          |
//! | curve   | 3       | normal cosines to edge neighbors, padded with 1, sorted  |
//! | shape   | 8       | 3 corner angles / pi, 3 corner lengths / diagonal,       |
//! |         |         | area / diagonal², ln(irregularity / sqrt 3)              |

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::mesh::TriMesh;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeature {
    /// Pairwise angles between corner vectors `(c0,c1)`, `(c1,c2)`, `(c2,c0)`, in degrees.
    pub angles_deg: [f64; 3],
    /// Corner vector lengths.
    pub lengths: [f64; 3],
    pub area: f64,
    /// Longest edge over twice the inradius; `sqrt 3` for an equilateral triangle.
    pub irregularity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFeature {
    pub spatial: [f64; 3],
    pub curve: [f64; 3],
    pub shape: ShapeFeature,
}

/// Coordinates in `[0,1]`; axes with zero extent map to 0.5.
pub fn normalize_to_box(p: Vec3, bounds: &Aabb) -> [f64; 3] {
    let e = bounds.extent();
    std::array::from_fn(|k| {
        if e[k] > 0.0 {
            ((p[k] - bounds.min[k]) / e[k]).clamp(0.0, 1.0)
        } else {
            0.5
        }
    })
}

pub fn spatial_feature(mesh: &TriMesh, face: usize) -> [f64; 3] {
    normalize_to_box(mesh.face_center(face), &mesh.bounds())
}

/// The three smallest normal cosines to edge neighbors, ascending, padded with 1.
pub fn curve_feature(mesh: &TriMesh, face: usize) -> [f64; 3] {
    let n = mesh.face_normal(face);
    let mut cos: Vec<f64> = mesh
        .neighbors(face)
        .iter()
        .map(|&j| n.dot(mesh.face_normal(j)).clamp(-1.0, 1.0))
        .collect();
    cos.sort_by(f64::total_cmp);
    std::array::from_fn(|k| cos.get(k).copied().unwrap_or(1.0))
}

pub fn shape_feature(mesh: &TriMesh, face: usize) -> Result<ShapeFeature> {
    let basis = mesh.face_basis(face)?;
    let c = basis.corners;
    let angles_deg = [0, 1, 2].map(|k| c[k].angle_to(c[(k + 1) % 3]).to_degrees());
    let lengths = c.map(Vec3::length);
    let [a, b, d] = mesh.face_vertices(face);
    let edges = [b.distance(a), d.distance(b), a.distance(d)];
    let longest = edges.iter().copied().fold(0.0, f64::max);
    let semi = edges.iter().sum::<f64>() / 2.0;
    let inradius = basis.area / semi;
    Ok(ShapeFeature {
        angles_deg,
        lengths,
        area: basis.area,
        irregularity: longest / (2.0 * inradius),
    })
}

pub fn geo_features(mesh: &TriMesh) -> Result<Vec<GeoFeature>> {
    let bounds = mesh.bounds();
    (0..mesh.face_count())
        .into_par_iter()
        .map(|f| {
            Ok(GeoFeature {
                spatial: normalize_to_box(mesh.face_center(f), &bounds),
                curve: curve_feature(mesh, f),
                shape: shape_feature(mesh, f)?,
            })
        })
        .collect()
}

/// Which geometric groups enter the model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureGroups {
    pub spatial: bool,
    pub curve: bool,
    pub shape: bool,
}

impl Default for FeatureGroups {
    fn default() -> Self {
        FeatureGroups {
            spatial: true,
            curve: true,
            shape: true,
        }
    }
}

impl FeatureGroups {
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.spatial {
            names.extend(["spatial.x", "spatial.y", "spatial.z"].map(String::from));
        }
        if self.curve {
            names.extend(["curve.0", "curve.1", "curve.2"].map(String::from));
        }
        if self.shape {
            names.extend(
                [
                    "shape.angle01",
                    "shape.angle12",
                    "shape.angle20",
                    "shape.length0",
                    "shape.length1",
                    "shape.length2",
                    "shape.area",
                    "shape.log_irregularity",
                ]
                .map(String::from),
            );
        }
        names
    }

    pub fn dim(&self) -> usize {
        3 * self.spatial as usize + 3 * self.curve as usize + 8 * self.shape as usize
    }
}

/// Scale-normalized feature matrix (faces x `groups.dim()`), see the module docs.
pub fn geometry_matrix(mesh: &TriMesh, feats: &[GeoFeature], groups: FeatureGroups) -> Mat {
    let diag = mesh.bounds().extent().length().max(f64::MIN_POSITIVE);
    let rows: Vec<Vec<f64>> = feats
        .iter()
        .map(|g| {
            let mut r = Vec::with_capacity(groups.dim());
            if groups.spatial {
                r.extend(g.spatial);
            }
            if groups.curve {
                r.extend(g.curve);
            }
            if groups.shape {
                r.extend(g.shape.angles_deg.map(|a| a / 180.0));
                r.extend(g.shape.lengths.map(|l| l / diag));
                r.push(g.shape.area / (diag * diag));
                r.push((g.shape.irregularity / 3f64.sqrt()).ln());
            }
            r
        })
        .collect();
    if rows.is_empty() {
        Mat::zeros(0, groups.dim())
    } else {
        Mat::from_rows(&rows)
    }
}

/// Mean vertex color per face, if the mesh carries colors.
pub fn face_colors(mesh: &TriMesh) -> Option<Mat> {
    let colors = mesh.colors()?;
    Some(Mat::from_fn(mesh.face_count(), 3, |f, k| {
        mesh.faces()[f].iter().map(|&v| colors[v][k]).sum::<f64>() / 3.0
    }))
}

const DUMP_MAGIC: &[u8; 4] = b"MSFD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub rows: usize,
    pub cols: usize,
    pub columns: Vec<String>,
    pub dtype: String,
}

/// `MSFD`, little-endian `u32` header length, JSON header, then row-major `f64` LE data.
pub fn write_feature_dump(path: &Path, matrix: &Mat, columns: &[String]) -> Result<()> {
    if columns.len() != matrix.cols {
        return Err(Error::LengthMismatch {
            left: columns.len(),
            right: matrix.cols,
        });
    }
    let header = DumpHeader {
        rows: matrix.rows,
        cols: matrix.cols,
        columns: columns.to_vec(),
        dtype: "f64le".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * matrix.len());
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &matrix.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_feature_dump(path: &Path) -> Result<(DumpHeader, Mat)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format {
        line: 0,
        message: format!("feature dump: {m}"),
    };
    if bytes.len() < 8 || &bytes[..4] != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header: DumpHeader = serde_json::from_slice(bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?)
        .map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[8 + hlen..];
    if body.len() != 8 * header.rows * header.cols {
        return Err(bad("data length does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mat = Mat::from_vec(header.rows, header.cols, data);
    Ok((header, mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, MeshParts};

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> TriMesh {
        TriMesh::new(vec![a.into(), b.into(), c.into()], vec![[0, 1, 2]]).unwrap()
    }

    #[test]
    fn equilateral_shape() {
        let h = 3f64.sqrt() / 2.0;
        let s = shape_feature(&tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]), 0).unwrap();
        for a in s.angles_deg {
            assert!((a - 120.0).abs() < 1e-9);
        }
        assert!((s.lengths[0] - s.lengths[1]).abs() < 1e-12 && (s.lengths[1] - s.lengths[2]).abs() < 1e-12);
        assert!((s.irregularity - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn right_isoceles_area() {
        let s = shape_feature(&tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), 0).unwrap();
        assert!((s.area - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_face_spatial_is_midpoint_on_flat_axis() {
        let m = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let s = spatial_feature(&m, 0);
        assert_eq!(s[2], 0.5);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn coplanar_and_perpendicular_neighbors() {
        let flat = primitives::textured_grid(2, 1, 1.0);
        for f in 0..flat.face_count() {
            assert!(curve_feature(&flat, f).iter().all(|c| (c - 1.0).abs() < 1e-12));
        }
        let cube = primitives::cube(1.0);
        for f in 0..12 {
            let c = curve_feature(&cube, f);
            // one coplanar partner and two perpendicular neighbors
            assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12 && (c[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_face_is_padded() {
        let m = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(1.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let c = curve_feature(&m, 0);
        assert!(c[0] < 1.0);
        assert_eq!(&c[1..], &[1.0, 1.0]);
    }

    #[test]
    fn mean_color_per_face() {
        let m = TriMesh::from_parts(MeshParts {
            vertices: vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            faces: vec![[0, 1, 2]],
            colors: Some(vec![
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ]),
            ..Default::default()
        })
        .unwrap();
        let c = face_colors(&m).unwrap();
        for k in 0..3 {
            assert!((c.get(0, k) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layout_dims() {
        let g = FeatureGroups::default();
        assert_eq!(g.dim(), 14);
        assert_eq!(g.column_names().len(), 14);
        let no_shape = FeatureGroups { shape: false, ..g };
        assert_eq!(no_shape.dim(), 6);
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let m = Mat::from_fn(3, 2, |r, c| r as f64 * 0.1 + c as f64);
        let cols = vec!["a".to_string(), "b".to_string()];
        write_feature_dump(&path, &m, &cols).unwrap();
        let (h, back) = read_feature_dump(&path).unwrap();
        assert_eq!(h.columns, cols);
        assert_eq!(back, m);
    }
}
