//! Wavefront OBJ reading and writing (triangles only).
//!
//! Supported records: `v x y z [r g b]`, `vt u v [w]`, `f` in any of the
//! `a`, `a/b`, `a/b/c`, `a//c` forms (negative indices allowed), and `mtllib`
//! whose first `map_Kd` names the texture. Everything else is ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{MeshParts, TriMesh};
use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::texture::TextureImage;

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Explicit texture path; overrides any `mtllib`/`map_Kd` reference.
    pub texture: Option<PathBuf>,
    /// Skip texture decoding entirely.
    pub skip_texture: bool,
}

/// Parsed OBJ text before mesh construction.
#[derive(Debug, Clone, Default)]
struct ObjData {
    parts: MeshParts,
    mtllib: Option<String>,
}

pub fn load_mesh(path: &Path, options: &LoadOptions) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_obj_data(&text)?;
    let has_uvs = data.parts.uvs.is_some();
    let mut mesh = TriMesh::from_parts(data.parts)?;
    if mesh.face_count() == 0 {
        return Err(Error::Format {
            line: 0,
            message: format!("{} has no usable triangles", path.display()),
        });
    }

    if options.skip_texture {
        return Ok(mesh);
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let tex_path = match &options.texture {
        Some(p) => Some(p.clone()),
        None => data
            .mtllib
            .as_deref()
            .and_then(|lib| texture_from_mtl(&base.join(lib)))
            .map(|p| base.join(p)),
    };
    match tex_path {
        Some(p) => match TextureImage::load(&p) {
            Ok(img) => mesh = mesh.with_texture(Arc::new(img)),
            Err(e) if has_uvs => {
                log::warn!("texture {} unavailable ({e}); continuing without texture", p.display());
                mesh.report.warnings.push(format!("texture missing: {}", p.display()));
            }
            Err(e) => return Err(e),
        },
        None if has_uvs => {
            log::warn!("mesh has UVs but no texture reference");
            mesh.report.warnings.push("UVs present but no texture".to_string());
        }
        None => {}
    }
    Ok(mesh)
}

/// Parses OBJ text into a mesh (no texture lookup).
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    TriMesh::from_parts(parse_obj_data(text)?.parts)
}

fn texture_from_mtl(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(path).ok()?;
    text.lines().find_map(|l| {
        let mut it = l.split_whitespace();
        (it.next() == Some("map_Kd")).then(|| it.last().map(str::to_string))?
    })
}

fn parse_obj_data(text: &str) -> Result<ObjData> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut faces = Vec::new();
    let mut face_uv_idx: Vec<Option<[usize; 3]>> = Vec::new();
    let mut mtllib = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(tag) = tok.next() else { continue };
        match tag {
            "v" => {
                let nums = parse_floats(tok, line_no)?;
                match nums.len() {
                    3 | 4 => vertices.push(Vec3::new(nums[0], nums[1], nums[2])),
                    6 | 7 => {
                        vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                        if colors.len() + 1 != vertices.len() {
                            return Err(format_err(line_no, "vertex colors must be given for every vertex"));
                        }
                        colors.push(Vec3::new(nums[3], nums[4], nums[5]));
                    }
                    n => return Err(format_err(line_no, &format!("vertex with {n} components"))),
                }
            }
            "vt" => {
                let nums = parse_floats(tok, line_no)?;
                if nums.len() < 2 {
                    return Err(format_err(line_no, "texture coordinate needs u and v"));
                }
                texcoords.push(Vec2::new(nums[0], nums[1]));
            }
            "f" => {
                let corners: Vec<&str> = tok.collect();
                if corners.len() != 3 {
                    if corners.len() < 3 {
                        return Err(format_err(line_no, "face needs at least three vertices"));
                    }
                    return Err(Error::UnsupportedTopology {
                        line: line_no,
                        vertices: corners.len(),
                    });
                }
                let mut vi = [0usize; 3];
                let mut ti = [0usize; 3];
                let mut has_t = 0;
                for (k, c) in corners.iter().enumerate() {
                    let mut fields = c.split('/');
                    let v = fields.next().unwrap_or("");
                    vi[k] = resolve_index(v, vertices.len(), line_no)?;
                    if let Some(t) = fields.next().filter(|t| !t.is_empty()) {
                        ti[k] = resolve_index(t, texcoords.len(), line_no)?;
                        has_t += 1;
                    }
                }
                if has_t != 0 && has_t != 3 {
                    return Err(format_err(
                        line_no,
                        "face mixes corners with and without texture coordinates",
                    ));
                }
                faces.push(vi);
                face_uv_idx.push((has_t == 3).then_some(ti));
            }
            "mtllib" => mtllib = tok.next().map(str::to_string),
            _ => {}
        }
    }

    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(format_err(0, "vertex colors must be given for every vertex"));
    }
    let with_uv = face_uv_idx.iter().filter(|t| t.is_some()).count();
    let uvs = if with_uv == faces.len() && !faces.is_empty() {
        Some(
            face_uv_idx
                .iter()
                .map(|t| t.expect("checked").map(|i| texcoords[i]))
                .collect(),
        )
    } else {
        if with_uv > 0 {
            log::warn!("only {with_uv} of {} faces carry UVs; ignoring UVs", faces.len());
        }
        None
    };

    Ok(ObjData {
        parts: MeshParts {
            vertices,
            faces,
            uvs,
            colors: (!colors.is_empty()).then_some(colors),
        },
        mtllib,
    })
}

fn format_err(line: usize, message: &str) -> Error {
    Error::Format {
        line,
        message: message.to_string(),
    }
}

fn parse_floats<'a>(tok: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    tok.map(|t| {
        t.parse::<f64>()
            .map_err(|_| format_err(line, &format!("invalid number '{t}'")))
    })
    .collect()
}

fn resolve_index(s: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = s
        .parse()
        .map_err(|_| format_err(line, &format!("invalid index '{s}'")))?;
    let resolved = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(format_err(line, &format!("index {i} out of range ({count} defined)")));
    }
    Ok(resolved as usize)
}

/// Serializes with shortest round-trip float formatting, so reloading reproduces the
/// stored values bit for bit.
pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let colors = mesh.colors();
    for (i, v) in mesh.vertices().iter().enumerate() {
        match colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(out, "v {:?} {:?} {:?} {:?} {:?} {:?}", v.x, v.y, v.z, c.x, c.y, c.z);
            }
            None => {
                let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
            }
        }
    }
    match mesh.uvs() {
        Some(uvs) => {
            let mut index: HashMap<(u64, u64), usize> = HashMap::new();
            let mut face_t = Vec::with_capacity(uvs.len());
            for corners in uvs {
                let mut t = [0usize; 3];
                for (k, uv) in corners.iter().enumerate() {
                    let key = (uv.x.to_bits(), uv.y.to_bits());
                    let next = index.len();
                    t[k] = *index.entry(key).or_insert_with(|| {
                        let _ = writeln!(out, "vt {:?} {:?}", uv.x, uv.y);
                        next
                    });
                }
                face_t.push(t);
            }
            for (f, t) in mesh.faces().iter().zip(&face_t) {
                let _ = writeln!(
                    out,
                    "f {}/{} {}/{} {}/{}",
                    f[0] + 1,
                    t[0] + 1,
                    f[1] + 1,
                    t[1] + 1,
                    f[2] + 1,
                    t[2] + 1
                );
            }
        }
        None => {
            for f in mesh.faces() {
                let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn quad_face_is_unsupported() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        match parse_obj(text) {
            Err(Error::UnsupportedTopology { line: 5, vertices: 4 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let text = "v 0 0 0\nv 1 zero 0\n";
        match parse_obj(text) {
            Err(Error::Format { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_forms_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 1\nf -3/1/1 2/2/1 3/-1/1\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
        let uv = m.uvs().unwrap()[0];
        assert_eq!(uv[2], Vec2::new(0.0, 1.0));
    }

    #[test]
    fn cube_round_trip_is_exact() {
        let cube = primitives::textured_grid(3, 2, 0.37);
        let text = write_obj(&cube);
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.vertices(), cube.vertices());
        assert_eq!(back.faces(), cube.faces());
        assert_eq!(back.uvs(), cube.uvs());
    }

    #[test]
    fn vertex_colors_parse() {
        let text = "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n";
        let m = parse_obj(text).unwrap();
        assert_eq!(m.colors().unwrap()[1], Vec3::new(0.0, 1.0, 0.0));
    }
}
