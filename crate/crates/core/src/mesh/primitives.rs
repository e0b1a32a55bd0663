//! Procedural meshes used by tests, demos and the synthetic CLI inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MeshParts, TriMesh};
use crate::geom::{Vec2, Vec3};

/// Axis-aligned cube centred at the origin, 12 outward-facing triangles.
pub fn cube(size: f64) -> TriMesh {
    let h = size / 2.0;
    let vertices = vec![
        Vec3::new(-h, -h, -h),
        Vec3::new(h, -h, -h),
        Vec3::new(h, h, -h),
        Vec3::new(-h, h, -h),
        Vec3::new(-h, -h, h),
        Vec3::new(h, -h, h),
        Vec3::new(h, h, h),
        Vec3::new(-h, h, h),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [3, 7, 6],
        [3, 6, 2],
        [0, 4, 7],
        [0, 7, 3],
        [1, 2, 6],
        [1, 6, 5],
    ];
    TriMesh::new(vertices, faces).expect("cube is valid")
}

/// Latitude/longitude sphere with `2 * slices * (stacks - 1)` faces.
pub fn uv_sphere(radius: f64, slices: usize, stacks: usize) -> TriMesh {
    assert!(slices >= 3 && stacks >= 2);
    let mut vertices = vec![Vec3::new(0.0, radius, 0.0)];
    for i in 1..stacks {
        let phi = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            vertices.push(Vec3::new(
                radius * phi.sin() * theta.cos(),
                radius * phi.cos(),
                radius * phi.sin() * theta.sin(),
            ));
        }
    }
    let south = vertices.len();
    vertices.push(Vec3::new(0.0, -radius, 0.0));
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);

    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let a = ring(i, j);
            let b = ring(i, j + 1);
            let c = ring(i + 1, j);
            let d = ring(i + 1, j + 1);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for j in 0..slices {
        faces.push([south, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
    TriMesh::new(vertices, faces).expect("sphere is valid")
}

/// Subdivided icosahedron; `20 * 4^level` faces.
pub fn icosphere(radius: f64, level: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| Vec3::from(p).try_normalize().unwrap())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).try_normalize().unwrap());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Flat `nx` x `ny` grid of squares (two triangles each) in the XY plane, spanning
/// `[0, size]^2`, with UVs equal to the normalized XY position.
pub fn textured_grid(nx: usize, ny: usize, size: f64) -> TriMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(size * i as f64 / nx as f64, size * j as f64 / ny as f64, 0.0));
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let uv = |p: Vec3| Vec2::new(p.x / size, p.y / size);
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            for f in [
                [id(i, j), id(i + 1, j), id(i + 1, j + 1)],
                [id(i, j), id(i + 1, j + 1), id(i, j + 1)],
            ] {
                uvs.push(f.map(|k| uv(vertices[k])));
                faces.push(f);
            }
        }
    }
    TriMesh::from_parts(MeshParts {
        vertices,
        faces,
        uvs: Some(uvs),
        colors: None,
    })
    .expect("grid is valid")
}

/// A strip of `n` triangles where face `k` is adjacent only to faces `k-1` and `k+1`.
pub fn strip(n: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(n + 2);
    for i in 0..n + 2 {
        let x = (i / 2) as f64 + if i % 2 == 1 { 0.5 } else { 0.0 };
        let y = (i % 2) as f64;
        vertices.push(Vec3::new(x, y, 0.0));
    }
    let faces = (0..n)
        .map(|k| {
            if k % 2 == 0 {
                [k, k + 2, k + 1]
            } else {
                [k, k + 1, k + 2]
            }
        })
        .collect();
    TriMesh::new(vertices, faces).expect("strip is valid")
}

/// UV sphere whose vertices are pushed radially by up to `amplitude` (relative), giving
/// irregular triangles of varied shape. Deterministic in `seed`.
pub fn bumpy_sphere(slices: usize, stacks: usize, amplitude: f64, seed: u64) -> TriMesh {
    let base = uv_sphere(1.0, slices, stacks);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = base
        .vertices()
        .iter()
        .map(|&v| {
            let tangent_jitter = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * (0.5 * amplitude / slices as f64);
            v * (1.0 + amplitude * rng.random_range(-1.0..1.0)) + tangent_jitter
        })
        .collect();
    TriMesh::new(vertices, base.faces().to_vec()).expect("bumpy sphere is valid")
}

/// Copy of `mesh` with per-corner spherical UVs about the bounding-box center
/// (`u` from longitude, `v` from latitude). Colors and texture are kept.
pub fn with_spherical_uvs(mesh: &TriMesh) -> TriMesh {
    let c = mesh.bounds().center();
    let uv = |p: Vec3| {
        let d = (p - c).try_normalize().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
        let u = 0.5 + d.z.atan2(d.x) / (2.0 * std::f64::consts::PI);
        let v = 0.5 + d.y.clamp(-1.0, 1.0).asin() / std::f64::consts::PI;
        Vec2::new(u, v)
    };
    let uvs = mesh.faces().iter().map(|f| f.map(|i| uv(mesh.vertices()[i]))).collect();
    let out = TriMesh::from_parts(MeshParts {
        vertices: mesh.vertices().to_vec(),
        faces: mesh.faces().to_vec(),
        uvs: Some(uvs),
        colors: mesh.colors().map(<[Vec3]>::to_vec),
    })
    .expect("same geometry is valid");
    match mesh.texture() {
        Some(t) => out.with_texture(t.clone()),
        None => out,
    }
}
