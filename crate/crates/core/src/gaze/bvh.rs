//! Bounding volume hierarchy over mesh faces and the ray-triangle test used to cast into it.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::geom::{Aabb, Vec3};
use crate::mesh::TriMesh;

/// Hits closer than this along the ray are ignored (self-intersection guard).
pub const T_EPSILON: f64 = 1e-9;

static DEGENERATE_TESTS: AtomicU64 = AtomicU64::new(0);

/// Number of ray tests rejected because the triangle was degenerate, process-wide.
pub fn degenerate_triangle_tests() -> u64 {
    DEGENERATE_TESTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Möller–Trumbore. `u` weights `v1`, `v` weights `v2`.
pub fn intersect_ray_triangle(origin: Vec3, dir: Vec3, v0: Vec3, v1: Vec3, v2: Vec3) -> Option<TriangleHit> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let scale = e1.cross(e2).length();
    if scale == 0.0 || !scale.is_finite() {
        DEGENERATE_TESTS.fetch_add(1, Ordering::Relaxed);
        return None;
    }
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() <= 1e-12 * scale * dir.length() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > T_EPSILON).then_some(TriangleHit { t, u, v })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub face: usize,
    pub t: f64,
    pub point: Vec3,
}

/// `a` strictly preferred over `b`: nearer, then lower face index.
fn better(a: (usize, f64), b: Option<(usize, f64)>) -> bool {
    match b {
        None => true,
        Some((bf, bt)) => a.1 < bt || (a.1 == bt && a.0 < bf),
    }
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    /// Index of the right child; the left child directly follows its parent.
    Interior {
        right: usize,
    },
    Leaf {
        start: usize,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Median-split tree, flattened in depth-first order.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    triangles: Vec<[Vec3; 3]>,
    leaf_size: usize,
}

impl Bvh {
    pub fn build(mesh: &TriMesh, leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let n = mesh.face_count();
        let triangles: Vec<[Vec3; 3]> = (0..n).map(|f| mesh.face_vertices(f)).collect();
        let boxes: Vec<Aabb> = triangles.iter().map(|t| Aabb::from_points(t.iter().copied())).collect();
        let centroids: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(2 * n / leaf_size + 1);
        if n > 0 {
            build_node(&mut nodes, &mut order, 0, n, &boxes, &centroids, leaf_size);
        }
        Bvh {
            nodes,
            order,
            triangles,
            leaf_size,
        }
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    /// Faces of every leaf, in tree order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { start, count } => Some(&self.order[start..start + count]),
                NodeKind::Interior { .. } => None,
            })
            .collect()
    }

    /// Checks that every interior box contains both child boxes.
    pub fn boxes_nested(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, n)| match n.kind {
            NodeKind::Interior { right } => {
                n.bounds.contains(&self.nodes[i + 1].bounds) && n.bounds.contains(&self.nodes[right].bounds)
            }
            NodeKind::Leaf { start, count } => self.order[start..start + count]
                .iter()
                .all(|&f| n.bounds.contains(&Aabb::from_points(self.triangles[f].iter().copied()))),
        })
    }

    /// Nearest hit along the ray.
    pub fn cast(&self, origin: Vec3, dir: Vec3) -> Option<RayHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(usize, f64)> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            let t_max = best.map_or(f64::INFINITY, |b| b.1);
            if node.bounds.ray_entry(origin, inv, t_max).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start..start + count] {
                        let [a, b, c] = self.triangles[f];
                        if let Some(h) = intersect_ray_triangle(origin, dir, a, b, c) {
                            if better((f, h.t), best) {
                                best = Some((f, h.t));
                            }
                        }
                    }
                }
                NodeKind::Interior { right } => {
                    stack.push(right);
                    stack.push(i + 1);
                }
            }
        }
        best.map(|(face, t)| RayHit {
            face,
            t,
            point: origin + dir * t,
        })
    }

    /// Linear scan over all faces with the same tie rule as [`Bvh::cast`].
    pub fn cast_brute_force(&self, origin: Vec3, dir: Vec3) -> Option<RayHit> {
        let mut best: Option<(usize, f64)> = None;
        for (f, [a, b, c]) in self.triangles.iter().enumerate() {
            if let Some(h) = intersect_ray_triangle(origin, dir, *a, *b, *c) {
                if better((f, h.t), best) {
                    best = Some((f, h.t));
                }
            }
        }
        best.map(|(face, t)| RayHit {
            face,
            t,
            point: origin + dir * t,
        })
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Vec3],
    leaf_size: usize,
) -> usize {
    let slice = &mut order[start..end];
    let bounds = slice.iter().fold(Aabb::empty(), |acc, &f| acc.union(&boxes[f]));
    let index = nodes.len();
    if slice.len() <= leaf_size {
        nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                start,
                count: slice.len(),
            },
        });
        return index;
    }
    let axis = Aabb::from_points(slice.iter().map(|&f| centroids[f])).largest_axis();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
    });
    nodes.push(Node {
        bounds,
        kind: NodeKind::Interior { right: 0 },
    });
    build_node(nodes, order, start, start + mid, boxes, centroids, leaf_size);
    let right = build_node(nodes, order, start + mid, end, boxes, centroids, leaf_size);
    nodes[index].kind = NodeKind::Interior { right };
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn axis_aligned_hit() {
        let h = intersect_ray_triangle(
            Vec3::new(0.2, 0.2, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((h.t - 1.0).abs() < 1e-15);
        assert!((h.u - 0.2).abs() < 1e-15 && (h.v - 0.2).abs() < 1e-15);
    }

    #[test]
    fn parallel_ray_misses() {
        let h = intersect_ray_triangle(
            Vec3::new(0.2, 0.2, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        assert!(h.is_none());
    }

    #[test]
    fn behind_origin_misses() {
        let h = intersect_ray_triangle(
            Vec3::new(0.2, 0.2, 1.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        );
        assert!(h.is_none());
    }

    #[test]
    fn degenerate_triangle_is_counted() {
        let before = degenerate_triangle_tests();
        let p = Vec3::new(1.0, 1.0, 1.0);
        assert!(intersect_ray_triangle(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), p, p, p).is_none());
        assert!(degenerate_triangle_tests() > before);
    }

    #[test]
    fn single_face_is_one_leaf() {
        let mesh = TriMesh::new(
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh, 4);
        assert_eq!(bvh.node_count(), 1);
        assert_eq!(bvh.leaves(), vec![&[0usize][..]]);
    }

    #[test]
    fn cube_faces_in_root_and_each_face_in_one_leaf() {
        let mesh = primitives::cube(1.0);
        let bvh = Bvh::build(&mesh, 1);
        let root = bvh.root_bounds().unwrap();
        for f in 0..mesh.face_count() {
            assert!(root.contains(&mesh.face_bounds(f)));
        }
        let mut seen: Vec<usize> = bvh.leaves().concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        assert!(bvh.boxes_nested());
    }

    #[test]
    fn shared_edge_tie_goes_to_lower_index() {
        // ray through the diagonal shared by both triangles of a quad
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 2, 3], [0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh, 1);
        let hit = bvh.cast(Vec3::new(0.5, 0.5, 1.0), Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(hit.face, 0);
    }
}
