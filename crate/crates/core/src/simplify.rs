//! Quadric-error edge-collapse simplification with optional saliency weighting.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Vec2, Vec3};
use crate::mesh::{MeshParts, TriMesh};
use crate::registry::Registry;

/// Symmetric 4x4 quadric `[A b; b^T c]` stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quadric {
    /// `a11 a12 a13 a22 a23 a33`
    pub a: [f64; 6],
    pub b: [f64; 3],
    pub c: f64,
}

impl Quadric {
    /// Squared distance to the plane `n . x + d = 0` (`n` unit length).
    pub fn from_plane(n: Vec3, d: f64) -> Self {
        Quadric {
            a: [n.x * n.x, n.x * n.y, n.x * n.z, n.y * n.y, n.y * n.z, n.z * n.z],
            b: [d * n.x, d * n.y, d * n.z],
            c: d * d,
        }
    }

    pub fn add(&self, o: &Quadric) -> Quadric {
        let mut out = *self;
        out.a.iter_mut().zip(o.a).for_each(|(x, y)| *x += y);
        out.b.iter_mut().zip(o.b).for_each(|(x, y)| *x += y);
        out.c += o.c;
        out
    }

    pub fn error(&self, p: Vec3) -> f64 {
        let [a11, a12, a13, a22, a23, a33] = self.a;
        let [b1, b2, b3] = self.b;
        let quad = a11 * p.x * p.x
            + a22 * p.y * p.y
            + a33 * p.z * p.z
            + 2.0 * (a12 * p.x * p.y + a13 * p.x * p.z + a23 * p.y * p.z);
        (quad + 2.0 * (b1 * p.x + b2 * p.y + b3 * p.z) + self.c).max(0.0)
    }

    /// Minimizer of [`Quadric::error`], when `A` is well conditioned.
    pub fn optimal(&self) -> Option<Vec3> {
        let [a11, a12, a13, a22, a23, a33] = self.a;
        let det = a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13) + a13 * (a12 * a23 - a22 * a13);
        let scale = a11 + a22 + a33;
        if !(det.abs() > 1e-10 * scale * scale * scale) {
            return None;
        }
        let rhs = [-self.b[0], -self.b[1], -self.b[2]];
        let solve = |col: usize| {
            let mut m = [[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]];
            for (r, row) in m.iter_mut().enumerate() {
                row[col] = rhs[r];
            }
            (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                / det
        };
        let p = Vec3::new(solve(0), solve(1), solve(2));
        p.is_finite().then_some(p)
    }
}

/// Sum of incident face plane quadrics per vertex.
pub fn vertex_quadrics(mesh: &TriMesh) -> Vec<Quadric> {
    let mut q = vec![Quadric::default(); mesh.vertices().len()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let n = mesh.face_normal(f);
        let d = -n.dot(mesh.vertices()[face[0]]);
        let plane = Quadric::from_plane(n, d);
        for &v in face {
            q[v] = q[v].add(&plane);
        }
    }
    q
}

/// Face saliency moved to vertices by the mean over incident faces (0 if none).
pub fn vertex_saliency(mesh: &TriMesh, face_saliency: &[f64]) -> Result<Vec<f64>> {
    if face_saliency.len() != mesh.face_count() {
        return Err(Error::LengthMismatch {
            left: face_saliency.len(),
            right: mesh.face_count(),
        });
    }
    let mut sum = vec![0.0; mesh.vertices().len()];
    let mut count = vec![0usize; mesh.vertices().len()];
    for (face, s) in mesh.faces().iter().zip(face_saliency) {
        for &v in face {
            sum[v] += s;
            count[v] += 1;
        }
    }
    Ok(sum
        .iter()
        .zip(count)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

/// Priority of an edge collapse given its quadric error and endpoint saliencies.
pub trait CollapseCost: Send + Sync {
    fn name(&self) -> &'static str;
    fn cost(&self, qem: f64, saliency_a: f64, saliency_b: f64) -> f64;
}

pub struct QemCost;

impl CollapseCost for QemCost {
    fn name(&self) -> &'static str {
        "qem"
    }

    fn cost(&self, qem: f64, _: f64, _: f64) -> f64 {
        qem
    }
}

/// `qem * (1 + lambda * mean(s_a, s_b))`
pub struct SaliencyQemCost {
    pub lambda: f64,
}

impl CollapseCost for SaliencyQemCost {
    fn name(&self) -> &'static str {
        "saliency-qem"
    }

    fn cost(&self, qem: f64, saliency_a: f64, saliency_b: f64) -> f64 {
        qem * (1.0 + self.lambda * 0.5 * (saliency_a + saliency_b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplifyConfig {
    pub cost: String,
    pub lambda: f64,
    /// Largest allowed rotation of a face normal by one collapse, in degrees.
    pub max_normal_flip_deg: f64,
}

impl Default for SimplifyConfig {
    fn default() -> Self {
        SimplifyConfig {
            cost: "saliency-qem".into(),
            lambda: 5.0,
            max_normal_flip_deg: 90.0,
        }
    }
}

pub fn cost_registry() -> Registry<SimplifyConfig, dyn CollapseCost> {
    let mut r: Registry<SimplifyConfig, dyn CollapseCost> = Registry::new("collapse cost");
    r.register("qem", |_| Ok(Box::new(QemCost)));
    r.register("saliency-qem", |c: &SimplifyConfig| {
        if !(c.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", c.lambda)));
        }
        Ok(Box::new(SaliencyQemCost { lambda: c.lambda }))
    });
    r
}

#[derive(Debug, Clone)]
pub struct SimplifyResult {
    pub mesh: TriMesh,
    /// Original face index of every output face.
    pub face_origin: Vec<usize>,
    /// `(kept, removed)` vertex pairs in collapse order.
    pub collapses: Vec<(usize, usize)>,
    pub rejected_link: usize,
    pub rejected_flip: usize,
    /// Ran out of valid collapses above the target.
    pub locked: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    lo: usize,
    hi: usize,
    stamp: (u64, u64),
    position: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Candidate {
    // reversed: BinaryHeap pops the cheapest, then the smallest vertex pair
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then(o.lo.cmp(&self.lo))
            .then(o.hi.cmp(&self.hi))
            .then(o.stamp.cmp(&self.stamp))
    }
}

struct State<'a> {
    positions: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    incident: Vec<BTreeSet<usize>>,
    quadrics: Vec<Quadric>,
    saliency: Vec<f64>,
    version: Vec<u64>,
    alive: Vec<bool>,
    cost: &'a dyn CollapseCost,
    min_flip_cos: f64,
}

impl State<'_> {
    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.incident[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect()
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (lo, hi) = (a.min(b), a.max(b));
        let q = self.quadrics[lo].add(&self.quadrics[hi]);
        let (pa, pb) = (self.positions[lo], self.positions[hi]);
        let mut options = vec![pa, pb, (pa + pb) * 0.5];
        if let Some(p) = q.optimal() {
            options.insert(0, p);
        }
        let (position, qem) = options
            .into_iter()
            .map(|p| (p, q.error(p)))
            .fold((pa, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        Candidate {
            cost: self.cost.cost(qem, self.saliency[lo], self.saliency[hi]),
            lo,
            hi,
            stamp: (self.version[lo], self.version[hi]),
            position,
        }
    }

    /// Common neighbors must be exactly the apexes of the faces on the edge.
    fn link_ok(&self, a: usize, b: usize) -> bool {
        let shared: BTreeSet<usize> = self.neighbors(a).intersection(&self.neighbors(b)).copied().collect();
        let apexes: BTreeSet<usize> = self.incident[a]
            .intersection(&self.incident[b])
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != a && u != b)
            .collect();
        shared == apexes
    }

    fn flip_ok(&self, a: usize, b: usize, p: Vec3) -> bool {
        for v in [a, b] {
            for &f in &self.incident[v] {
                let face = self.faces[f];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let corners = face.map(|u| self.positions[u]);
                let moved = face.map(|u| if u == a || u == b { p } else { self.positions[u] });
                let normal = |c: [Vec3; 3]| (c[1] - c[0]).cross(c[2] - c[0]);
                let (before, after) = (normal(corners), normal(moved));
                let (lb, la) = (before.length(), after.length());
                if la <= 1e-12 * lb.max(1e-300) || before.dot(after) < self.min_flip_cos * lb * la {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, keep: usize, gone: usize, p: Vec3) {
        for f in self.incident[gone].clone() {
            let face = &mut self.faces[f];
            if face.contains(&keep) {
                self.face_alive[f] = false;
                for u in *face {
                    self.incident[u].remove(&f);
                }
            } else {
                for u in face.iter_mut() {
                    if *u == gone {
                        *u = keep;
                    }
                }
                self.incident[keep].insert(f);
            }
        }
        self.incident[gone].clear();
        self.alive[gone] = false;
        self.positions[keep] = p;
        self.quadrics[keep] = self.quadrics[keep].add(&self.quadrics[gone]);
        self.saliency[keep] = self.saliency[keep].max(self.saliency[gone]);
        self.version[keep] += 1;
    }
}

/// Greedy minimum-cost edge collapses until at most `target_faces` faces remain.
///
/// `face_saliency` is divided by its maximum before use; `None` means unweighted (all zeros).
pub fn simplify_to(
    mesh: &TriMesh,
    face_saliency: Option<&[f64]>,
    target_faces: usize,
    cfg: &SimplifyConfig,
) -> Result<SimplifyResult> {
    let cost = cost_registry().create(&cfg.cost, cfg)?;
    let saliency = match face_saliency {
        Some(s) => {
            if let Some(bad) = s.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Numeric(format!(
                    "face {bad} saliency {} is not a finite nonnegative value",
                    s[bad]
                )));
            }
            let peak = s.iter().copied().fold(0.0, f64::max);
            let scaled: Vec<f64> = s.iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
            vertex_saliency(mesh, &scaled)?
        }
        None => vec![0.0; mesh.vertices().len()],
    };
    if target_faces >= mesh.face_count() {
        return Ok(SimplifyResult {
            mesh: mesh.clone(),
            face_origin: (0..mesh.face_count()).collect(),
            collapses: Vec::new(),
            rejected_link: 0,
            rejected_flip: 0,
            locked: false,
        });
    }
    let mut incident = vec![BTreeSet::new(); mesh.vertices().len()];
    for (f, face) in mesh.faces().iter().enumerate() {
        for &v in face {
            incident[v].insert(f);
        }
    }
    let mut st = State {
        positions: mesh.vertices().to_vec(),
        faces: mesh.faces().to_vec(),
        face_alive: vec![true; mesh.face_count()],
        incident,
        quadrics: vertex_quadrics(mesh),
        saliency,
        version: vec![0; mesh.vertices().len()],
        alive: vec![true; mesh.vertices().len()],
        cost: cost.as_ref(),
        min_flip_cos: cfg.max_normal_flip_deg.to_radians().cos(),
    };

    let mut heap = BinaryHeap::new();
    let mut edges = BTreeSet::new();
    for face in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (face[k], face[(k + 1) % 3]);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    for &(a, b) in &edges {
        heap.push(st.candidate(a, b));
    }

    let mut remaining = mesh.face_count();
    let mut collapses = Vec::new();
    let (mut rejected_link, mut rejected_flip) = (0, 0);
    while remaining > target_faces {
        let Some(c) = heap.pop() else { break };
        let (a, b) = (c.lo, c.hi);
        if !st.alive[a] || !st.alive[b] || c.stamp != (st.version[a], st.version[b]) {
            continue;
        }
        if st.incident[a].is_disjoint(&st.incident[b]) {
            continue;
        }
        if !st.link_ok(a, b) {
            rejected_link += 1;
            continue;
        }
        if !st.flip_ok(a, b, c.position) {
            rejected_flip += 1;
            continue;
        }
        let removed = st.incident[a].intersection(&st.incident[b]).count();
        st.collapse(a, b, c.position);
        remaining -= removed;
        collapses.push((a, b));
        for n in st.neighbors(a) {
            heap.push(st.candidate(a, n));
        }
    }
    let locked = remaining > target_faces;
    if locked {
        log::warn!("no valid collapse left at {remaining} faces (target {target_faces})");
    }

    let mut remap = vec![usize::MAX; st.positions.len()];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_origin = Vec::new();
    for (f, face) in st.faces.iter().enumerate() {
        if !st.face_alive[f] {
            continue;
        }
        faces.push(face.map(|v| {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(st.positions[v]);
            }
            remap[v]
        }));
        face_origin.push(f);
    }
    let uvs = mesh.uvs().map(|uvs| {
        faces
            .iter()
            .zip(&face_origin)
            .map(|(face, &o)| face.map(|v| nearest_corner_uv(mesh, o, uvs[o], vertices[v])))
            .collect::<Vec<[Vec2; 3]>>()
    });
    let colors = mesh.colors().map(|colors| {
        let mut out = vec![Vec3::ZERO; vertices.len()];
        for (old, &new) in remap.iter().enumerate() {
            if new != usize::MAX {
                out[new] = colors[old];
            }
        }
        out
    });
    let mut out = TriMesh::from_parts(MeshParts {
        vertices,
        faces,
        uvs,
        colors,
    })?;
    if let Some(t) = mesh.texture() {
        out = out.with_texture(t.clone());
    }
    if out.face_count() != face_origin.len() {
        return Err(Error::Numeric("simplification produced degenerate faces".into()));
    }
    Ok(SimplifyResult {
        mesh: out,
        face_origin,
        collapses,
        rejected_link,
        rejected_flip,
        locked,
    })
}

fn nearest_corner_uv(mesh: &TriMesh, face: usize, uvs: [Vec2; 3], p: Vec3) -> Vec2 {
    let corners = mesh.face_vertices(face);
    let k = (0..3)
        .min_by(|&i, &j| corners[i].distance(p).total_cmp(&corners[j].distance(p)))
        .expect("three corners");
    uvs[k]
}

/// Output faces whose origin is among `region` (original face indices).
pub fn retained_in_region(result: &SimplifyResult, region: &[usize]) -> usize {
    let set: BTreeSet<usize> = region.iter().copied().collect();
    result.face_origin.iter().filter(|f| set.contains(f)).count()
}
