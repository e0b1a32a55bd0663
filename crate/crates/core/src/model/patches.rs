//! Patch centers and the face groups around them.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::TriMesh;
use crate::registry::Registry;

/// Center face plus `M` member faces (walk order, `members[0] == center`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub center: usize,
    pub members: Vec<usize>,
    /// The reachable component was smaller than `M`; pooling fills the gap with the center.
    pub padded: bool,
}

/// Greedy max-min selection over face centers, starting at the face nearest the
/// bounding-box center. Ties go to the lowest face index.
pub fn fps_centers(mesh: &TriMesh, count: usize) -> Result<Vec<usize>> {
    let n = mesh.face_count();
    if count > n {
        return Err(Error::Config(format!("cannot pick {count} centers from {n} faces")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let centers = mesh.face_centers();
    Ok(fps_points(&centers, count, mesh.bounds().center()))
}

pub(crate) fn fps_points(points: &[Vec3], count: usize, seed_point: Vec3) -> Vec<usize> {
    let first = argmin(points.iter().map(|p| p.distance(seed_point)));
    let mut chosen = vec![first];
    let mut dist: Vec<f64> = points.iter().map(|p| p.distance(points[first])).collect();
    while chosen.len() < count {
        let next = argmax(dist.iter().copied());
        chosen.push(next);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(p.distance(points[next]));
        }
    }
    chosen
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Repetition-free walk: step to a uniformly chosen unvisited neighbor; when stuck,
/// restart from a uniformly chosen visited face that still has unvisited neighbors.
pub fn random_walk_subgraph(adjacency: &[Vec<usize>], center: usize, size: usize, rng: &mut ChaCha8Rng) -> Subgraph {
    let size = size.max(1);
    let mut members = vec![center];
    let mut visited: HashSet<usize> = HashSet::from([center]);
    let mut current = center;
    let open = |f: usize, visited: &HashSet<usize>| -> Vec<usize> {
        adjacency[f].iter().copied().filter(|j| !visited.contains(j)).collect()
    };
    while members.len() < size {
        let next = open(current, &visited);
        if let Some(&step) = next.choose(rng) {
            members.push(step);
            visited.insert(step);
            current = step;
            continue;
        }
        let frontier: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&f| !open(f, &visited).is_empty())
            .collect();
        match frontier.choose(rng) {
            Some(&restart) => current = restart,
            None => {
                log::warn!(
                    "component of face {center} has {} faces, fewer than {size}; padding",
                    members.len()
                );
                return Subgraph {
                    center,
                    members,
                    padded: true,
                };
            }
        }
    }
    Subgraph {
        center,
        members,
        padded: false,
    }
}

/// The `size` faces with centers nearest to the center face (distance, then index).
pub fn knn_subgraph(centers: &[Vec3], center: usize, size: usize) -> Subgraph {
    let c = centers[center];
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| {
        centers[a]
            .distance(c)
            .total_cmp(&centers[b].distance(c))
            .then((a != center).cmp(&(b != center)))
            .then(a.cmp(&b))
    });
    order.truncate(size.max(1));
    Subgraph {
        center,
        members: order,
        padded: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub sampler: String,
    /// Number of patches `L`.
    pub count: usize,
    /// Faces per patch `M`.
    pub size: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            sampler: "random-walk".into(),
            count: 128,
            size: 32,
        }
    }
}

pub trait PatchSampler: Send + Sync {
    fn name(&self) -> &'static str;

    /// One subgraph per center. `seed` and `epoch` select the random streams; every center
    /// slot draws from its own stream so results do not depend on scheduling.
    fn sample(&self, mesh: &TriMesh, centers: &[usize], seed: u64, epoch: u64) -> Vec<Subgraph>;
}

pub struct RandomWalkSampler {
    pub size: usize,
}

impl PatchSampler for RandomWalkSampler {
    fn name(&self) -> &'static str {
        "random-walk"
    }

    fn sample(&self, mesh: &TriMesh, centers: &[usize], seed: u64, epoch: u64) -> Vec<Subgraph> {
        centers
            .par_iter()
            .enumerate()
            .map(|(slot, &c)| {
                let mut rng = slot_rng(seed, epoch, slot);
                random_walk_subgraph(mesh.adjacency(), c, self.size, &mut rng)
            })
            .collect()
    }
}

pub struct KnnSampler {
    pub size: usize,
}

impl PatchSampler for KnnSampler {
    fn name(&self) -> &'static str {
        "knn"
    }

    fn sample(&self, mesh: &TriMesh, centers: &[usize], _seed: u64, _epoch: u64) -> Vec<Subgraph> {
        let points = mesh.face_centers();
        centers
            .par_iter()
            .map(|&c| knn_subgraph(&points, c, self.size))
            .collect()
    }
}

pub fn slot_rng(seed: u64, epoch: u64, slot: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(slot as u64);
    rng
}

pub fn sampler_registry() -> Registry<PatchConfig, dyn PatchSampler> {
    let mut r: Registry<PatchConfig, dyn PatchSampler> = Registry::new("patch sampler");
    r.register("random-walk", |c: &PatchConfig| {
        Ok(Box::new(RandomWalkSampler { size: c.size }))
    });
    r.register("knn", |c: &PatchConfig| Ok(Box::new(KnnSampler { size: c.size })));
    r
}

/// Text dump: one line per subgraph, `center: m0 m1 ...` with a trailing `*` when padded.
pub fn subgraph_dump(subgraphs: &[Subgraph]) -> String {
    let mut out = String::new();
    for s in subgraphs {
        let members: Vec<String> = s.members.iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{}: {}{}\n",
            s.center,
            members.join(" "),
            if s.padded { " *" } else { "" }
        ));
    }
    out
}

/// Checks that members are distinct, start at the center and induce a connected subgraph.
pub fn subgraph_is_valid(adjacency: &[Vec<usize>], s: &Subgraph) -> bool {
    let set: HashSet<usize> = s.members.iter().copied().collect();
    if set.len() != s.members.len() || s.members.first() != Some(&s.center) {
        return false;
    }
    let mut seen = HashSet::from([s.center]);
    let mut stack = vec![s.center];
    while let Some(f) = stack.pop() {
        for &j in &adjacency[f] {
            if set.contains(&j) && seen.insert(j) {
                stack.push(j);
            }
        }
    }
    seen.len() == set.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn fps_on_a_line_picks_the_extremes_after_the_middle() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let chosen = fps_points(&pts, 3, Vec3::new(4.5, 0.0, 0.0));
        assert_eq!(chosen, vec![4, 9, 0]);
    }

    #[test]
    fn fps_all_faces() {
        let mesh = primitives::cube(1.0);
        let mut c = fps_centers(&mesh, 12).unwrap();
        c.sort_unstable();
        assert_eq!(c, (0..12).collect::<Vec<_>>());
        assert!(fps_centers(&mesh, 13).is_err());
    }

    #[test]
    fn walk_of_one_is_the_center() {
        let mesh = primitives::cube(1.0);
        let s = random_walk_subgraph(mesh.adjacency(), 5, 1, &mut slot_rng(1, 0, 0));
        assert_eq!(s.members, vec![5]);
    }

    #[test]
    fn walk_on_strip_end_is_forced() {
        let mesh = primitives::strip(10);
        let s = random_walk_subgraph(mesh.adjacency(), 0, 4, &mut slot_rng(1, 0, 0));
        assert_eq!(s.members, vec![0, 1, 2, 3]);
        assert!(!s.padded);
    }

    #[test]
    fn small_component_is_padded() {
        let mesh = primitives::strip(3);
        let s = random_walk_subgraph(mesh.adjacency(), 1, 5, &mut slot_rng(1, 0, 0));
        assert!(s.padded);
        assert_eq!(s.members.len(), 3);
        assert!(subgraph_is_valid(mesh.adjacency(), &s));
    }

    #[test]
    fn walks_are_valid_and_reproducible() {
        let mesh = primitives::icosphere(1.0, 2);
        let centers = fps_centers(&mesh, 8).unwrap();
        let sampler = RandomWalkSampler { size: 12 };
        let a = sampler.sample(&mesh, &centers, 3, 2);
        assert_eq!(a, sampler.sample(&mesh, &centers, 3, 2));
        assert_ne!(a, sampler.sample(&mesh, &centers, 3, 3));
        assert!(a.iter().all(|s| subgraph_is_valid(mesh.adjacency(), s)));
    }

    #[test]
    fn knn_includes_center_first() {
        let mesh = primitives::icosphere(1.0, 1);
        let s = knn_subgraph(&mesh.face_centers(), 7, 4);
        assert_eq!(s.members[0], 7);
        assert_eq!(s.members.len(), 4);
    }

    #[test]
    fn dump_format() {
        let s = vec![
            Subgraph {
                center: 3,
                members: vec![3, 4],
                padded: false,
            },
            Subgraph {
                center: 1,
                members: vec![1],
                padded: true,
            },
        ];
        assert_eq!(subgraph_dump(&s), "3: 3 4\n1: 1 *\n");
    }
}
