use std::collections::HashMap;

/// Edge-adjacency table plus the number of edges shared by more than two faces.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyReport {
    pub adjacency: Vec<Vec<usize>>,
    pub non_manifold_edges: usize,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn edge_faces(faces: &[[usize; 3]]) -> HashMap<(usize, usize), Vec<usize>> {
    let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(faces.len() * 2);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            map.entry(edge_key(f[k], f[(k + 1) % 3])).or_default().push(fi);
        }
    }
    map
}

/// Faces are adjacent iff they share an undirected edge. Neighbors are listed in the
/// order of the face's edges (v0v1, v1v2, v2v0); vertex-only contact does not count.
pub fn build_adjacency(faces: &[[usize; 3]]) -> AdjacencyReport {
    let map = edge_faces(faces);
    let non_manifold_edges = map.values().filter(|v| v.len() > 2).count();
    let adjacency = faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut out: Vec<usize> = Vec::with_capacity(3);
            for k in 0..3 {
                for &g in &map[&edge_key(f[k], f[(k + 1) % 3])] {
                    if g != fi && !out.contains(&g) {
                        out.push(g);
                    }
                }
            }
            out
        })
        .collect();
    AdjacencyReport {
        adjacency,
        non_manifold_edges,
    }
}

/// Counts manifold edges whose two faces traverse the edge in the same direction.
pub fn winding_lint(faces: &[[usize; 3]]) -> usize {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    directed.values().filter(|&&n| n > 1).count()
}
