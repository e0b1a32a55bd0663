use std::collections::{BTreeSet, VecDeque};

use meshsal::autograd::Tape;
use meshsal::geom::Vec3;
use meshsal::mesh::{primitives, TriMesh};
use meshsal::model::{
    fps_centers, propagation_weights, random_walk_subgraph, slot_rng, ModelConfig, PatchConfig, PropagationConfig,
    SaliencyModel,
};
use meshsal::ssm::scan::{scan_forward, ScanInputs};
use meshsal::ssm::SsmConfig;
use meshsal::tensor::Mat;
use proptest::prelude::*;

fn any_mesh() -> impl Strategy<Value = TriMesh> {
    prop_oneof![
        (4usize..16, 3usize..12, 0.0..0.3f64, any::<u64>())
            .prop_map(|(s, t, a, seed)| primitives::bumpy_sphere(s, t, a, seed)),
        (1usize..4).prop_map(|l| primitives::icosphere(1.0, l)),
        (2usize..12, 1usize..8).prop_map(|(x, y)| primitives::textured_grid(x, y, 1.0)),
        (2usize..60).prop_map(primitives::strip),
    ]
}

fn induced_connected(mesh: &TriMesh, members: &[usize]) -> bool {
    let set: BTreeSet<usize> = members.iter().copied().collect();
    if set.len() != members.len() {
        return false;
    }
    let mut seen = BTreeSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(f) = queue.pop_front() {
        for &g in mesh.neighbors(f) {
            if set.contains(&g) && seen.insert(g) {
                queue.push_back(g);
            }
        }
    }
    seen.len() == set.len()
}

fn small_model(seed: u64, backbone: &str) -> ModelConfig {
    ModelConfig {
        encoder_width: 8,
        token_dim: 8,
        head_hidden: 8,
        backbone: backbone.into(),
        patches: PatchConfig {
            count: 6,
            size: 5,
            ..Default::default()
        },
        ssm: SsmConfig {
            state_dim: 4,
            blocks: 1,
            ..Default::default()
        },
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walks_are_connected_and_repetition_free(mesh in any_mesh(), size in 1usize..40, seed in any::<u64>()) {
        for center in (0..mesh.face_count()).step_by(7) {
            let s = random_walk_subgraph(mesh.adjacency(), center, size, &mut slot_rng(seed, 0, center));
            prop_assert_eq!(s.members[0], center);
            prop_assert!(s.members.len() <= size);
            prop_assert_eq!(s.padded, s.members.len() < size);
            prop_assert!(induced_connected(&mesh, &s.members));
        }
    }

    #[test]
    fn fps_is_a_prefix_chain_with_shrinking_radius(mesh in any_mesh(), a in 1usize..20, extra in 1usize..20) {
        let n = mesh.face_count();
        let (l1, l2) = (a.min(n), (a + extra).min(n));
        let (c1, c2) = (fps_centers(&mesh, l1).unwrap(), fps_centers(&mesh, l2).unwrap());
        prop_assert_eq!(&c2[..l1], &c1[..]);
        let points = mesh.face_centers();
        let radius = |cs: &[usize]| {
            points.iter().map(|p| cs.iter().map(|&c| p.distance(points[c])).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
        };
        prop_assert!(radius(&c2) <= radius(&c1));
    }

    #[test]
    fn propagation_is_a_convex_combination(
        centers in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 3..20),
        queries in prop::collection::vec(prop::array::uniform3(-1.5..1.5f64), 1..30),
        power in 0.5..3.0f64,
        token_seed in any::<u64>(),
    ) {
        let to_vec = |a: &[f64; 3]| Vec3::new(a[0], a[1], a[2]);
        let (c, q): (Vec<Vec3>, Vec<Vec3>) = (centers.iter().map(to_vec).collect(), queries.iter().map(to_vec).collect());
        let cfg = PropagationConfig { neighbors: 3, power };
        let w = propagation_weights(&q, &c, &cfg).unwrap();
        let tokens = Mat::from_fn(c.len(), 4, |r, k| ((r * 31 + k * 17) as u64 ^ token_seed) as f64 % 97.0);
        let out = w.matmul(&tokens);
        for r in 0..q.len() {
            let row: Vec<(usize, f64)> = w.row(r).collect();
            prop_assert!(row.len() <= 3);
            prop_assert!(row.iter().all(|(_, x)| *x >= 0.0));
            prop_assert!((row.iter().map(|(_, x)| x).sum::<f64>() - 1.0).abs() < 1e-9);
            for k in 0..4 {
                let vals = row.iter().map(|(j, _)| tokens.get(*j, k));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                prop_assert!(out.get(r, k) >= lo - 1e-9 && out.get(r, k) <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn scan_is_causal(t in 2usize..40, d in 1usize..6, n in 1usize..6, at in 0usize..40, seed in any::<u64>()) {
        let at = at % t;
        let v = |r: usize, c: usize, salt: u64| (((r * 131 + c * 71) as u64 ^ seed ^ salt) % 1000) as f64 / 1000.0 - 0.5;
        let u = Mat::from_fn(t, d, |r, c| v(r, c, 1));
        let delta = Mat::from_fn(t, d, |r, c| 0.05 + v(r, c, 2).abs());
        let a_log = Mat::from_fn(d, n, |r, c| v(r, c, 3));
        let b = Mat::from_fn(t, n, |r, c| v(r, c, 4));
        let c = Mat::from_fn(t, n, |r, k| v(r, k, 5));
        let run = |u: &Mat| scan_forward(&ScanInputs { u, delta: &delta, a_log: &a_log, b: &b, c: &c }).unwrap().0;
        let mut bumped = u.clone();
        for k in 0..d {
            bumped.set(at, k, bumped.get(at, k) + 1.0);
        }
        let (y0, y1) = (run(&u), run(&bumped));
        for r in 0..at {
            prop_assert_eq!(y0.row(r), y1.row(r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_is_permutation_equivariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let mesh = primitives::bumpy_sphere(8, 6, 0.2, seed);
        let n = mesh.face_count();
        // perm[new] = old
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ perm_seed);
        let faces = perm.iter().map(|&i| mesh.faces()[i]).collect();
        let relabeled = TriMesh::new(mesh.vertices().to_vec(), faces).unwrap();
        let model = SaliencyModel::new(small_model(seed, "mamba")).unwrap();
        let encode = |m: &TriMesh| {
            let mut tape = Tape::new();
            let v = model.encode(&mut tape, &model.prepare(m).unwrap()).unwrap();
            tape.value(v).clone()
        };
        let (a, b) = (encode(&mesh), encode(&relabeled));
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..a.cols {
                prop_assert!((a.get(old, k) - b.get(new, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prediction_is_deterministic(seed in any::<u64>(), transformer in any::<bool>()) {
        let mesh = primitives::bumpy_sphere(8, 6, 0.2, seed);
        let cfg = small_model(seed, if transformer { "transformer" } else { "mamba" });
        let run = || {
            let model = SaliencyModel::new(cfg.clone()).unwrap();
            model.predict(&mesh, &model.prepare(&mesh).unwrap()).unwrap()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.values(), b.values());
    }
}
