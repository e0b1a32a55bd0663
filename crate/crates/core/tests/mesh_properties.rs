use meshsal::features::{curve_feature, shape_feature};
use meshsal::geom::Vec3;
use meshsal::mesh::{parse_obj, primitives, write_obj, MeshParts, TriMesh};
use proptest::prelude::*;

fn sphere() -> impl Strategy<Value = TriMesh> {
    (3usize..16, 3usize..12, 0.0..0.3f64, any::<u64>())
        .prop_map(|(slices, stacks, amp, seed)| primitives::bumpy_sphere(slices, stacks, amp, seed))
}

fn transformed(mesh: &TriMesh, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
    TriMesh::from_parts(MeshParts {
        vertices: mesh.vertices().iter().map(|&v| f(v)).collect(),
        faces: mesh.faces().to_vec(),
        uvs: mesh.uvs().map(<[_]>::to_vec),
        colors: None,
    })
    .unwrap()
}

fn rotate(v: Vec3, yaw: f64, pitch: f64) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let a = Vec3::new(cy * v.x + sy * v.z, v.y, -sy * v.x + cy * v.z);
    Vec3::new(a.x, cp * a.y - sp * a.z, sp * a.y + cp * a.z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjacency_is_symmetric(mesh in sphere()) {
        for f in 0..mesh.face_count() {
            for &g in mesh.neighbors(f) {
                prop_assert!(g != f);
                prop_assert!(mesh.neighbors(g).contains(&f));
            }
        }
    }

    #[test]
    fn obj_round_trip_is_bit_exact(mesh in sphere(), uvs in any::<bool>()) {
        let mesh = if uvs { primitives::with_spherical_uvs(&mesh) } else { mesh };
        let back = parse_obj(&write_obj(&mesh)).unwrap();
        prop_assert_eq!(back.vertices(), mesh.vertices());
        prop_assert_eq!(back.faces(), mesh.faces());
        prop_assert_eq!(back.uvs(), mesh.uvs());
    }

    #[test]
    fn corner_vectors_sum_to_zero(mesh in sphere()) {
        let diameter = mesh.bounds().extent().length();
        for f in 0..mesh.face_count() {
            let c = mesh.face_basis(f).unwrap().corners;
            prop_assert!((c[0] + c[1] + c[2]).length() <= 1e-6 * diameter);
        }
    }

    #[test]
    fn curve_is_rigid_invariant(mesh in sphere(), yaw in -3.0..3.0f64, pitch in -3.0..3.0f64, shift in prop::array::uniform3(-5.0..5.0f64)) {
        let t = Vec3::new(shift[0], shift[1], shift[2]);
        let moved = transformed(&mesh, |v| rotate(v, yaw, pitch) + t);
        for f in 0..mesh.face_count() {
            let (a, b) = (curve_feature(&mesh, f), curve_feature(&moved, f));
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-9, "face {} {:?} vs {:?}", f, a, b);
            }
        }
    }

    #[test]
    fn shape_angles_and_irregularity_are_scale_invariant(mesh in sphere(), scale in 0.01..100.0f64) {
        let scaled = transformed(&mesh, |v| v * scale);
        for f in 0..mesh.face_count() {
            let (a, b) = (shape_feature(&mesh, f).unwrap(), shape_feature(&scaled, f).unwrap());
            for k in 0..3 {
                prop_assert!((a.angles_deg[k] - b.angles_deg[k]).abs() < 1e-8);
            }
            prop_assert!((a.irregularity / b.irregularity - 1.0).abs() < 1e-9);
        }
    }
}
