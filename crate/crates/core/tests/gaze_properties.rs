use meshsal::gaze::{
    build_saliency_map, classifier_registry, scripted_gaze_log, Bvh, GazeConfig, GazeSample, ScriptOptions,
    ScriptedFixation,
};
use meshsal::geom::Vec3;
use meshsal::mesh::{primitives, TriMesh};
use proptest::prelude::*;

fn mesh() -> TriMesh {
    primitives::icosphere(1.0, 2)
}

fn script() -> impl Strategy<Value = Vec<ScriptedFixation>> {
    prop::collection::vec(
        (0usize..320, 0.12..0.6f64).prop_map(|(face, duration)| ScriptedFixation { face, duration }),
        1..6,
    )
}

fn session(mesh: &TriMesh, script: &[ScriptedFixation], yaw: f64) -> Vec<GazeSample> {
    let opts = ScriptOptions {
        yaw_deg: yaw,
        ..Default::default()
    };
    scripted_gaze_log(mesh, script, &opts)
        .iter()
        .map(|r| r.to_model_frame().unwrap())
        .collect()
}

fn unit() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0..1.0f64).prop_filter_map("zero", |a| Vec3::new(a[0], a[1], a[2]).try_normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bvh_agrees_with_brute_force(seed in any::<u64>(), leaf in 1usize..9, origin in prop::array::uniform3(-3.0..3.0f64), dirs in prop::collection::vec(unit(), 1..40)) {
        let mesh = primitives::bumpy_sphere(14, 9, 0.2, seed);
        let bvh = Bvh::build(&mesh, leaf);
        let o = Vec3::new(origin[0], origin[1], origin[2]);
        for d in dirs {
            let (fast, slow) = (bvh.cast(o, d), bvh.cast_brute_force(o, d));
            prop_assert_eq!(fast.map(|h| h.face), slow.map(|h| h.face));
            if let (Some(a), Some(b)) = (fast, slow) {
                prop_assert!((a.t - b.t).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn map_is_a_nonnegative_distribution(script in script(), yaw in -180.0..180.0f64) {
        let mesh = mesh();
        let gt = build_saliency_map(&mesh, &Bvh::build(&mesh, 4), &[session(&mesh, &script, yaw)], &GazeConfig::default()).unwrap();
        let v = gt.normalized.values();
        prop_assert!(v.iter().all(|x| *x >= 0.0));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(gt.fixations.len(), script.len());
    }

    #[test]
    fn splats_add_across_sessions(a in script(), b in script()) {
        let mesh = mesh();
        let bvh = Bvh::build(&mesh, 4);
        let cfg = GazeConfig::default();
        let (sa, sb) = (session(&mesh, &a, 0.0), session(&mesh, &b, 25.0));
        let both = build_saliency_map(&mesh, &bvh, &[sa.clone(), sb.clone()], &cfg).unwrap();
        let ra = build_saliency_map(&mesh, &bvh, &[sa], &cfg).unwrap();
        let rb = build_saliency_map(&mesh, &bvh, &[sb], &cfg).unwrap();
        for f in 0..mesh.face_count() {
            let sum = ra.raw.values()[f] + rb.raw.values()[f];
            prop_assert!((both.raw.values()[f] - sum).abs() <= 1e-12 * sum.max(1.0));
        }
    }

    #[test]
    fn fixations_shift_with_time(script in script(), shift in -100.0..100.0f64, idt in any::<bool>()) {
        let mesh = mesh();
        let mut cfg = GazeConfig::default().fixation;
        if idt {
            cfg.classifier = "idt".into();
        }
        let classifier = classifier_registry().create(&cfg.classifier, &cfg).unwrap();
        let samples = session(&mesh, &script, 10.0);
        let moved: Vec<GazeSample> = samples.iter().map(|s| GazeSample { t: s.t + shift, ..*s }).collect();
        let (a, b) = (classifier.classify(&samples).unwrap(), classifier.classify(&moved).unwrap());
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.start + shift - y.start).abs() < 1e-9);
            prop_assert!((x.duration() - y.duration()).abs() < 1e-9);
            prop_assert!((x.mean_direction - y.mean_direction).length() < 1e-12);
        }
    }
}
