//! End-to-end acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; the process fails if any criterion fails.

use std::collections::{HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use meshsal::ablation::{run_ablations, ABLATIONS};
use meshsal::demo;
use meshsal::flops::{flops_grid, min_axis_r2};
use meshsal::gaze::{
    build_saliency_map, intersect_ray_triangle, scripted_gaze_log, Bvh, GazeConfig, ScriptOptions, ScriptedFixation,
};
use meshsal::geom::Vec3;
use meshsal::mesh::{primitives, write_obj, TriMesh};
use meshsal::metrics::{cc, kld, se, sim};
use meshsal::model::{fps_centers, sampler_registry, InputMode, ModelConfig, PatchConfig};
use meshsal::saliency::{MapKind, Normalization, SaliencyMap};
use meshsal::simplify::{retained_in_region, simplify_to, SimplifyConfig};
use meshsal::ssm::scan::{scan_forward, ScanInputs};
use meshsal::ssm::SsmConfig;
use meshsal::tensor::Mat;
use meshsal::train::{gradcheck, train, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64, detail: String) -> Outcome {
    check(
        elapsed.as_secs_f64() < limit_s as f64,
        format!("{detail}, {:.2}s (limit {limit_s}s)", elapsed.as_secs_f64()),
    )
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Straight per-step recurrence with exact exponentials.
fn naive_scan(u: &Mat, delta: &Mat, a_log: &Mat, b: &Mat, c: &Mat) -> Mat {
    let (t_len, d_len, n_len) = (u.rows, u.cols, a_log.cols);
    let mut y = Mat::zeros(t_len, d_len);
    for d in 0..d_len {
        let mut h = vec![0.0; n_len];
        for t in 0..t_len {
            let mut acc = 0.0;
            for (n, hn) in h.iter_mut().enumerate() {
                let a = -a_log.get(d, n).exp();
                *hn = (delta.get(t, d) * a).exp() * *hn + delta.get(t, d) * b.get(t, n) * u.get(t, d);
                acc += c.get(t, n) * *hn;
            }
            y.set(t, d, acc);
        }
    }
    y
}

fn scan_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (t, d, n) = (
            rng.random_range(1..=64),
            rng.random_range(1..=64),
            rng.random_range(1..=32),
        );
        let u = random_mat(&mut rng, t, d, -1.0, 1.0);
        let delta = random_mat(&mut rng, t, d, 1e-3, 1.0);
        let a_log = random_mat(&mut rng, d, n, -2.0, 1.0);
        let b = random_mat(&mut rng, t, n, -1.0, 1.0);
        let c = random_mat(&mut rng, t, n, -1.0, 1.0);
        let (y, _) = scan_forward(&ScanInputs {
            u: &u,
            delta: &delta,
            a_log: &a_log,
            b: &b,
            c: &c,
        })
        .map_err(|e| e.to_string())?;
        let expect = naive_scan(&u, &delta, &a_log, &b, &c);
        for (p, q) in y.data.iter().zip(&expect.data) {
            worst = worst.max((p - q).abs());
        }
    }
    if worst >= 1e-6 {
        return Err(format!("max abs error {worst:.3e} over 100 configs"));
    }
    within(
        start.elapsed(),
        10,
        format!("max abs error {worst:.3e} over 100 configs"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mesh = primitives::icosphere(1.0, 0);
    let cfg = ModelConfig {
        encoder_width: 8,
        token_dim: 16,
        head_hidden: 8,
        patches: PatchConfig {
            count: 4,
            size: 3,
            ..Default::default()
        },
        ssm: SsmConfig {
            state_dim: 4,
            blocks: 1,
            ..Default::default()
        },
        seed: 1,
        ..Default::default()
    };
    let gt: Vec<f64> = mesh
        .face_centers()
        .iter()
        .map(|c| 0.5 + 0.4 * (2.0 * c.x + c.y).sin())
        .collect();
    let gt = SaliencyMap::new(gt, MapKind::GroundTruth, Normalization::Raw).map_err(|e| e.to_string())?;
    let mut model = meshsal::model::SaliencyModel::new(cfg).map_err(|e| e.to_string())?;
    let sample = Sample::new(&model, "ico", mesh, gt).map_err(|e| e.to_string())?;
    let report = gradcheck(&mut model, &sample, 0, 1e-4, 1e-8).map_err(|e| e.to_string())?;
    let detail = format!(
        "max rel error {:.2e} at {} over {} parameters",
        report.max_relative_error, report.worst_parameter, report.checked
    );
    if report.max_relative_error >= 1e-3 {
        return Err(detail);
    }
    within(start.elapsed(), 120, detail)
}

fn bvh_matches_brute_force() -> Outcome {
    let start = Instant::now();
    let mesh = primitives::bumpy_sphere(50, 51, 0.1, 5);
    let bvh = Bvh::build(&mesh, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut hits = 0;
    for _ in 0..10_000 {
        let origin = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let target = Vec3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        );
        let Some(dir) = (target - origin).try_normalize() else {
            continue;
        };
        let mut brute: Option<(usize, f64)> = None;
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.face_vertices(f);
            if let Some(h) = intersect_ray_triangle(origin, dir, a, b, c) {
                if brute.is_none_or(|(_, t)| h.t < t) {
                    brute = Some((f, h.t));
                }
            }
        }
        let fast = bvh.cast(origin, dir).map(|h| (h.face, h.t));
        hits += fast.is_some() as usize;
        let same = match (fast, brute) {
            (None, None) => true,
            (Some((f1, t1)), Some((f2, t2))) => f1 == f2 && (t1 - t2).abs() <= 1e-9,
            _ => false,
        };
        mismatches += !same as usize;
    }
    let detail = format!(
        "{} faces, 10000 rays, {hits} hits, {mismatches} mismatches",
        mesh.face_count()
    );
    if mismatches > 0 {
        return Err(detail);
    }
    within(start.elapsed(), 30, detail)
}

fn ground_truth_ratio() -> Outcome {
    let mesh = primitives::icosphere(1.0, 2);
    let (a, b) = (7, 250);
    let fix = |face| ScriptedFixation { face, duration: 0.3 };
    let log = scripted_gaze_log(
        &mesh,
        &[fix(a), fix(b), fix(a)],
        &ScriptOptions {
            yaw_deg: 30.0,
            ..Default::default()
        },
    );
    let samples = log
        .iter()
        .map(|r| r.to_model_frame())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let gt = build_saliency_map(&mesh, &Bvh::build(&mesh, 4), &[samples], &GazeConfig::default())
        .map_err(|e| e.to_string())?;
    let v = gt.normalized.values();
    let ratio = v[a] / v[b];
    let sum: f64 = v.iter().sum();
    check(
        (ratio / 2.0 - 1.0).abs() < 0.05 && (sum - 1.0).abs() < 1e-9,
        format!("ratio {ratio:.4}, sum - 1 = {:.1e}", sum - 1.0),
    )
}

fn connected_and_distinct(adjacency: &[Vec<usize>], members: &[usize]) -> bool {
    let set: HashSet<usize> = members.iter().copied().collect();
    if set.len() != members.len() {
        return false;
    }
    let mut seen = HashSet::from([members[0]]);
    let mut queue = VecDeque::from([members[0]]);
    while let Some(f) = queue.pop_front() {
        for &g in &adjacency[f] {
            if set.contains(&g) && seen.insert(g) {
                queue.push_back(g);
            }
        }
    }
    seen.len() == set.len()
}

fn subgraph_connectivity() -> Outcome {
    let meshes: Vec<TriMesh> = vec![
        primitives::icosphere(1.0, 2),
        primitives::icosphere(1.0, 3),
        primitives::uv_sphere(1.0, 16, 10),
        primitives::uv_sphere(2.0, 24, 12),
        primitives::bumpy_sphere(10, 11, 0.15, 4),
        primitives::bumpy_sphere(20, 14, 0.05, 8),
        primitives::bumpy_sphere(12, 30, 0.2, 2),
        primitives::textured_grid(10, 8, 1.0),
        primitives::textured_grid(20, 5, 2.0),
        primitives::strip(150),
    ];
    let cfg = PatchConfig {
        count: 100,
        size: 16,
        ..Default::default()
    };
    let sampler = sampler_registry()
        .create(&cfg.sampler, &cfg)
        .map_err(|e| e.to_string())?;
    let (mut total, mut violations) = (0, 0);
    for (i, mesh) in meshes.iter().enumerate() {
        let centers = fps_centers(mesh, cfg.count).map_err(|e| e.to_string())?;
        for s in sampler.sample(mesh, &centers, 17, i as u64) {
            total += 1;
            let ok = s.members.first() == Some(&s.center) && connected_and_distinct(mesh.adjacency(), &s.members);
            violations += !ok as usize;
        }
    }
    check(
        total == 1000 && violations == 0,
        format!("{total} subgraphs, {violations} violations"),
    )
}

fn metric_fixtures() -> Outcome {
    let x = [0.3, 1.2, 0.05, 2.0, 0.7];
    let p = [0.1, 0.4, 0.2, 0.3];
    let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    let k = kld(&[0.5, 0.5], &[0.25, 0.75]).map_err(|e| e.to_string())?;
    let fixtures = [
        ("cc(x,x)", cc(&x, &x), 1.0, 1e-12),
        ("kld(p,p)", kld(&p, &p), 0.0, 1e-9),
        ("sim(p,p)", sim(&p, &p), 1.0, 1e-12),
        ("se(x,x)", se(&x, &x), 0.0, 1e-12),
        ("kld([.5,.5],[.25,.75])", Ok(k), expected, 1e-9),
        ("kld vs 0.1438", Ok(k), 0.1438, 1e-3),
    ];
    let mut failed = Vec::new();
    for (name, got, want, tol) in fixtures {
        match got {
            Ok(v) if (v - want).abs() <= tol => {}
            other => failed.push(format!("{name} = {other:?}")),
        }
    }
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("kld = {k:.6}")
        } else {
            failed.join("; ")
        },
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let mesh = primitives::bumpy_sphere(10, 11, 0.15, 4);
    let gt = demo::irregularity_target(&mesh).map_err(|e| e.to_string())?;
    let mut model =
        meshsal::model::SaliencyModel::new(demo::demo_model_config(InputMode::Geometry)).map_err(|e| e.to_string())?;
    let sample = Sample::new(&model, "bumpy", mesh, gt).map_err(|e| e.to_string())?;
    let out = train(
        &mut model,
        std::slice::from_ref(&sample),
        &[],
        &demo::demo_train_config(),
    )
    .map_err(|e| e.to_string())?;
    let last = out.history.last().ok_or("empty history")?;
    let l1 = last.train_l1;
    let best_cc = out.best_metrics.cc;
    let detail = format!(
        "{} faces, {} epochs, train L1 {l1:.4}, CC {best_cc:.4}",
        sample.mesh.face_count(),
        out.history.len()
    );
    if !(l1 < 0.02 && best_cc > 0.95) {
        return Err(detail);
    }
    within(start.elapsed(), 900, detail)
}

fn flops_linearity() -> Outcome {
    let mesh = primitives::uv_sphere(1.0, 40, 26);
    let cfg = ModelConfig {
        encoder_width: 32,
        token_dim: 32,
        head_hidden: 32,
        ..Default::default()
    };
    let rows = flops_grid(&cfg, &mesh, &[64, 128, 256], &[16, 32, 64]).map_err(|e| e.to_string())?;
    let r2 = min_axis_r2(&rows).map_err(|e| e.to_string())?;
    check(
        r2 > 0.99,
        format!("{} faces, min per-axis R^2 {r2:.6}", mesh.face_count()),
    )
}

fn ablation_parity() -> Outcome {
    let mesh = demo::demo_mesh();
    let gt = demo::irregularity_target(&mesh).map_err(|e| e.to_string())?;
    let keys: Vec<&str> = ABLATIONS.iter().map(|a| a.key).collect();
    let rows = run_ablations(
        &demo::demo_model_config(InputMode::Texture),
        &demo::demo_train_config(),
        &[(mesh, gt)],
        &[],
        &keys,
    )
    .map_err(|e| e.to_string())?;
    let all_finite = rows.iter().all(|r| {
        [r.metrics.cc, r.metrics.sim, r.metrics.kld, r.metrics.se]
            .iter()
            .all(|v| v.is_finite())
    });
    let cc_of = |label: &str| rows.iter().find(|r| r.label == label).map(|r| r.metrics.cc);
    let (full, shape) = (
        cc_of("Full").ok_or("no Full row")?,
        cc_of("w/o Shape").ok_or("no w/o Shape row")?,
    );
    check(
        rows.len() == ABLATIONS.len() + 1 && all_finite && shape < full,
        format!("{} rows, Full CC {full:.4}, w/o Shape CC {shape:.4}", rows.len()),
    )
}

fn simplification() -> Outcome {
    let mesh = primitives::bumpy_sphere(40, 26, 0.02, 9);
    let saliency = demo::salient_patch(&mesh, Vec3::new(1.0, 0.0, 0.0), 0.1);
    let region = demo::top_fraction(&saliency, 0.2);
    let target = mesh.face_count() / 4;
    let run = |cost: &str, lambda: f64, s: Option<&[f64]>| {
        simplify_to(
            &mesh,
            s,
            target,
            &SimplifyConfig {
                cost: cost.into(),
                lambda,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())
    };
    let base = run("qem", 0.0, None)?;
    let zero = run("saliency-qem", 0.0, Some(&saliency))?;
    let five = run("saliency-qem", 5.0, Some(&saliency))?;
    let same = base.collapses == zero.collapses && !base.collapses.is_empty();
    let equal_count = zero.mesh.face_count() == five.mesh.face_count();
    let (r0, r5) = (retained_in_region(&zero, &region), retained_in_region(&five, &region));
    check(
        same && equal_count && r5 > r0,
        format!(
            "{} -> {} faces, lambda=0 sequence identical: {same}, region faces kept {r0} (lambda=0) vs {r5} (lambda=5)",
            mesh.face_count(),
            five.mesh.face_count()
        ),
    )
}

fn cli(dir: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_meshsal"))
        .current_dir(dir)
        .args(["--seed", "21", "--threads", &threads.to_string()])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    std::fs::write(dir.join(format!("{}.stdout", args[0])), &out.stdout).map_err(|e| e.to_string())
}

fn cli_session(dir: &Path, threads: usize) -> Result<(), String> {
    let mesh = primitives::bumpy_sphere(10, 11, 0.15, 4);
    std::fs::write(dir.join("mesh.obj"), write_obj(&mesh)).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("small.toml"),
        "[model]\nencoder_width = 8\ntoken_dim = 8\nhead_hidden = 8\n[model.patches]\ncount = 8\nsize = 8\n\
         [model.ssm]\nstate_dim = 4\nblocks = 1\n[train]\nepochs = 4\n",
    )
    .map_err(|e| e.to_string())?;
    let steps: [&[&str]; 9] = [
        &[
            "synth", "--mesh", "mesh.obj", "--fixate", "5:0.3", "--fixate", "120:0.3", "--yaw", "15", "--out",
            "gaze.csv",
        ],
        &["gen-gt", "--mesh", "mesh.obj", "--gaze", "gaze.csv", "--out", "gt.txt"],
        &["features", "--mesh", "mesh.obj", "--out", "features.bin"],
        &[
            "train",
            "--config",
            "small.toml",
            "--mesh",
            "mesh.obj",
            "--gt",
            "gt.txt",
            "--out",
            "model.ck",
            "--history",
            "history.csv",
        ],
        &[
            "predict",
            "--checkpoint",
            "model.ck",
            "--mesh",
            "mesh.obj",
            "--out",
            "pred.txt",
        ],
        &["eval", "--pred", "pred.txt", "--gt", "gt.txt", "--out", "metrics.csv"],
        &[
            "simplify",
            "--target-faces",
            "80",
            "--saliency",
            "pred.txt",
            "mesh.obj",
            "simple.obj",
        ],
        &[
            "flops",
            "--config",
            "small.toml",
            "--L",
            "8,16",
            "--M",
            "4,8",
            "--mesh",
            "mesh.obj",
            "--out",
            "flops.csv",
        ],
        &[
            "ablate",
            "--config",
            "small.toml",
            "--off",
            "shape",
            "--off",
            "ssm-forward",
            "--out",
            "ablate.csv",
        ],
    ];
    for step in steps {
        cli(dir, threads, step)?;
    }
    Ok(())
}

fn cli_determinism() -> Outcome {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    cli_session(dirs[0].path(), 1)?;
    cli_session(dirs[1].path(), 4)?;
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .map_err(|e| e.to_string())?
        .map(|e| {
            e.map(|e| e.file_name().to_string_lossy().into_owned())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(dirs[0].path().join(n)).ok() != std::fs::read(dirs[1].path().join(n)).ok())
        .collect();
    check(
        differing.is_empty(),
        format!(
            "{} files over 9 commands (1 vs 4 threads), differing: {differing:?}",
            names.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("scan oracle", scan_oracle),
        ("gradient check", gradient_check),
        ("bvh vs brute force", bvh_matches_brute_force),
        ("ground-truth 2:1 ratio", ground_truth_ratio),
        ("subgraph connectivity", subgraph_connectivity),
        ("metric fixtures", metric_fixtures),
        ("overfit learnability", overfit),
        ("flops linearity", flops_linearity),
        ("ablation parity", ablation_parity),
        ("simplification", simplification),
        ("cli determinism", cli_determinism),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1)
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
