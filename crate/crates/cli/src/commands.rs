use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use meshsal::ablation::{run_ablations, ABLATIONS};
use meshsal::config::PipelineConfig;
use meshsal::demo;
use meshsal::features::{geo_features, geometry_matrix, write_feature_dump};
use meshsal::flops::{flops_grid, min_axis_r2};
use meshsal::gaze::{
    build_saliency_map, load_gaze_log, scripted_gaze_log, write_gaze_csv, Bvh, ScriptOptions, ScriptedFixation,
};
use meshsal::mesh::{load_mesh, primitives, write_obj, LoadOptions, TriMesh};
use meshsal::metrics::{evaluate, MetricRow};
use meshsal::model::{texture_feature_matrix, SaliencyModel};
use meshsal::saliency::SaliencyMap;
use meshsal::simplify::simplify_to;
use meshsal::tensor::Mat;
use meshsal::train::{predict_mesh, train, write_log_csv, Checkpoint, Sample};
use meshsal::{Error, Result};

pub struct Context {
    pub command: &'static str,
    pub cfg: PipelineConfig,
}

impl Context {
    /// `<output>.manifest.json` with the command, config hash, seed and tool version.
    fn manifest(&self, output: &Path) -> Result<()> {
        let manifest = serde_json::json!({
            "command": self.command,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let mut path = output.as_os_str().to_owned();
        path.push(".manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_text(Path::new(&path), &text)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn read_mesh(path: &Path, texture: Option<&PathBuf>) -> Result<TriMesh> {
    load_mesh(
        path,
        &LoadOptions {
            texture: texture.cloned(),
            skip_texture: false,
        },
    )
}

/// Pairs `--mesh`/`--gt` in order; falls back to the built-in demo mesh when none are given.
fn dataset(meshes: &[PathBuf], gts: &[PathBuf]) -> Result<Vec<(String, TriMesh, SaliencyMap)>> {
    if meshes.len() != gts.len() {
        return Err(Error::Config(format!(
            "{} --mesh but {} --gt arguments",
            meshes.len(),
            gts.len()
        )));
    }
    if meshes.is_empty() {
        log::info!("no meshes given, using the built-in demo mesh");
        let mesh = demo::demo_mesh();
        let gt = demo::irregularity_target(&mesh)?;
        return Ok(vec![("demo".into(), mesh, gt)]);
    }
    meshes
        .iter()
        .zip(gts)
        .map(|(m, g)| Ok((m.display().to_string(), read_mesh(m, None)?, SaliencyMap::load(g)?)))
        .collect()
}

#[derive(Debug, Args)]
pub struct GenGt {
    #[arg(long)]
    mesh: PathBuf,
    /// Gaze log CSV; repeat for several sessions.
    #[arg(long, required = true)]
    gaze: Vec<PathBuf>,
    /// Distribution-normalized map.
    #[arg(long)]
    out: PathBuf,
    /// Also write the unnormalized density here.
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

impl GenGt {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let mesh = load_mesh(
            &self.mesh,
            &LoadOptions {
                skip_texture: true,
                ..Default::default()
            },
        )?;
        let sessions = self
            .gaze
            .iter()
            .map(|p| {
                load_gaze_log(p)?
                    .iter()
                    .map(|r| r.to_model_frame())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let bvh = Bvh::build(&mesh, 4);
        let gt = build_saliency_map(&mesh, &bvh, &sessions, &ctx.cfg.gaze)?;
        log::info!("{} fixations, {} on the mesh", gt.fixations.len(), gt.fixations_hit());
        gt.normalized.save(&self.out)?;
        ctx.manifest(&self.out)?;
        if let Some(raw) = &self.raw_out {
            gt.raw.save(raw)?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct Synth {
    #[arg(long)]
    mesh: PathBuf,
    /// `FACE:SECONDS`; repeat in viewing order.
    #[arg(long, required = true, value_parser = parse_fixation)]
    fixate: Vec<ScriptedFixation>,
    /// Model yaw recorded in the log, degrees.
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    #[arg(long, default_value_t = 2.0)]
    distance: f64,
    #[arg(long, default_value_t = 120.0)]
    rate: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_fixation(s: &str) -> std::result::Result<ScriptedFixation, String> {
    let (face, secs) = s.split_once(':').ok_or("expected FACE:SECONDS")?;
    Ok(ScriptedFixation {
        face: face.parse().map_err(|e| format!("face: {e}"))?,
        duration: secs.parse().map_err(|e| format!("seconds: {e}"))?,
    })
}

impl Synth {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let mesh = load_mesh(
            &self.mesh,
            &LoadOptions {
                skip_texture: true,
                ..Default::default()
            },
        )?;
        if let Some(bad) = self.fixate.iter().find(|f| f.face >= mesh.face_count()) {
            return Err(Error::Config(format!(
                "face {} out of range ({} faces)",
                bad.face,
                mesh.face_count()
            )));
        }
        let opts = ScriptOptions {
            distance: self.distance,
            rate_hz: self.rate,
            yaw_deg: self.yaw,
            ..Default::default()
        };
        write_text(
            &self.out,
            &write_gaze_csv(&scripted_gaze_log(&mesh, &self.fixate, &opts))?,
        )?;
        ctx.manifest(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct Features {
    #[arg(long)]
    mesh: PathBuf,
    /// Texture image overriding the OBJ material.
    #[arg(long)]
    texture: Option<PathBuf>,
    /// Geometry columns only, even for textured meshes.
    #[arg(long)]
    no_texture: bool,
    #[arg(long)]
    out: PathBuf,
}

impl Features {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let mesh = load_mesh(
            &self.mesh,
            &LoadOptions {
                texture: self.texture.clone(),
                skip_texture: self.no_texture,
            },
        )?;
        let groups = ctx.cfg.model.features;
        let mut matrix = geometry_matrix(&mesh, &geo_features(&mesh)?, groups);
        let mut columns = groups.column_names();
        if let Some(image) = mesh.texture() {
            let tex = texture_feature_matrix(&mesh, image, &ctx.cfg.model.texture)?;
            columns.extend((0..tex.cols).map(|k| format!("texture.{k}")));
            matrix = Mat::from_fn(matrix.rows, matrix.cols + tex.cols, |r, c| {
                if c < matrix.cols {
                    matrix.get(r, c)
                } else {
                    tex.get(r, c - matrix.cols)
                }
            });
        }
        write_feature_dump(&self.out, &matrix, &columns)?;
        ctx.manifest(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct Train {
    /// Training mesh; repeat, paired in order with `--gt`. Omit both for the demo mesh.
    #[arg(long)]
    mesh: Vec<PathBuf>,
    #[arg(long)]
    gt: Vec<PathBuf>,
    /// Best checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and metrics CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Train {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let mut train_cfg = ctx.cfg.train.clone();
        if let Some(e) = self.epochs {
            train_cfg.epochs = e;
        }
        let mut model = SaliencyModel::new(ctx.cfg.model.clone())?;
        let data = dataset(&self.mesh, &self.gt)?;
        let (tr, va) = train_cfg.split(data.len());
        let pick = |idx: &[usize]| {
            idx.iter()
                .map(|&i| {
                    let (name, mesh, gt) = &data[i];
                    Sample::new(&model, name.clone(), mesh.clone(), gt.clone())
                })
                .collect::<Result<Vec<_>>>()
        };
        let (train_set, val_set) = (pick(&tr)?, pick(&va)?);
        let outcome = train(&mut model, &train_set, &val_set, &train_cfg)?;
        if let Some(reason) = &outcome.stopped {
            log::warn!("training stopped early: {reason}");
        }
        outcome.best.save(&self.out)?;
        if let Some(h) = &self.history {
            write_log_csv(&outcome.history, create(h)?)?;
        }
        println!("epoch={} {}", outcome.best.epoch, outcome.best_metrics);
        ctx.manifest(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    texture: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl Predict {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let model = Checkpoint::load(&self.checkpoint)?.restore()?;
        let mesh = read_mesh(&self.mesh, self.texture.as_ref())?;
        predict_mesh(&model, &mesh)?.save(&self.out)?;
        ctx.manifest(&self.out)
    }
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Also write the metrics as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Eval {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let row = evaluate(&SaliencyMap::load(&self.pred)?, &SaliencyMap::load(&self.gt)?)?;
        println!("{row}");
        if let Some(out) = &self.out {
            write_text(out, &metrics_csv(&[("eval".into(), row)]))?;
            ctx.manifest(out)?;
        }
        Ok(())
    }
}

fn metrics_csv(rows: &[(String, MetricRow)]) -> String {
    let mut s = String::from("label,cc,sim,kld,se\n");
    for (label, m) in rows {
        s += &format!("{label},{:.6},{:.6},{:.6},{:.6}\n", m.cc, m.sim, m.kld, m.se);
    }
    s
}

#[derive(Debug, Args)]
pub struct Simplify {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    target_faces: usize,
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-face saliency map; without it every face counts as non-salient.
    #[arg(long)]
    saliency: Option<PathBuf>,
}

impl Simplify {
    pub fn run(self, mut ctx: Context) -> Result<()> {
        if let Some(l) = self.lambda {
            ctx.cfg.simplify.lambda = l;
        }
        let mesh = read_mesh(&self.input, None)?;
        let saliency = self.saliency.as_deref().map(SaliencyMap::load).transpose()?;
        let result = simplify_to(
            &mesh,
            saliency.as_ref().map(|s| s.values()),
            self.target_faces,
            &ctx.cfg.simplify,
        )?;
        log::info!(
            "{} -> {} faces, {} collapses",
            mesh.face_count(),
            result.mesh.face_count(),
            result.collapses.len()
        );
        if result.locked {
            log::warn!("no legal collapse left above the target face count");
        }
        write_text(&self.output, &write_obj(&result.mesh))?;
        ctx.manifest(&self.output)
    }
}

#[derive(Debug, Args)]
pub struct Flops {
    /// Patch counts.
    #[arg(long = "L", value_delimiter = ',', default_values_t = [64, 128, 256])]
    counts: Vec<usize>,
    /// Patch sizes.
    #[arg(long = "M", value_delimiter = ',', default_values_t = [16, 32, 64])]
    sizes: Vec<usize>,
    /// Mesh to measure on; default is a 2000-face sphere.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// CSV destination instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flops {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let mesh = match &self.mesh {
            Some(p) => read_mesh(p, None)?,
            None => primitives::uv_sphere(1.0, 40, 26),
        };
        let rows = flops_grid(&ctx.cfg.model, &mesh, &self.counts, &self.sizes)?;
        let mut csv = String::from("L,M,flops\n");
        for r in &rows {
            csv += &format!("{},{},{}\n", r.count, r.size, r.flops);
        }
        if self.counts.len() > 1 && self.sizes.len() > 1 {
            eprintln!("min per-axis R^2 = {:.6}", min_axis_r2(&rows)?);
        }
        match &self.out {
            Some(out) => {
                write_text(out, &csv)?;
                ctx.manifest(out)
            }
            None => {
                print!("{csv}");
                Ok(())
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct Ablate {
    /// Component to switch off; repeat for several rows. Omit for every row.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(ABLATIONS.map(|a| a.key)))]
    off: Vec<String>,
    /// Training mesh; repeat, paired in order with `--gt`. Omit both for the demo mesh.
    #[arg(long)]
    mesh: Vec<PathBuf>,
    #[arg(long)]
    gt: Vec<PathBuf>,
    /// CSV destination in addition to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Ablate {
    pub fn run(self, ctx: &Context) -> Result<()> {
        let data = dataset(&self.mesh, &self.gt)?;
        let (tr, va) = ctx.cfg.train.split(data.len());
        let pick = |idx: &[usize]| {
            idx.iter()
                .map(|&i| (data[i].1.clone(), data[i].2.clone()))
                .collect::<Vec<_>>()
        };
        let keys: Vec<&str> = if self.off.is_empty() {
            ABLATIONS.iter().map(|a| a.key).collect()
        } else {
            self.off.iter().map(String::as_str).collect()
        };
        let rows = run_ablations(&ctx.cfg.model, &ctx.cfg.train, &pick(&tr), &pick(&va), &keys)?;
        let csv = metrics_csv(&rows.into_iter().map(|r| (r.label, r.metrics)).collect::<Vec<_>>());
        print!("{csv}");
        std::io::stdout().flush().map_err(|e| Error::io("<stdout>", e))?;
        if let Some(out) = &self.out {
            write_text(out, &csv)?;
            ctx.manifest(out)?;
        }
        Ok(())
    }
}
