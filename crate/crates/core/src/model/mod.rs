//! The saliency network: per-face input fusion, graph-convolution encoder, patch tokens,
//! sequence backbone, inverse-distance propagation and per-face head.

pub mod backbone;
pub mod patches;
pub mod propagate;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::features::{face_colors, geo_features, geometry_matrix, FeatureGroups};
use crate::geom::Vec3;
use crate::mesh::TriMesh;
use crate::nn::Linear;
use crate::saliency::{MapKind, Normalization, SaliencyMap};
use crate::ssm::SsmConfig;
use crate::tensor::{Mat, SparseMat};
use crate::texture::{
    bilinear_taps, encoder_registry, face_feature_grid, face_sample_points, im2col, pool_face_feature, ConvEncoder,
    EncoderConfig, PoolMode, TextureImage,
};

pub use backbone::{backbone_registry, Backbone, BackboneContext};
pub use patches::{
    fps_centers, knn_subgraph, random_walk_subgraph, sampler_registry, slot_rng, subgraph_dump, subgraph_is_valid,
    PatchConfig, PatchSampler, Subgraph,
};
pub use propagate::{propagation_weights, PredictHead, PropagationConfig};

/// Epoch value used for evaluation; patch sampling is frozen under it.
pub const EVAL_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Geometric features only.
    #[default]
    Geometry,
    /// Geometry plus mean vertex color.
    Color,
    /// Geometry plus pooled texture features.
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureInputConfig {
    pub encoder: String,
    #[serde(flatten)]
    pub encoder_config: EncoderConfig,
    /// Texture channel count the encoder is built for.
    pub channels: usize,
    /// Grid density `G` per face.
    pub density: usize,
    pub pool: PoolMode,
    /// Train the conv encoder weights with the rest of the model.
    pub trainable: bool,
}

impl Default for TextureInputConfig {
    fn default() -> Self {
        TextureInputConfig {
            encoder: "conv".into(),
            encoder_config: EncoderConfig::default(),
            channels: 3,
            density: 8,
            pool: PoolMode::Mean,
            trainable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input: InputMode,
    pub features: FeatureGroups,
    pub texture: TextureInputConfig,
    pub encoder_layers: usize,
    /// `D_enc`
    pub encoder_width: usize,
    /// Include the neighbor term in the encoder layers.
    pub graph_conv: bool,
    pub patches: PatchConfig,
    /// `D_tok`
    pub token_dim: usize,
    pub backbone: String,
    pub ssm: SsmConfig,
    pub propagation: PropagationConfig,
    pub head_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input: InputMode::Geometry,
            features: FeatureGroups::default(),
            texture: TextureInputConfig::default(),
            encoder_layers: 2,
            encoder_width: 128,
            graph_conv: true,
            patches: PatchConfig::default(),
            token_dim: 192,
            backbone: "mamba".into(),
            ssm: SsmConfig::default(),
            propagation: PropagationConfig::default(),
            head_hidden: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    fn trainable_texture(&self) -> bool {
        self.input == InputMode::Texture && self.texture.encoder == "conv" && self.texture.trainable
    }

    fn texture_dim(&self) -> Result<usize> {
        let enc = encoder_registry().create(
            &self.texture.encoder,
            &(self.texture.encoder_config.clone(), self.texture.channels),
        )?;
        Ok(enc.dim(self.texture.channels))
    }

    /// Width of the fused per-face input.
    pub fn input_dim(&self) -> Result<usize> {
        let geo = self.features.dim();
        Ok(match self.input {
            InputMode::Geometry => geo,
            InputMode::Color => geo + 3,
            InputMode::Texture => geo + self.texture_dim()?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("token_dim", self.token_dim),
            ("head_hidden", self.head_hidden),
            ("patches.size", self.patches.size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.patches.count < self.propagation.neighbors {
            return Err(Error::Config(format!(
                "patches.count = {} is below the {} propagation neighbors",
                self.patches.count, self.propagation.neighbors
            )));
        }
        if self.input_dim()? == 0 {
            return Err(Error::Config("model input is empty".into()));
        }
        Ok(())
    }
}

/// Texture branch, prepared once per mesh.
#[derive(Debug, Clone)]
pub enum TextureInput {
    Fixed(Mat),
    /// `pool(S * silu(P K + b))`: `P` holds the 3x3 windows of every texel the grid touches,
    /// `S` maps texels to faces (mean) or to grid samples (max, reduced by `segments`).
    Trainable {
        windows: Mat,
        sampling: Arc<SparseMat>,
        segments: Option<Vec<Vec<usize>>>,
    },
}

/// Everything the forward pass needs from a mesh that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct MeshInputs {
    pub base: Mat,
    pub texture: Option<TextureInput>,
    /// Row-normalized face adjacency; isolated faces map to themselves.
    pub adjacency: Arc<SparseMat>,
    pub token_centers: Vec<usize>,
    pub propagation: Arc<SparseMat>,
    pub face_count: usize,
}

fn mean_adjacency(mesh: &TriMesh) -> SparseMat {
    let rows: Vec<Vec<(usize, f64)>> = mesh
        .adjacency()
        .iter()
        .enumerate()
        .map(|(f, n)| {
            if n.is_empty() {
                vec![(f, 1.0)]
            } else {
                n.iter().map(|&j| (j, 1.0 / n.len() as f64)).collect()
            }
        })
        .collect();
    SparseMat::from_rows(mesh.face_count(), &rows)
}

/// Frozen per-face texture features: encode the image once, then pool each face's grid.
pub fn texture_feature_matrix(mesh: &TriMesh, image: &TextureImage, cfg: &TextureInputConfig) -> Result<Mat> {
    let enc = encoder_registry().create(&cfg.encoder, &(cfg.encoder_config.clone(), image.channels))?;
    let map = enc.encode(image)?;
    let rows = (0..mesh.face_count())
        .map(|f| {
            Ok(pool_face_feature(
                &face_feature_grid(mesh, &map, f, cfg.density)?,
                cfg.pool,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_rows(&rows))
}

fn trainable_texture(mesh: &TriMesh, image: &TextureImage, cfg: &TextureInputConfig) -> Result<TextureInput> {
    let (w, h) = (image.width, image.height);
    let samples_per_face = cfg.density * cfg.density;
    let mut texel_slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sample_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(mesh.face_count() * samples_per_face);
    for f in 0..mesh.face_count() {
        let (points, _) = face_sample_points(mesh, f, cfg.density)?;
        for p in points {
            let row = bilinear_taps(w, h, p)
                .into_iter()
                .filter(|(_, wt)| *wt != 0.0)
                .map(|(cell, wt)| {
                    let next = texel_slot.len();
                    (*texel_slot.entry(cell).or_insert(next), wt)
                })
                .collect();
            sample_rows.push(row);
        }
    }
    let all = im2col(image);
    let mut windows = Mat::zeros(texel_slot.len(), all.cols);
    for (&cell, &slot) in &texel_slot {
        windows.row_mut(slot).copy_from_slice(all.row(cell));
    }
    let cols = texel_slot.len();
    Ok(match cfg.pool {
        PoolMode::Mean => {
            let scale = 1.0 / samples_per_face as f64;
            let rows: Vec<Vec<(usize, f64)>> = sample_rows
                .chunks(samples_per_face)
                .map(|face| face.iter().flatten().map(|&(c, wt)| (c, wt * scale)).collect())
                .collect();
            TextureInput::Trainable {
                windows,
                sampling: Arc::new(SparseMat::from_rows(cols, &rows)),
                segments: None,
            }
        }
        PoolMode::Max => {
            let segments = (0..mesh.face_count())
                .map(|f| (f * samples_per_face..(f + 1) * samples_per_face).collect())
                .collect();
            TextureInput::Trainable {
                windows,
                sampling: Arc::new(SparseMat::from_rows(cols, &sample_rows)),
                segments: Some(segments),
            }
        }
    })
}

struct GraphConvLayer {
    self_term: Linear,
    neighbor_term: Option<Linear>,
}

struct TextureParams {
    kernel: ParamId,
    bias: ParamId,
}

/// Saliency network with its parameters.
pub struct SaliencyModel {
    config: ModelConfig,
    store: ParamStore,
    texture: Option<TextureParams>,
    encoder: Vec<GraphConvLayer>,
    patch_projection: Linear,
    cls: ParamId,
    pos: ParamId,
    sampler: Box<dyn PatchSampler>,
    backbone: Box<dyn Backbone>,
    head: PredictHead,
}

impl std::fmt::Debug for SaliencyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaliencyModel")
            .field("backbone", &self.backbone.name())
            .field("sampler", &self.sampler.name())
            .field("parameters", &self.store.scalar_count())
            .finish()
    }
}

impl SaliencyModel {
    /// Builds and initializes the network. Parameter names and initial values depend only
    /// on the config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input_dim = config.input_dim()?;

        let texture = if config.trainable_texture() {
            let conv = ConvEncoder::new(config.texture.channels, &config.texture.encoder_config)?;
            Some(TextureParams {
                kernel: store.add("texture.kernel", conv.kernel),
                bias: store.add("texture.bias", conv.bias),
            })
        } else {
            None
        };

        let width = config.encoder_width;
        let encoder = (0..config.encoder_layers)
            .map(|k| {
                let fan_in = if k == 0 { input_dim } else { width };
                let name = format!("encoder.layer{k}");
                GraphConvLayer {
                    self_term: Linear::new(&mut store, &format!("{name}.self"), fan_in, width, true, &mut rng),
                    neighbor_term: config
                        .graph_conv
                        .then(|| Linear::new(&mut store, &format!("{name}.neighbor"), fan_in, width, false, &mut rng)),
                }
            })
            .collect();

        let d = config.token_dim;
        let l = config.patches.count;
        let patch_projection = Linear::new(&mut store, "embed.projection", 2 * width, d, false, &mut rng);
        let cls = store.add("embed.cls", crate::nn::uniform_init(&mut rng, 1, d, d));
        let pos = store.add("embed.pos", crate::nn::uniform_init(&mut rng, l + 1, d, d));

        let sampler = sampler_registry().create(&config.patches.sampler, &config.patches)?;
        let backbone = {
            let cx = BackboneContext {
                prefix: "backbone",
                dim: d,
                ssm: &config.ssm,
                store: RefCell::new(&mut store),
                rng: RefCell::new(&mut rng),
            };
            backbone_registry().create(&config.backbone, &cx)?
        };
        let head = PredictHead::new(&mut store, "head", d + width, config.head_hidden, &mut rng);

        Ok(SaliencyModel {
            config,
            store,
            texture,
            encoder,
            patch_projection,
            cls,
            pos,
            sampler,
            backbone,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Computes the parameter-independent inputs for one mesh.
    pub fn prepare(&self, mesh: &TriMesh) -> Result<MeshInputs> {
        let cfg = &self.config;
        let feats = geo_features(mesh)?;
        let mut base = geometry_matrix(mesh, &feats, cfg.features);
        let mut texture = None;
        match cfg.input {
            InputMode::Geometry => {}
            InputMode::Color => {
                let colors =
                    face_colors(mesh).ok_or_else(|| Error::Config("color input requires vertex colors".into()))?;
                base = hcat(&base, &colors);
            }
            InputMode::Texture => {
                let image = mesh
                    .texture()
                    .ok_or_else(|| Error::Config("texture input requires a textured mesh".into()))?;
                if image.channels != cfg.texture.channels {
                    return Err(Error::Config(format!(
                        "model expects {}-channel textures, mesh has {}",
                        cfg.texture.channels, image.channels
                    )));
                }
                texture = Some(if cfg.trainable_texture() {
                    trainable_texture(mesh, image, &cfg.texture)?
                } else {
                    TextureInput::Fixed(texture_feature_matrix(mesh, image, &cfg.texture)?)
                });
            }
        }
        let token_centers = fps_centers(mesh, cfg.patches.count)?;
        let face_points = mesh.face_centers();
        let center_points: Vec<Vec3> = token_centers.iter().map(|&f| face_points[f]).collect();
        let propagation = propagation_weights(&face_points, &center_points, &cfg.propagation)?;
        Ok(MeshInputs {
            base,
            texture,
            adjacency: Arc::new(mean_adjacency(mesh)),
            token_centers,
            propagation: Arc::new(propagation),
            face_count: mesh.face_count(),
        })
    }

    fn texture_features(&self, tape: &mut Tape, input: &TextureInput) -> Var {
        match (input, &self.texture) {
            (TextureInput::Fixed(m), _) => tape.constant(m.clone()),
            (
                TextureInput::Trainable {
                    windows,
                    sampling,
                    segments,
                },
                Some(p),
            ) => {
                let x = tape.constant(windows.clone());
                let k = tape.param(&self.store, p.kernel);
                let b = tape.param(&self.store, p.bias);
                let codes = tape.matmul(x, k);
                let codes = tape.add_row(codes, b);
                let codes = tape.silu(codes);
                let sampled = tape.sparse_matmul(sampling.clone(), codes);
                match segments {
                    Some(s) => tape.segment_max(sampled, s),
                    None => sampled,
                }
            }
            (TextureInput::Trainable { .. }, None) => unreachable!("trainable texture input without parameters"),
        }
    }

    /// Per-face embedding from the graph-convolution encoder (`faces x D_enc`).
    pub fn encode(&self, tape: &mut Tape, inputs: &MeshInputs) -> Result<Var> {
        let mut x = tape.constant(inputs.base.clone());
        if let Some(t) = &inputs.texture {
            let tex = self.texture_features(tape, t);
            x = tape.concat_cols(&[x, tex]);
        }
        for (k, layer) in self.encoder.iter().enumerate() {
            let mut h = layer.self_term.forward(tape, &self.store, x);
            if let Some(n) = &layer.neighbor_term {
                let mean = tape.sparse_matmul(inputs.adjacency.clone(), x);
                let nh = n.forward(tape, &self.store, mean);
                h = tape.add(h, nh);
            }
            x = tape.silu(h);
            if !tape.value(x).is_finite() {
                return Err(Error::Numeric(format!("non-finite activations in encoder layer {k}")));
            }
        }
        Ok(x)
    }

    /// `(L+1) x D_tok` token sequence: `[cls; pool(patch) W] + pos`.
    pub fn embed(&self, tape: &mut Tape, embedding: Var, subgraphs: &[Subgraph]) -> Result<Var> {
        let l = self.config.patches.count;
        let m = self.config.patches.size;
        if subgraphs.len() != l {
            return Err(Error::Config(format!(
                "expected {l} subgraphs, got {}",
                subgraphs.len()
            )));
        }
        let faces = tape.value(embedding).rows;
        let rows: Vec<Vec<(usize, f64)>> = subgraphs
            .iter()
            .map(|s| {
                let len = s.members.len();
                let mut row: Vec<(usize, f64)> = s.members.iter().map(|&f| (f, 1.0 / len.max(m) as f64)).collect();
                if len < m {
                    row[0].1 = (1 + m - len) as f64 / m as f64;
                }
                row
            })
            .collect();
        let pool = Arc::new(SparseMat::from_rows(faces, &rows));
        let mean = tape.sparse_matmul(pool, embedding);
        let segments: Vec<Vec<usize>> = subgraphs.iter().map(|s| s.members.clone()).collect();
        let max = tape.segment_max(embedding, &segments);
        let pooled = tape.concat_cols(&[mean, max]);
        let tokens = self.patch_projection.forward(tape, &self.store, pooled);
        let cls = tape.param(&self.store, self.cls);
        let z = tape.concat_rows(&[cls, tokens]);
        let pos = tape.param(&self.store, self.pos);
        Ok(tape.add(z, pos))
    }

    /// Patch subgraphs for the given epoch ([`EVAL_EPOCH`] for evaluation).
    pub fn subgraphs(&self, mesh: &TriMesh, inputs: &MeshInputs, epoch: u64) -> Vec<Subgraph> {
        self.sampler
            .sample(mesh, &inputs.token_centers, self.config.seed, epoch)
    }

    /// Full forward pass; returns the `faces x 1` prediction.
    pub fn forward(&self, tape: &mut Tape, mesh: &TriMesh, inputs: &MeshInputs, epoch: u64) -> Result<Var> {
        if inputs.face_count != mesh.face_count() {
            return Err(Error::LengthMismatch {
                left: inputs.face_count,
                right: mesh.face_count(),
            });
        }
        let embedding = self.encode(tape, inputs)?;
        let subgraphs = self.subgraphs(mesh, inputs, epoch);
        let z = self.embed(tape, embedding, &subgraphs)?;
        let mut rng = slot_rng(self.config.seed, epoch, usize::MAX);
        let z = self.backbone.forward(tape, &self.store, z, &mut rng)?;
        let l = self.config.patches.count;
        let tokens = tape.slice_rows(z, 1, l + 1);
        let per_face = tape.sparse_matmul(inputs.propagation.clone(), tokens);
        let features = tape.concat_cols(&[per_face, embedding]);
        let y = self.head.forward(tape, &self.store, features);
        if !tape.value(y).is_finite() {
            return Err(Error::Numeric("non-finite prediction".into()));
        }
        Ok(y)
    }

    /// Evaluation-mode prediction as a saliency map.
    pub fn predict(&self, mesh: &TriMesh, inputs: &MeshInputs) -> Result<SaliencyMap> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, mesh, inputs, EVAL_EPOCH)?;
        SaliencyMap::new(tape.value(y).data.clone(), MapKind::Prediction, Normalization::Raw)
    }

    /// Floating-point operations of one evaluation forward pass.
    pub fn forward_flops(&self, mesh: &TriMesh, inputs: &MeshInputs) -> Result<u64> {
        let mut tape = Tape::new();
        self.forward(&mut tape, mesh, inputs, EVAL_EPOCH)?;
        Ok(tape.flops())
    }
}

fn hcat(a: &Mat, b: &Mat) -> Mat {
    Mat::from_fn(a.rows, a.cols + b.cols, |r, c| {
        if c < a.cols {
            a.get(r, c)
        } else {
            b.get(r, c - a.cols)
        }
    })
}
