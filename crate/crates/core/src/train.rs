//! Supervised training: L1 loss, AdamW with step decay, checkpoints and gradient checking.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::metrics::{evaluate, MetricRow};
use crate::model::{MeshInputs, ModelConfig, SaliencyModel};
use crate::saliency::SaliencyMap;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Meshes per optimizer step.
    pub batch: usize,
    /// Share of meshes used for training; the rest are held out for evaluation.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            lr: 1e-3,
            lr_decay: 0.1,
            decay_every: 50,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 1,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.decay_every == 0 || self.batch == 0 {
            return Err(Error::Config("epochs, decay_every and batch must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Seeded shuffle of `0..n` cut into training and held-out indices. At least one index
    /// goes to training; the held-out part may be empty.
    pub fn split(&self, n: usize) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let cut = ((n as f64 * self.train_fraction).round() as usize).clamp(n.min(1), n);
        let held = idx.split_off(cut);
        (idx, held)
    }

    /// `lr * lr_decay^floor(epoch / decay_every)`
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Mean absolute difference between two maps.
pub fn loss_l1(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    let (a, b) = (pred.values(), gt.values());
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64)
}

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, _, m)| Mat::zeros(m.rows, m.cols)).collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    /// Parameters without a gradient count as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let g = grads.get(id);
            let p = store.get_mut(id);
            for i in 0..p.data.len() {
                let gi = g.map_or(0.0, |g| g.data[i]);
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + self.eps);
                p.data[i] -= lr * (update + self.weight_decay * p.data[i]);
            }
        }
    }
}

/// One training or evaluation mesh with its prepared inputs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub mesh: TriMesh,
    pub inputs: MeshInputs,
    pub gt: SaliencyMap,
    /// Ground truth scaled to max 1, as a `faces x 1` column.
    pub target: Mat,
}

impl Sample {
    pub fn new(model: &SaliencyModel, name: impl Into<String>, mesh: TriMesh, gt: SaliencyMap) -> Result<Self> {
        if gt.face_count() != mesh.face_count() {
            return Err(Error::LengthMismatch {
                left: gt.face_count(),
                right: mesh.face_count(),
            });
        }
        let inputs = model.prepare(&mesh)?;
        let target = Mat::from_vec(mesh.face_count(), 1, gt.max_normalized());
        Ok(Sample {
            name: name.into(),
            mesh,
            inputs,
            gt,
            target,
        })
    }
}

/// Metrics of a prediction; a constant prediction scores CC = 0.
pub fn score(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<MetricRow> {
    match evaluate(pred, gt) {
        Err(Error::ConstantMap) => {
            log::debug!("constant prediction; CC taken as 0");
            let (pd, gd) = (pred.distribution(), gt.distribution());
            Ok(MetricRow {
                cc: 0.0,
                sim: crate::metrics::sim(&gd, &pd)?,
                kld: crate::metrics::kld(&gd, &pd)?,
                se: crate::metrics::se(&pred.max_normalized(), &gt.max_normalized())?,
            })
        }
        other => other,
    }
}

/// Mean metrics over a set of samples, in evaluation mode.
pub fn evaluate_samples(model: &SaliencyModel, samples: &[Sample]) -> Result<MetricRow> {
    let mut acc = MetricRow {
        cc: 0.0,
        sim: 0.0,
        kld: 0.0,
        se: 0.0,
    };
    for s in samples {
        let r = score(&model.predict(&s.mesh, &s.inputs)?, &s.gt)?;
        acc.cc += r.cc;
        acc.sim += r.sim;
        acc.kld += r.kld;
        acc.se += r.se;
    }
    let n = samples.len().max(1) as f64;
    Ok(MetricRow {
        cc: acc.cc / n,
        sim: acc.sim / n,
        kld: acc.kld / n,
        se: acc.se / n,
    })
}

/// Loss and gradients for one sample.
pub fn loss_and_grads(model: &SaliencyModel, sample: &Sample, epoch: u64) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let y = model.forward(&mut tape, &sample.mesh, &sample.inputs, epoch)?;
    let loss = tape.l1(y, sample.target.clone());
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss, model.store())?;
    Ok((value, grads))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    epoch: usize,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Model config plus every named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn of(model: &SaliencyModel, epoch: usize) -> Self {
        Checkpoint {
            config: model.config().clone(),
            epoch,
            params: model.store().clone(),
        }
    }

    /// Rebuilds the model from the config and loads the stored values by name.
    pub fn restore(&self) -> Result<SaliencyModel> {
        let mut model = SaliencyModel::new(self.config.clone())?;
        load_params(model.store_mut(), &self.params)?;
        Ok(model)
    }

    /// `MSCK`, u32 version, u32 manifest length, JSON manifest, then f64 LE tensor data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            epoch: self.epoch,
            config: self.config.clone(),
            tensors: self
                .params
                .iter()
                .map(|(_, name, m)| TensorEntry {
                    name: name.to_string(),
                    rows: m.rows,
                    cols: m.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.params.iter() {
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: CheckpointManifest =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let mut data = bytes[12 + len..].chunks_exact(8);
        let mut params = ParamStore::new();
        for t in &manifest.tensors {
            let values = (0..t.rows * t.cols)
                .map(|_| {
                    data.next()
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .ok_or_else(|| bad("truncated tensor data"))
                })
                .collect::<Result<Vec<f64>>>()?;
            params.add(t.name.clone(), Mat::from_vec(t.rows, t.cols, values));
        }
        if data.next().is_some() || !data.remainder().is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            config: manifest.config,
            epoch: manifest.epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn load_params(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for (_, name, value) in src.iter() {
        let id = dst
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor '{name}'")))?;
        let slot = dst.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value.clone();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_l1: f64,
    pub cc: f64,
    pub sim: f64,
    pub kld: f64,
    pub se: f64,
}

pub fn write_log_csv(history: &[EpochLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in history {
        w.serialize(row).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("<log>", e))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best checkpoint by evaluation CC.
    pub best: Checkpoint,
    pub best_metrics: MetricRow,
    pub history: Vec<EpochLog>,
    /// Set when training stopped early.
    pub stopped: Option<String>,
}

/// Trains `model` in place; on return the model holds the best parameters.
///
/// Evaluation uses `val`, or the training set when `val` is empty.
pub fn train(
    model: &mut SaliencyModel,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let eval_set = if val.is_empty() { train_set } else { val };
    let mut opt = AdamW::new(model.store(), cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = Checkpoint::of(model, 0);
    let mut best_metrics = None::<MetricRow>;
    let mut stopped = None;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut summed: Option<Gradients> = None;
            for &i in batch {
                let (loss, grads) = match loss_and_grads(model, &train_set[i], epoch as u64) {
                    Ok(r) => r,
                    Err(Error::Numeric(msg)) => {
                        stopped = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                if !loss.is_finite() {
                    stopped = Some(format!("epoch {epoch}: loss is {loss}"));
                    break 'epochs;
                }
                total += loss;
                summed = Some(match summed {
                    None => grads,
                    Some(acc) => acc.sum(&grads),
                });
            }
            let mut grads = summed.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            opt.step(model.store_mut(), &grads, lr);
        }
        let train_l1 = total / train_set.len() as f64;
        let metrics = match evaluate_samples(model, eval_set) {
            Ok(m) => m,
            Err(Error::Numeric(msg)) => {
                stopped = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        log::info!("epoch {epoch} lr {lr:e} train_l1 {train_l1:.6} {metrics}");
        history.push(EpochLog {
            epoch,
            lr,
            train_l1,
            cc: metrics.cc,
            sim: metrics.sim,
            kld: metrics.kld,
            se: metrics.se,
        });
        if best_metrics.is_none_or(|b| metrics.cc > b.cc) {
            best = Checkpoint::of(model, epoch);
            best_metrics = Some(metrics);
        }
    }
    if let Some(reason) = &stopped {
        log::warn!("training stopped: {reason}");
    }
    load_params(model.store_mut(), &best.params)?;
    let best_metrics = match best_metrics {
        Some(m) => m,
        None => evaluate_samples(model, eval_set)?,
    };
    Ok(TrainOutcome {
        best,
        best_metrics,
        history,
        stopped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub checked: usize,
}

/// Central finite-difference check of every scalar parameter against the analytic
/// gradient of the L1 loss. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(
    model: &mut SaliencyModel,
    sample: &Sample,
    epoch: u64,
    h: f64,
    floor: f64,
) -> Result<GradcheckReport> {
    let (_, grads) = loss_and_grads(model, sample, epoch)?;
    let loss_at = |m: &SaliencyModel| -> Result<f64> {
        let mut tape = Tape::new();
        let y = m.forward(&mut tape, &sample.mesh, &sample.inputs, epoch)?;
        let l = tape.l1(y, sample.target.clone());
        Ok(tape.value(l).get(0, 0))
    };
    let ids: Vec<_> = model.store().iter().map(|(id, _, _)| id).collect();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        checked: 0,
    };
    for id in ids {
        for i in 0..model.store().get(id).len() {
            let orig = model.store().get(id).data[i];
            model.store_mut().get_mut(id).data[i] = orig + h;
            let up = loss_at(model)?;
            model.store_mut().get_mut(id).data[i] = orig - h;
            let down = loss_at(model)?;
            model.store_mut().get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data[i]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = format!("{}[{i}]", model.store().name(id));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Evaluation-mode prediction for a mesh with a trained model.
pub fn predict_mesh(model: &SaliencyModel, mesh: &TriMesh) -> Result<SaliencyMap> {
    let inputs = model.prepare(mesh)?;
    model.predict(mesh, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use crate::model::PatchConfig;
    use crate::saliency::{MapKind, Normalization};
    use crate::ssm::SsmConfig;

    fn map(v: Vec<f64>) -> SaliencyMap {
        SaliencyMap::new(v, MapKind::GroundTruth, Normalization::Raw).unwrap()
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(49), 1e-3);
        assert!((c.lr_at(50) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(100) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn split_partitions() {
        let c = TrainConfig::default();
        let (tr, va) = c.split(10);
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(c.split(10), (tr, va));
        assert_eq!(c.split(1), (vec![0], vec![]));
    }

    #[test]
    fn l1_fixtures() {
        let a = map(vec![0.1, 0.4, 0.9]);
        let b = map(vec![0.2, 0.5, 1.0]);
        assert_eq!(loss_l1(&a, &a).unwrap(), 0.0);
        assert!((loss_l1(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(loss_l1(&a, &b).unwrap(), loss_l1(&b, &a).unwrap());
        assert!(loss_l1(&a, &map(vec![1.0])).is_err());
    }

    #[test]
    fn zero_gradient_step_only_decays() {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::filled(2, 2, 3.0));
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&store, &cfg);
        let grads = {
            let mut tape = Tape::new();
            let c = tape.constant(Mat::filled(1, 1, 0.0));
            let l = tape.l1(c, Mat::zeros(1, 1));
            tape.backward(l, &store).unwrap()
        };
        opt.step(&mut store, &grads, 0.1);
        let expect = 3.0 * (1.0 - 0.1 * 1e-2);
        assert!(store.get(id).data.iter().all(|v| (v - expect).abs() < 1e-15));
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder_width: 6,
            token_dim: 6,
            head_hidden: 5,
            patches: PatchConfig {
                count: 4,
                size: 3,
                ..Default::default()
            },
            ssm: SsmConfig {
                state_dim: 3,
                blocks: 1,
                pseudo_neighbors: 2,
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mesh = primitives::icosphere(1.0, 1);
        let model = SaliencyModel::new(tiny()).unwrap();
        let inputs = model.prepare(&mesh).unwrap();
        let ck = Checkpoint::of(&model, 3);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let restored = back.restore().unwrap();
        let a = model.predict(&mesh, &inputs).unwrap();
        let b = restored.predict(&mesh, &inputs).unwrap();
        assert!(a
            .values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let model = SaliencyModel::new(tiny()).unwrap();
        let bytes = Checkpoint::of(&model, 0).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut other = tiny();
        other.token_dim = 7;
        let mut ck = Checkpoint::of(&model, 0);
        ck.config = other;
        assert!(matches!(ck.restore(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn training_is_deterministic_and_logs() {
        let mesh = primitives::bumpy_sphere(6, 5, 0.1, 2);
        let gt = map((0..mesh.face_count()).map(|f| (f % 7) as f64).collect());
        let run = || {
            let mut model = SaliencyModel::new(tiny()).unwrap();
            let s = Sample::new(&model, "m", mesh.clone(), gt.clone()).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                lr: 1e-2,
                ..Default::default()
            };
            train(&mut model, &[s], &[], &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
        let mut buf = Vec::new();
        write_log_csv(&a.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lr,train_l1,cc,sim,kld,se\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
