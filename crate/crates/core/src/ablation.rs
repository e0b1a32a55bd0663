//! Component toggles for ablation runs.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::metrics::MetricRow;
use crate::model::{InputMode, ModelConfig, SaliencyModel};
use crate::saliency::SaliencyMap;
use crate::train::{train, Sample, TrainConfig};

/// One component switched off relative to a base config.
pub struct Ablation {
    /// CLI key, as in `ablate --off <key>`.
    pub key: &'static str,
    pub label: &'static str,
    apply: fn(&mut ModelConfig),
}

impl Ablation {
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        (self.apply)(&mut cfg);
        cfg
    }
}

pub const ABLATIONS: [Ablation; 9] = [
    Ablation {
        key: "texture",
        label: "w/o Texture",
        apply: |c| c.input = InputMode::Geometry,
    },
    Ablation {
        key: "spatial",
        label: "w/o Spatial",
        apply: |c| c.features.spatial = false,
    },
    Ablation {
        key: "shape",
        label: "w/o Shape",
        apply: |c| c.features.shape = false,
    },
    Ablation {
        key: "curve",
        label: "w/o Curve",
        apply: |c| c.features.curve = false,
    },
    Ablation {
        key: "graph-conv",
        label: "w/o Graph Conv",
        apply: |c| c.graph_conv = false,
    },
    Ablation {
        key: "subgraph",
        label: "w/o Subgraph",
        apply: |c| c.patches.sampler = "knn".into(),
    },
    Ablation {
        key: "diffusion",
        label: "w/o Feature D&A",
        apply: |c| c.ssm.diffusion = false,
    },
    Ablation {
        key: "ssm-backward",
        label: "w/o SSM-",
        apply: |c| c.ssm.backward_scan = false,
    },
    Ablation {
        key: "ssm-forward",
        label: "w/o SSM+",
        apply: |c| c.ssm.forward_scan = false,
    },
];

pub fn find_ablation(key: &str) -> Result<&'static Ablation> {
    ABLATIONS
        .iter()
        .find(|a| a.key == key)
        .ok_or_else(|| Error::UnknownStrategy {
            family: "ablation",
            name: key.to_string(),
            known: ABLATIONS.iter().map(|a| a.key).collect::<Vec<_>>().join(", "),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub metrics: MetricRow,
}

/// Trains one model per row (the full config first, then each key) and reports its best
/// evaluation metrics. Evaluation uses `val`, or the training meshes when `val` is empty.
pub fn run_ablations(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_meshes: &[(TriMesh, SaliencyMap)],
    val: &[(TriMesh, SaliencyMap)],
    keys: &[&str],
) -> Result<Vec<AblationRow>> {
    let mut configs = vec![("Full".to_string(), base.clone())];
    for key in keys {
        let a = find_ablation(key)?;
        configs.push((a.label.to_string(), a.apply(base)));
    }
    configs
        .into_iter()
        .map(|(label, cfg)| {
            let mut model = SaliencyModel::new(cfg)?;
            let samples = |set: &[(TriMesh, SaliencyMap)]| {
                set.iter()
                    .enumerate()
                    .map(|(i, (m, g))| Sample::new(&model, format!("mesh{i}"), m.clone(), g.clone()))
                    .collect::<Result<Vec<_>>>()
            };
            let (tr, va) = (samples(train_meshes)?, samples(val)?);
            let out = train(&mut model, &tr, &va, train_cfg)?;
            log::info!("{label}: {}", out.best_metrics);
            Ok(AblationRow {
                label,
                metrics: out.best_metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_unique_and_each_changes_the_config() {
        let base = ModelConfig {
            input: InputMode::Texture,
            ..Default::default()
        };
        for (i, a) in ABLATIONS.iter().enumerate() {
            assert_ne!(a.apply(&base), base, "{}", a.key);
            assert!(ABLATIONS[i + 1..].iter().all(|b| b.key != a.key));
        }
        assert_eq!(find_ablation("ssm-backward").unwrap().label, "w/o SSM-");
        assert!(matches!(find_ablation("ssm"), Err(Error::UnknownStrategy { .. })));
    }
}
