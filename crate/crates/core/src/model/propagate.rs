//! Patch-to-face interpolation and the per-face output head.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::nn::Linear;
use crate::tensor::{Mat, SparseMat};

pub const PROPAGATION_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub neighbors: usize,
    /// Weights are `1 / (d + eps)^power`.
    pub power: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            neighbors: 3,
            power: 1.0,
        }
    }
}

/// `faces x L` interpolation matrix: each row holds the normalized inverse-distance weights
/// of the nearest token centers. A query that coincides with a center takes that token alone.
pub fn propagation_weights(queries: &[Vec3], centers: &[Vec3], cfg: &PropagationConfig) -> Result<SparseMat> {
    let k = cfg.neighbors;
    if k == 0 || centers.len() < k {
        return Err(Error::Config(format!(
            "propagation needs at least {k} token centers, got {}",
            centers.len()
        )));
    }
    let rows: Vec<Vec<(usize, f64)>> = queries
        .par_iter()
        .map(|q| {
            let mut near: Vec<(f64, usize)> = centers.iter().map(|c| c.distance(*q)).zip(0..).collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            if near[0].0 == 0.0 {
                return vec![(near[0].1, 1.0)];
            }
            let w: Vec<f64> = near
                .iter()
                .map(|(d, _)| 1.0 / (d + PROPAGATION_EPSILON).powf(cfg.power))
                .collect();
            let total: f64 = w.iter().sum();
            near.iter().zip(w).map(|((_, i), wi)| (*i, wi / total)).collect()
        })
        .collect();
    Ok(SparseMat::from_rows(centers.len(), &rows))
}

/// `Linear -> SiLU -> Linear -> clamp at 0`, one scalar per face.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictHead {
    pub hidden: Linear,
    pub out: Linear,
}

/// Output bias at initialization, so the clamp starts in its linear region.
pub const HEAD_BIAS_INIT: f64 = 0.5;

impl PredictHead {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden_layer = Linear::new(store, &format!("{name}.hidden"), input, hidden, true, rng);
        let out = Linear::new(store, &format!("{name}.out"), hidden, 1, true, rng);
        *store.get_mut(out.bias.expect("head output has bias")) = Mat::filled(1, 1, HEAD_BIAS_INIT);
        PredictHead {
            hidden: hidden_layer,
            out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.hidden.forward(tape, store, x);
        let h = tape.silu(h);
        let y = self.out.forward(tape, store, h);
        tape.relu(y)
    }
}
