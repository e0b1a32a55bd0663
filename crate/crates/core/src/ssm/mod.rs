//! Bidirectional selective state-space blocks.
//!
//! A block maps a token sequence `z` (`(L+1) x D`) to
//!
//! ```text
//! u   = f(z) = layernorm(z) + aggregate(diffuse(z)) W_f + b_f
//! out = SSM_fwd(u) + reverse(SSM_bwd(reverse(u))) + u
//! ```
//!
//! where each `SSM` is an input-dependent diagonal scan followed by an output
//! projection. Blocks are stacked sequentially.

pub mod scan;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{NormKind, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{uniform_init, Linear};
use crate::tensor::Mat;

const LAYER_NORM_EPS: f64 = 1e-5;
const DIFFUSE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsmConfig {
    /// Hidden state size per channel.
    pub state_dim: usize,
    /// Number of stacked blocks.
    pub blocks: usize,
    /// Pseudo-neighbour copies per token in diffusion.
    pub pseudo_neighbors: usize,
    /// Standard deviation of Gaussian jitter added to pseudo-neighbour copies (0 = exact copies).
    pub diffusion_jitter: f64,
    pub diffusion: bool,
    pub forward_scan: bool,
    pub backward_scan: bool,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            state_dim: 16,
            blocks: 4,
            pseudo_neighbors: 4,
            diffusion_jitter: 0.0,
            diffusion: true,
            forward_scan: true,
            backward_scan: true,
        }
    }
}

/// Input-dependent diagonal SSM: `delta = softplus(x W_delta + b_delta)`, `B = x W_B`,
/// `C = x W_C`, output `scan(x, delta, A, B, C) W_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmLayer {
    pub delta: Linear,
    pub a_log: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub w_out: ParamId,
}

impl SsmLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, state_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let delta = Linear::new(store, &format!("{name}.delta"), dim, dim, true, rng);
        // Step sizes start log-spaced in [1e-3, 1e-1] through the softplus inverse.
        let bias: Vec<f64> = (0..dim)
            .map(|i| {
                let frac = if dim > 1 { i as f64 / (dim - 1) as f64 } else { 0.5 };
                let dt = (1e-3f64.ln() + frac * (1e-1f64.ln() - 1e-3f64.ln())).exp();
                (dt.exp() - 1.0).ln()
            })
            .collect();
        *store.get_mut(delta.bias.expect("delta has bias")) = Mat::from_vec(1, dim, bias);
        // A = -(n + 1) per state.
        let a_log = store.add(
            format!("{name}.a_log"),
            Mat::from_fn(dim, state_dim, |_, n| ((n + 1) as f64).ln()),
        );
        let w_b = store.add(format!("{name}.w_b"), uniform_init(rng, dim, state_dim, dim));
        let w_c = store.add(format!("{name}.w_c"), uniform_init(rng, dim, state_dim, dim));
        let w_out = store.add(format!("{name}.w_out"), uniform_init(rng, dim, dim, dim));
        SsmLayer {
            delta,
            a_log,
            w_b,
            w_c,
            w_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let pre = self.delta.forward(tape, store, x);
        let delta = tape.softplus(pre);
        let a_log = tape.param(store, self.a_log);
        let wb = tape.param(store, self.w_b);
        let b = tape.matmul(x, wb);
        let wc = tape.param(store, self.w_c);
        let c = tape.matmul(x, wc);
        let y = tape.ssm_scan(x, delta, a_log, b, c)?;
        let wo = tape.param(store, self.w_out);
        Ok(tape.matmul(y, wo))
    }

    /// Plain evaluation on a `T x D` sequence.
    pub fn apply(&self, store: &ParamStore, x: &Mat) -> Result<Mat> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Softmax of each token averaged with the softmax of `l` standardized pseudo-neighbour
/// copies; with no jitter the copies coincide, so they are folded into one weighted term.
pub fn diffuse_aggregate(tape: &mut Tape, z: Var, l: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Var {
    let center = tape.row_softmax(z);
    if l == 0 {
        return center;
    }
    let normalized = tape.standardize(z, NormKind::StdPlusEps, DIFFUSE_EPS);
    let w = 1.0 / (l + 1) as f64;
    let mut acc = tape.scale(center, w);
    if jitter > 0.0 {
        let (rows, cols) = tape.value(z).shape();
        let normal = Normal::new(0.0, jitter).expect("jitter is finite and positive");
        for _ in 0..l {
            let noise = tape.constant(Mat::from_fn(rows, cols, |_, _| normal.sample(rng)));
            let copy = tape.add(normalized, noise);
            let s = tape.row_softmax(copy);
            let s = tape.scale(s, w);
            acc = tape.add(acc, s);
        }
        acc
    } else {
        let s = tape.row_softmax(normalized);
        let s = tape.scale(s, l as f64 * w);
        tape.add(acc, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MambaBlock {
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub reproject: Linear,
    pub forward_ssm: Option<SsmLayer>,
    pub backward_ssm: Option<SsmLayer>,
    pub pseudo_neighbors: usize,
    pub jitter: f64,
    pub diffusion: bool,
}

impl MambaBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &SsmConfig, rng: &mut ChaCha8Rng) -> Self {
        let norm_gain = store.add(format!("{name}.norm.gain"), Mat::filled(1, dim, 1.0));
        let norm_bias = store.add(format!("{name}.norm.bias"), Mat::zeros(1, dim));
        let reproject = Linear::new(store, &format!("{name}.reproject"), dim, dim, true, rng);
        let forward_ssm = cfg
            .forward_scan
            .then(|| SsmLayer::new(store, &format!("{name}.ssm_fwd"), dim, cfg.state_dim, rng));
        let backward_ssm = cfg
            .backward_scan
            .then(|| SsmLayer::new(store, &format!("{name}.ssm_bwd"), dim, cfg.state_dim, rng));
        MambaBlock {
            norm_gain,
            norm_bias,
            reproject,
            forward_ssm,
            backward_ssm,
            pseudo_neighbors: cfg.pseudo_neighbors,
            jitter: cfg.diffusion_jitter,
            diffusion: cfg.diffusion,
        }
    }

    /// `f(z)`: layer norm plus the re-projected diffusion/aggregation term. Without
    /// diffusion the re-projection acts on the normalized tokens directly.
    pub fn pre_transform(&self, tape: &mut Tape, store: &ParamStore, z: Var, rng: &mut ChaCha8Rng) -> Var {
        let n = tape.standardize(z, NormKind::Layer, LAYER_NORM_EPS);
        let g = tape.param(store, self.norm_gain);
        let b = tape.param(store, self.norm_bias);
        let n = tape.mul_row(n, g);
        let n = tape.add_row(n, b);
        let mixed = if self.diffusion {
            diffuse_aggregate(tape, z, self.pseudo_neighbors, self.jitter, rng)
        } else {
            n
        };
        let proj = self.reproject.forward(tape, store, mixed);
        tape.add(n, proj)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        let u = self.pre_transform(tape, store, z, rng);
        let mut out = u;
        if let Some(ssm) = &self.forward_ssm {
            let y = ssm.forward(tape, store, u)?;
            out = tape.add(out, y);
        }
        if let Some(ssm) = &self.backward_ssm {
            let rev = tape.reverse_rows(u);
            let y = ssm.forward(tape, store, rev)?;
            let y = tape.reverse_rows(y);
            out = tape.add(out, y);
        }
        Ok(out)
    }
}

/// `T` blocks applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaStack {
    pub blocks: Vec<MambaBlock>,
}

impl MambaStack {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, cfg: &SsmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        let blocks = (0..cfg.blocks)
            .map(|t| MambaBlock::new(store, &format!("{name}.block{t}"), dim, cfg, rng))
            .collect();
        Ok(MambaStack { blocks })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z0: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut z = z0;
        for (t, block) in self.blocks.iter().enumerate() {
            z = block.forward(tape, store, z, rng)?;
            if !tape.value(z).is_finite() {
                return Err(Error::Numeric(format!("non-finite activations after block {t}")));
            }
        }
        Ok(z)
    }
}

/// Deterministic stream used when no caller RNG is at hand (jitter-free diffusion never draws).
pub fn quiet_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}
