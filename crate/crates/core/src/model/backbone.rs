//! Sequence backbones over the patch tokens.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{NormKind, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::Linear;
use crate::registry::Registry;
use crate::ssm::{MambaStack, SsmConfig};
use crate::tensor::Mat;

pub trait Backbone: Send + Sync {
    fn name(&self) -> &'static str;

    /// Maps `(L+1) x D` tokens to `(L+1) x D` tokens.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, rng: &mut ChaCha8Rng) -> Result<Var>;
}

/// Everything a backbone factory needs to allocate its parameters.
pub struct BackboneContext<'a> {
    pub prefix: &'a str,
    pub dim: usize,
    pub ssm: &'a SsmConfig,
    pub store: RefCell<&'a mut ParamStore>,
    pub rng: RefCell<&'a mut ChaCha8Rng>,
}

pub struct MambaBackbone {
    stack: MambaStack,
}

impl Backbone for MambaBackbone {
    fn name(&self) -> &'static str {
        "mamba"
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        self.stack.forward(tape, store, z, rng)
    }
}

struct AttentionBlock {
    norm1: (ParamId, ParamId),
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm2: (ParamId, ParamId),
    up: Linear,
    down: Linear,
}

/// Pre-norm single-head self-attention blocks with a SiLU MLP, `T` deep.
pub struct TransformerBackbone {
    blocks: Vec<AttentionBlock>,
    dim: usize,
}

fn layer_norm(tape: &mut Tape, store: &ParamStore, x: Var, (g, b): (ParamId, ParamId)) -> Var {
    let n = tape.standardize(x, NormKind::Layer, 1e-5);
    let g = tape.param(store, g);
    let b = tape.param(store, b);
    let n = tape.mul_row(n, g);
    tape.add_row(n, b)
}

impl TransformerBackbone {
    fn new(cx: &BackboneContext) -> Self {
        let mut store = cx.store.borrow_mut();
        let mut rng = cx.rng.borrow_mut();
        let d = cx.dim;
        let blocks = (0..cx.ssm.blocks.max(1))
            .map(|t| {
                let p = format!("{}.block{t}", cx.prefix);
                let norm = |s: &mut ParamStore, n: &str| {
                    (
                        s.add(format!("{p}.{n}.gain"), Mat::filled(1, d, 1.0)),
                        s.add(format!("{p}.{n}.bias"), Mat::zeros(1, d)),
                    )
                };
                let norm1 = norm(&mut store, "norm1");
                let norm2 = norm(&mut store, "norm2");
                AttentionBlock {
                    norm1,
                    q: Linear::new(&mut store, &format!("{p}.q"), d, d, false, &mut rng),
                    k: Linear::new(&mut store, &format!("{p}.k"), d, d, false, &mut rng),
                    v: Linear::new(&mut store, &format!("{p}.v"), d, d, false, &mut rng),
                    o: Linear::new(&mut store, &format!("{p}.o"), d, d, true, &mut rng),
                    norm2,
                    up: Linear::new(&mut store, &format!("{p}.up"), d, 2 * d, true, &mut rng),
                    down: Linear::new(&mut store, &format!("{p}.down"), 2 * d, d, true, &mut rng),
                }
            })
            .collect();
        TransformerBackbone { blocks, dim: d }
    }
}

impl Backbone for TransformerBackbone {
    fn name(&self) -> &'static str {
        "transformer"
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, _rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut z = z;
        for b in &self.blocks {
            let n = layer_norm(tape, store, z, b.norm1);
            let q = b.q.forward(tape, store, n);
            let k = b.k.forward(tape, store, n);
            let v = b.v.forward(tape, store, n);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scores = tape.scale(scores, 1.0 / (self.dim as f64).sqrt());
            let attn = tape.row_softmax(scores);
            let mixed = tape.matmul(attn, v);
            let out = b.o.forward(tape, store, mixed);
            z = tape.add(z, out);
            let n = layer_norm(tape, store, z, b.norm2);
            let h = b.up.forward(tape, store, n);
            let h = tape.silu(h);
            let h = b.down.forward(tape, store, h);
            z = tape.add(z, h);
        }
        Ok(z)
    }
}

pub fn backbone_registry<'a>() -> Registry<BackboneContext<'a>, dyn Backbone> {
    let mut r: Registry<BackboneContext<'a>, dyn Backbone> = Registry::new("backbone");
    r.register("mamba", |cx| {
        let stack = MambaStack::new(
            &mut cx.store.borrow_mut(),
            cx.prefix,
            cx.dim,
            cx.ssm,
            &mut cx.rng.borrow_mut(),
        )?;
        Ok(Box::new(MambaBackbone { stack }))
    });
    r.register("transformer", |cx| Ok(Box::new(TransformerBackbone::new(cx))));
    r
}
