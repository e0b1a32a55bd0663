//! Diagonal selective scan.
//!
//! For every channel `d` and state `n`:
//!
//! ```text
//! A[d,n]       = -exp(a_log[d,n])
//! abar[t,d,n]  = exp(delta[t,d] * A[d,n])
//! h[t,d,n]     = abar[t,d,n] * h[t-1,d,n] + delta[t,d] * B[t,n] * u[t,d]
//! y[t,d]       = sum_n C[t,n] * h[t,d,n]
//! ```
//!
//! with `h[-1] = 0` (zero-order hold for the state transition, `delta * B` for the input).
//! The forward pass runs in fixed-size chunks: each chunk is scanned from a zero state
//! together with its running transition product, then chunk carries are chained and
//! folded back in. Channels are processed in parallel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const CHUNK: usize = 16;

/// `u`, `delta`: `T x D`; `a_log`: `D x N`; `b`, `c`: `T x N`.
pub struct ScanInputs<'a> {
    pub u: &'a Mat,
    pub delta: &'a Mat,
    pub a_log: &'a Mat,
    pub b: &'a Mat,
    pub c: &'a Mat,
}

pub struct ScanGrads {
    pub u: Mat,
    pub delta: Mat,
    pub a_log: Mat,
    pub b: Mat,
    pub c: Mat,
}

impl ScanInputs<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.u.rows, self.u.cols, self.a_log.cols)
    }

    fn check(&self) -> Result<()> {
        let (t, d, n) = self.dims();
        let ok = self.delta.shape() == (t, d)
            && self.a_log.rows == d
            && self.b.shape() == (t, n)
            && self.c.shape() == (t, n);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "scan shapes: u {:?} delta {:?} a_log {:?} b {:?} c {:?}",
                self.u.shape(),
                self.delta.shape(),
                self.a_log.shape(),
                self.b.shape(),
                self.c.shape()
            )))
        }
    }

    fn a(&self, d: usize, n: usize) -> f64 {
        -self.a_log.get(d, n).exp()
    }
}

/// Returns `y` (`T x D`) and all hidden states laid out as `[t][d][n]`.
pub fn scan_forward(inp: &ScanInputs) -> Result<(Mat, Vec<f64>)> {
    inp.check()?;
    let (t_len, d_len, n_len) = inp.dims();
    let per_channel: Vec<Vec<f64>> = (0..d_len).into_par_iter().map(|d| channel_states(inp, d)).collect();

    let mut states = vec![0.0; t_len * d_len * n_len];
    let mut y = Mat::zeros(t_len, d_len);
    for (d, hs) in per_channel.iter().enumerate() {
        for t in 0..t_len {
            let h = &hs[t * n_len..(t + 1) * n_len];
            states[(t * d_len + d) * n_len..(t * d_len + d + 1) * n_len].copy_from_slice(h);
            let c = inp.c.row(t);
            y.set(t, d, h.iter().zip(c).map(|(hv, cv)| hv * cv).sum());
        }
    }
    if let Some(t) = (0..t_len).find(|&t| y.row(t).iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("non-finite scan output at step {t}")));
    }
    Ok((y, states))
}

/// Chunked scan of one channel; returns states as `[t][n]`.
fn channel_states(inp: &ScanInputs, d: usize) -> Vec<f64> {
    let (t_len, _, n_len) = inp.dims();
    let a: Vec<f64> = (0..n_len).map(|n| inp.a(d, n)).collect();
    let mut local = vec![0.0; t_len * n_len];
    let mut prod = vec![0.0; t_len * n_len];

    // Phase 1: every chunk from a zero state, with the running product of transitions.
    for start in (0..t_len).step_by(CHUNK) {
        let end = (start + CHUNK).min(t_len);
        for n in 0..n_len {
            let mut h = 0.0;
            let mut p = 1.0;
            for t in start..end {
                let dt = inp.delta.get(t, d);
                let abar = (dt * a[n]).exp();
                h = abar * h + dt * inp.b.get(t, n) * inp.u.get(t, d);
                p *= abar;
                local[t * n_len + n] = h;
                prod[t * n_len + n] = p;
            }
        }
    }

    // Phase 2: chain carries across chunk boundaries and fold them in.
    let mut carry = vec![0.0; n_len];
    for start in (0..t_len).step_by(CHUNK) {
        let end = (start + CHUNK).min(t_len);
        for t in start..end {
            for n in 0..n_len {
                local[t * n_len + n] += prod[t * n_len + n] * carry[n];
            }
        }
        carry.copy_from_slice(&local[(end - 1) * n_len..end * n_len]);
    }
    local
}

/// Vector-Jacobian product of [`scan_forward`] for upstream gradient `gy`.
pub fn scan_backward(inp: &ScanInputs, states: &[f64], gy: &Mat) -> ScanGrads {
    let (t_len, d_len, n_len) = inp.dims();

    struct Channel {
        gu: Vec<f64>,
        gdelta: Vec<f64>,
        ga_log: Vec<f64>,
        gb: Vec<f64>,
        gc: Vec<f64>,
    }

    let channels: Vec<Channel> = (0..d_len)
        .into_par_iter()
        .map(|d| {
            let a: Vec<f64> = (0..n_len).map(|n| inp.a(d, n)).collect();
            let h = |t: usize, n: usize| states[(t * d_len + d) * n_len + n];
            let mut ch = Channel {
                gu: vec![0.0; t_len],
                gdelta: vec![0.0; t_len],
                ga_log: vec![0.0; n_len],
                gb: vec![0.0; t_len * n_len],
                gc: vec![0.0; t_len * n_len],
            };
            let mut ga = vec![0.0; n_len];
            let mut carry = vec![0.0; n_len];
            for t in (0..t_len).rev() {
                let g = gy.get(t, d);
                let dt = inp.delta.get(t, d);
                let ut = inp.u.get(t, d);
                for n in 0..n_len {
                    let abar = (dt * a[n]).exp();
                    let bt = inp.b.get(t, n);
                    let gh = g * inp.c.get(t, n) + carry[n];
                    ch.gc[t * n_len + n] = g * h(t, n);
                    let h_prev = if t > 0 { h(t - 1, n) } else { 0.0 };
                    let g_abar = gh * h_prev;
                    ch.gdelta[t] += g_abar * abar * a[n] + gh * bt * ut;
                    ga[n] += g_abar * abar * dt;
                    ch.gb[t * n_len + n] = gh * dt * ut;
                    ch.gu[t] += gh * dt * bt;
                    carry[n] = gh * abar;
                }
            }
            for n in 0..n_len {
                ch.ga_log[n] = ga[n] * a[n];
            }
            ch
        })
        .collect();

    let mut out = ScanGrads {
        u: Mat::zeros(t_len, d_len),
        delta: Mat::zeros(t_len, d_len),
        a_log: Mat::zeros(d_len, n_len),
        b: Mat::zeros(t_len, n_len),
        c: Mat::zeros(t_len, n_len),
    };
    // Fixed channel order keeps the reduction deterministic.
    for (d, ch) in channels.iter().enumerate() {
        for t in 0..t_len {
            out.u.set(t, d, ch.gu[t]);
            out.delta.set(t, d, ch.gdelta[t]);
        }
        out.a_log.row_mut(d).copy_from_slice(&ch.ga_log);
        for (o, v) in out.b.data.iter_mut().zip(&ch.gb) {
            *o += v;
        }
        for (o, v) in out.c.data.iter_mut().zip(&ch.gc) {
            *o += v;
        }
    }
    out
}
