//! Saliency comparison metrics.
//!
//! KLD treats the ground truth as `p` and the prediction as `q`, in nats.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::SaliencyMap;

pub const KLD_EPSILON: f64 = 1e-12;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        })
    }
}

/// Pearson correlation.
pub fn cc(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::ConstantMap);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

fn as_distribution(x: &[f64], which: &str) -> Vec<f64> {
    let total: f64 = x.iter().sum();
    if (total - 1.0).abs() > 1e-9 && total > 0.0 {
        warn!("{which} sums to {total}; normalizing");
        x.iter().map(|v| v / total).collect()
    } else {
        x.to_vec()
    }
}

/// Histogram intersection of two distributions.
pub fn sim(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let (p, q) = (as_distribution(p, "sim p"), as_distribution(q, "sim q"));
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum())
}

/// `sum p ln(p / (q + eps))`, with `0 ln 0 = 0`.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let (p, q) = (as_distribution(p, "kld p"), as_distribution(q, "kld q"));
    Ok(p.iter()
        .zip(&q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / (b + KLD_EPSILON)).ln())
        .sum())
}

/// Mean squared error.
pub fn se(pred: &[f64], gt: &[f64]) -> Result<f64> {
    same_len(pred, gt)?;
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub cc: f64,
    pub sim: f64,
    pub kld: f64,
    pub se: f64,
}

impl fmt::Display for MetricRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // values that round to zero print without a sign
        let r = |v: f64| if v.abs() < 5e-5 { 0.0 } else { v };
        write!(
            f,
            "CC={:.4} SIM={:.4} KLD={:.4} SE={:.4}",
            r(self.cc),
            r(self.sim),
            r(self.kld),
            r(self.se)
        )
    }
}

/// All four metrics: CC on the values as given, SIM and KLD on distribution views,
/// SE on max-normalized views.
pub fn evaluate(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<MetricRow> {
    same_len(pred.values(), gt.values())?;
    let (pd, gd) = (pred.distribution(), gt.distribution());
    Ok(MetricRow {
        cc: cc(pred.values(), gt.values())?,
        sim: sim(&gd, &pd)?,
        kld: kld(&gd, &pd)?,
        se: se(&pred.max_normalized(), &gt.max_normalized())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        let x = [0.1, 0.5, 0.2, 0.9];
        assert!((cc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| 3.0 - v).collect();
        assert!((cc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        assert!((sim(&p, &q).unwrap() - 0.75).abs() < 1e-12);
        assert!(sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        assert!(kld(&p, &p).unwrap().abs() < 1e-9);
        assert_eq!(se(&x, &x).unwrap(), 0.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((se(&shifted, &x).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn constant_map_has_no_correlation() {
        assert!(matches!(cc(&[1.0, 1.0], &[0.0, 1.0]), Err(Error::ConstantMap)));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(se(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn row_format() {
        let r = MetricRow {
            cc: 1.0,
            sim: 1.0,
            kld: 0.0,
            se: 0.0,
        };
        assert_eq!(r.to_string(), "CC=1.0000 SIM=1.0000 KLD=0.0000 SE=0.0000");
        let tiny = MetricRow { kld: -1e-13, ..r };
        assert_eq!(tiny.to_string(), r.to_string());
    }
}
