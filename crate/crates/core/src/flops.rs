//! Forward-pass FLOP counts over a grid of patch counts and sizes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::model::{ModelConfig, SaliencyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopsRow {
    /// Patch count `L`.
    pub count: usize,
    /// Patch size `M`.
    pub size: usize,
    pub flops: u64,
}

/// One eval forward per `(L, M)` pair, rows ordered by `L` then `M`.
pub fn flops_grid(base: &ModelConfig, mesh: &TriMesh, counts: &[usize], sizes: &[usize]) -> Result<Vec<FlopsRow>> {
    let mut rows = Vec::with_capacity(counts.len() * sizes.len());
    for &count in counts {
        for &size in sizes {
            let mut cfg = base.clone();
            cfg.patches.count = count;
            cfg.patches.size = size;
            let model = SaliencyModel::new(cfg)?;
            let inputs = model.prepare(mesh)?;
            rows.push(FlopsRow {
                count,
                size,
                flops: model.forward_flops(mesh, &inputs)?,
            });
        }
    }
    Ok(rows)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
/// A constant `y` that the line fits exactly scores 1.
pub fn linear_r2(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("linear fit needs at least two distinct x values".into()));
    }
    if syy == 0.0 {
        return Ok(1.0);
    }
    Ok(sxy * sxy / (sxx * syy))
}

/// Worst R² over every row (fixed `L`, varying `M`) and column (fixed `M`, varying `L`) of the grid.
pub fn min_axis_r2(rows: &[FlopsRow]) -> Result<f64> {
    let mut counts: Vec<usize> = rows.iter().map(|r| r.count).collect();
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.size).collect();
    counts.sort_unstable();
    counts.dedup();
    sizes.sort_unstable();
    sizes.dedup();
    let series = |pick: &dyn Fn(&FlopsRow) -> Option<usize>| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| pick(r).map(|x| (x as f64, r.flops as f64)))
            .collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_r2(&x, &y)
    };
    let mut worst = f64::INFINITY;
    for &l in &counts {
        worst = worst.min(series(&|r| (r.count == l).then_some(r.size))?);
    }
    for &m in &sizes {
        worst = worst.min(series(&|r| (r.size == m).then_some(r.count))?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_of_exact_line_and_noise() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((linear_r2(&x, &[3.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        // y = x^2 on 1..4: r = 0.9844..., r^2 = 0.9690...
        let r2 = linear_r2(&x, &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((r2 - 0.96898).abs() < 1e-4, "{r2}");
        assert!(linear_r2(&[1.0], &[1.0]).is_err());
        assert!(linear_r2(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn small_grid_is_linear() {
        let mesh = crate::mesh::primitives::icosphere(1.0, 2);
        let cfg = ModelConfig {
            encoder_width: 8,
            token_dim: 8,
            head_hidden: 8,
            ..Default::default()
        };
        let rows = flops_grid(&cfg, &mesh, &[4, 8, 16], &[4, 8]).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows
            .windows(2)
            .all(|w| w[0].count < w[1].count || w[0].flops < w[1].flops));
        assert!(min_axis_r2(&rows).unwrap() > 0.99);
    }
}
