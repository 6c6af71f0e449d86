//! Equivariant batch normalization.
//!
//! Scalar channels get ordinary batch normalization. Each l > 0 channel is
//! divided by the batch RMS of its vector norms and scaled by γ, which
//! commutes with rotations because only norms enter the statistics.

use serde::{Deserialize, Serialize};

use super::irreps::{IrrepFeature, IrrepLayout};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

/// Statistics of one batch, or the running averages used at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    /// Per scalar channel.
    pub mean: Vec<f64>,
    /// Per scalar channel, biased.
    pub var: Vec<f64>,
    /// Mean squared norm per l > 0 channel.
    pub sq: Vec<f64>,
}

impl BnStats {
    pub fn identity(layout: &IrrepLayout) -> Self {
        BnStats {
            mean: vec![0.0; layout.mult[0]],
            var: vec![1.0; layout.mult[0]],
            sq: vec![1.0; layout.vector_channels()],
        }
    }

    /// `running ← (1 - momentum) · running + momentum · batch`
    pub fn update(&mut self, batch: &BnStats, momentum: f64) {
        let mix = |r: &mut Vec<f64>, b: &Vec<f64>| {
            for (r, b) in r.iter_mut().zip(b) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        };
        mix(&mut self.mean, &batch.mean);
        mix(&mut self.var, &batch.var);
        mix(&mut self.sq, &batch.sq);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Affine parameters and running statistics for one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnParams {
    pub layout: IrrepLayout,
    pub gamma0: Vec<f64>,
    pub beta0: Vec<f64>,
    pub gamma_v: Vec<f64>,
    pub running: BnStats,
}

impl BnParams {
    pub fn new(layout: IrrepLayout) -> Self {
        BnParams {
            layout,
            gamma0: vec![1.0; layout.mult[0]],
            beta0: vec![0.0; layout.mult[0]],
            gamma_v: vec![1.0; layout.vector_channels()],
            running: BnStats::identity(&layout),
        }
    }
}

/// Batch statistics of `rows × layout.dim()` data.
pub fn batch_stats(x: &[f64], rows: usize, layout: &IrrepLayout) -> BnStats {
    let dim = layout.dim();
    let m0 = layout.mult[0];
    let n = rows.max(1) as f64;
    let mut mean = vec![0.0; m0];
    let mut var = vec![0.0; m0];
    for t in 0..rows {
        for c in 0..m0 {
            mean[c] += x[t * dim + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for t in 0..rows {
        for c in 0..m0 {
            let d = x[t * dim + c] - mean[c];
            var[c] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let widths = layout.vector_channel_widths();
    let mut sq = vec![0.0; widths.len()];
    for t in 0..rows {
        let mut o = t * dim + m0;
        for (c, &w) in widths.iter().enumerate() {
            sq[c] += x[o..o + w].iter().map(|v| v * v).sum::<f64>();
            o += w;
        }
    }
    sq.iter_mut().for_each(|s| *s /= n);
    BnStats { mean, var, sq }
}

/// Normalize `rows × dim` data with the given statistics.
pub fn bn_forward(
    x: &[f64],
    rows: usize,
    layout: &IrrepLayout,
    gamma0: &[f64],
    beta0: &[f64],
    gamma_v: &[f64],
    stats: &BnStats,
) -> Vec<f64> {
    let dim = layout.dim();
    let m0 = layout.mult[0];
    let widths = layout.vector_channel_widths();
    let inv0: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let invv: Vec<f64> = stats.sq.iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
    let mut y = vec![0.0; rows * dim];
    for t in 0..rows {
        let (xr, yr) = (&x[t * dim..(t + 1) * dim], &mut y[t * dim..(t + 1) * dim]);
        for c in 0..m0 {
            yr[c] = gamma0[c] * (xr[c] - stats.mean[c]) * inv0[c] + beta0[c];
        }
        let mut o = m0;
        for (c, &w) in widths.iter().enumerate() {
            let s = gamma_v[c] * invv[c];
            for k in o..o + w {
                yr[k] = s * xr[k];
            }
            o += w;
        }
    }
    y
}

/// Adjoints of [`bn_forward`]: `(gx, g_gamma0, g_beta0, g_gamma_v)`.
///
/// With `batch = true` the statistics are treated as functions of `x`.
#[allow(clippy::too_many_arguments)]
pub fn bn_backward(
    x: &[f64],
    rows: usize,
    layout: &IrrepLayout,
    gamma0: &[f64],
    gamma_v: &[f64],
    stats: &BnStats,
    batch: bool,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = layout.dim();
    let m0 = layout.mult[0];
    let widths = layout.vector_channel_widths();
    let n = rows as f64;
    let mut gx = vec![0.0; rows * dim];
    let mut gg0 = vec![0.0; m0];
    let mut gb0 = vec![0.0; m0];
    let mut ggv = vec![0.0; widths.len()];

    for c in 0..m0 {
        let inv = 1.0 / (stats.var[c] + BN_EPS).sqrt();
        let (mut sg, mut sgx) = (0.0, 0.0);
        for t in 0..rows {
            let g = gy[t * dim + c];
            let xh = (x[t * dim + c] - stats.mean[c]) * inv;
            sg += g;
            sgx += g * xh;
        }
        gb0[c] = sg;
        gg0[c] = sgx;
        for t in 0..rows {
            let g = gy[t * dim + c];
            gx[t * dim + c] = if batch {
                let xh = (x[t * dim + c] - stats.mean[c]) * inv;
                gamma0[c] * inv * (g - sg / n - xh * sgx / n)
            } else {
                gamma0[c] * inv * g
            };
        }
    }

    let mut o = m0;
    for (c, &w) in widths.iter().enumerate() {
        let inv = 1.0 / (stats.sq[c] + BN_EPS).sqrt();
        let mut a = 0.0;
        for t in 0..rows {
            for k in o..o + w {
                a += gy[t * dim + k] * x[t * dim + k];
            }
        }
        ggv[c] = a * inv;
        let coef = if batch { gamma_v[c] * inv.powi(3) * a / n } else { 0.0 };
        for t in 0..rows {
            for k in o..o + w {
                gx[t * dim + k] = gamma_v[c] * inv * gy[t * dim + k] - coef * x[t * dim + k];
            }
        }
        o += w;
    }
    (gx, gg0, gb0, ggv)
}

/// Normalize a batch of features.
///
/// In [`BnMode::Train`] the batch statistics are used and folded into the
/// running averages with `momentum`; in [`BnMode::Eval`] the running
/// averages are used and left untouched.
pub fn equivariant_batch_norm(
    features: &[IrrepFeature],
    params: &mut BnParams,
    mode: BnMode,
    momentum: f64,
) -> Result<Vec<IrrepFeature>> {
    if features.is_empty() {
        return Err(Error::Argument("batch norm needs at least one feature".into()));
    }
    let layout = params.layout;
    if features.iter().any(|f| f.layout != layout) {
        return Err(Error::Config("feature layout does not match batch-norm parameters".into()));
    }
    let rows = features.len();
    let x: Vec<f64> = features.iter().flat_map(|f| f.data.iter().copied()).collect();
    let stats = match mode {
        BnMode::Train => {
            let s = batch_stats(&x, rows, &layout);
            params.running.update(&s, momentum);
            s
        }
        BnMode::Eval => params.running.clone(),
    };
    let y = bn_forward(&x, rows, &layout, &params.gamma0, &params.beta0, &params.gamma_v, &stats);
    Ok(y.chunks(layout.dim())
        .map(|c| IrrepFeature {
            layout,
            data: c.to_vec(),
        })
        .collect())
}
