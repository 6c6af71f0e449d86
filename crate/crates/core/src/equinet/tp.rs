//! Weighted tensor product between node features and edge harmonics.
//!
//! Every allowed path `(l_in ⊗ l_sh) -> l_out` couples each input channel of
//! degree `l_in` with the degree-`l_sh` harmonics through the real
//! Clebsch–Gordan block, scaled by one per-edge weight per (path, channel).
//! Output channels of the same degree from different paths are stacked in
//! path order, so the output layout is determined by the input layout and
//! the path set.

use super::cg::{cg_block, path_allowed, CgBlock};
use super::irreps::{IrrepFeature, IrrepLayout};
use super::sh::{sh_offset, SH_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TpPath {
    pub l_in: usize,
    pub l_sh: usize,
    pub l_out: usize,
    /// Channels coupled along this path (the input multiplicity of `l_in`).
    pub mult: usize,
    pub weight_offset: usize,
    pub in_offset: usize,
    pub out_offset: usize,
    cg: &'static CgBlock,
}

#[derive(Debug, Clone)]
pub struct TpPlan {
    pub in_layout: IrrepLayout,
    pub out_layout: IrrepLayout,
    pub paths: Vec<TpPath>,
    pub n_weights: usize,
}

/// Which coupling paths a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSet {
    /// Only paths with even `l_in + l_sh + l_out`; keeps every feature a
    /// true (non-pseudo) tensor, so outputs are also inversion invariant.
    ParityEven,
    /// Every path allowed by the triangle rule.
    All,
}

impl TpPlan {
    pub fn new(in_layout: IrrepLayout, paths: PathSet) -> TpPlan {
        let mut list = Vec::new();
        for l_out in 0..=2 {
            for l_in in 0..=2 {
                for l_sh in 0..=2 {
                    if !path_allowed(l_in, l_sh, l_out) || in_layout.mult[l_in] == 0 {
                        continue;
                    }
                    if paths == PathSet::ParityEven && (l_in + l_sh + l_out) % 2 == 1 {
                        continue;
                    }
                    list.push((l_in, l_sh, l_out));
                }
            }
        }
        Self::with_paths(in_layout, &list).expect("generated paths are valid")
    }

    /// Plan for an explicit path list; paths are regrouped by output degree.
    pub fn with_paths(in_layout: IrrepLayout, list: &[(usize, usize, usize)]) -> Result<TpPlan> {
        let mut sorted = list.to_vec();
        sorted.sort_by_key(|&(li, ls, lo)| (lo, li, ls));
        sorted.dedup();
        let mut out_mult = [0usize; 3];
        for &(li, ls, lo) in &sorted {
            if !path_allowed(li, ls, lo) {
                return Err(Error::Config(format!("path ({li}, {ls}) -> {lo} is not allowed")));
            }
            out_mult[lo] += in_layout.mult[li];
        }
        let out_layout = IrrepLayout { mult: out_mult };
        let mut paths = Vec::with_capacity(sorted.len());
        let mut filled = [0usize; 3];
        let mut w = 0;
        for &(li, ls, lo) in &sorted {
            let mult = in_layout.mult[li];
            paths.push(TpPath {
                l_in: li,
                l_sh: ls,
                l_out: lo,
                mult,
                weight_offset: w,
                in_offset: in_layout.offset(li),
                out_offset: out_layout.channel_offset(lo, filled[lo]),
                cg: cg_block(li, ls, lo).expect("allowed path"),
            });
            filled[lo] += mult;
            w += mult;
        }
        Ok(TpPlan {
            in_layout,
            out_layout,
            paths,
            n_weights: w,
        })
    }

    /// `out += TP(x, sh; w)` for one edge.
    pub fn forward_row(&self, x: &[f64], sh: &[f64], w: &[f64], out: &mut [f64]) {
        for p in &self.paths {
            let (d1, d3) = (2 * p.l_in + 1, 2 * p.l_out + 1);
            let y = &sh[sh_offset(p.l_sh)..];
            for u in 0..p.mult {
                let wv = w[p.weight_offset + u];
                let xin = &x[p.in_offset + u * d1..p.in_offset + (u + 1) * d1];
                let o = &mut out[p.out_offset + u * d3..p.out_offset + (u + 1) * d3];
                for &(a, b, r, c) in &p.cg.entries {
                    o[r] += wv * c * xin[a] * y[b];
                }
            }
        }
    }

    /// Accumulate input adjoints for one edge given the output adjoint.
    pub fn backward_row(
        &self,
        x: &[f64],
        sh: &[f64],
        w: &[f64],
        gout: &[f64],
        gx: &mut [f64],
        gsh: &mut [f64],
        gw: &mut [f64],
    ) {
        for p in &self.paths {
            let (d1, d3) = (2 * p.l_in + 1, 2 * p.l_out + 1);
            let so = sh_offset(p.l_sh);
            for u in 0..p.mult {
                let wi = p.weight_offset + u;
                let wv = w[wi];
                let xo = p.in_offset + u * d1;
                let go = &gout[p.out_offset + u * d3..p.out_offset + (u + 1) * d3];
                let mut acc_w = 0.0;
                for &(a, b, r, c) in &p.cg.entries {
                    let g = go[r] * c;
                    acc_w += g * x[xo + a] * sh[so + b];
                    gx[xo + a] += g * wv * sh[so + b];
                    gsh[so + b] += g * wv * x[xo + a];
                }
                gw[wi] += acc_w;
            }
        }
    }
}

/// Message `Σ_paths w_path · CG(h_b, Y(r̂_ab))` for a single edge.
pub fn tensor_product_message(
    h_b: &IrrepFeature,
    sh: &[f64],
    weights: &[f64],
    plan: &TpPlan,
) -> Result<IrrepFeature> {
    if h_b.layout != plan.in_layout {
        return Err(Error::Config("input layout does not match the tensor-product plan".into()));
    }
    if sh.len() != SH_DIM {
        return Err(Error::Config(format!("expected {SH_DIM} harmonics, got {}", sh.len())));
    }
    if weights.len() != plan.n_weights {
        return Err(Error::Config(format!(
            "expected {} path weights, got {}",
            plan.n_weights,
            weights.len()
        )));
    }
    let mut out = IrrepFeature::zeros(plan.out_layout);
    plan.forward_row(&h_b.data, sh, weights, &mut out.data);
    Ok(out)
}
