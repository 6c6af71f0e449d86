use serde::{Deserialize, Serialize};

use super::wigner::WignerD;
use crate::{Error, Result};

/// Channel multiplicities for degrees 0, 1, 2.
///
/// Features are stored as `[l=0 channels][l=1 channels × 3][l=2 channels × 5]`
/// with components `m = -l..=l` inside each channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IrrepLayout {
    pub mult: [usize; 3],
}

impl IrrepLayout {
    pub const fn new(m0: usize, m1: usize, m2: usize) -> Self {
        IrrepLayout { mult: [m0, m1, m2] }
    }

    pub const fn scalars(n: usize) -> Self {
        IrrepLayout::new(n, 0, 0)
    }

    pub fn dim(&self) -> usize {
        (0..3).map(|l| self.block_dim(l)).sum()
    }

    pub fn block_dim(&self, l: usize) -> usize {
        self.mult[l] * (2 * l + 1)
    }

    pub fn offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.block_dim(k)).sum()
    }

    pub fn channel_offset(&self, l: usize, c: usize) -> usize {
        self.offset(l) + c * (2 * l + 1)
    }

    /// Number of channels with `l > 0`.
    pub fn vector_channels(&self) -> usize {
        self.mult[1] + self.mult[2]
    }

    /// Widths of the l > 0 channels in storage order.
    pub fn vector_channel_widths(&self) -> Vec<usize> {
        std::iter::repeat(3)
            .take(self.mult[1])
            .chain(std::iter::repeat(5).take(self.mult[2]))
            .collect()
    }
}

/// One node's equivariant feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrepFeature {
    pub layout: IrrepLayout,
    pub data: Vec<f64>,
}

impl IrrepFeature {
    pub fn new(layout: IrrepLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::Config(format!(
                "feature length {} does not match layout width {}",
                data.len(),
                layout.dim()
            )));
        }
        Ok(IrrepFeature { layout, data })
    }

    pub fn zeros(layout: IrrepLayout) -> Self {
        IrrepFeature {
            layout,
            data: vec![0.0; layout.dim()],
        }
    }

    pub fn block(&self, l: usize) -> &[f64] {
        let o = self.layout.offset(l);
        &self.data[o..o + self.layout.block_dim(l)]
    }

    pub fn channel(&self, l: usize, c: usize) -> &[f64] {
        let o = self.layout.channel_offset(l, c);
        &self.data[o..o + 2 * l + 1]
    }

    pub fn scalars(&self) -> &[f64] {
        self.block(0)
    }

    /// Apply `D^l` to every degree-l channel.
    pub fn rotated(&self, d: &[WignerD; 3]) -> IrrepFeature {
        rotate_row(&self.layout, &self.data, d)
            .map(|data| IrrepFeature {
                layout: self.layout,
                data,
            })
            .expect("layout-consistent data")
    }

    /// Negate odd-degree blocks (point inversion of true tensors).
    pub fn inverted(&self) -> IrrepFeature {
        let mut out = self.clone();
        let o = self.layout.offset(1);
        for v in &mut out.data[o..o + self.layout.block_dim(1)] {
            *v = -*v;
        }
        out
    }
}

/// Blockwise rotation of a raw feature row.
pub fn rotate_row(layout: &IrrepLayout, row: &[f64], d: &[WignerD; 3]) -> Option<Vec<f64>> {
    if row.len() != layout.dim() {
        return None;
    }
    let mut out = row.to_vec();
    for l in 1..=2 {
        for c in 0..layout.mult[l] {
            let o = layout.channel_offset(l, c);
            let rotated = d[l].apply(&row[o..o + 2 * l + 1]);
            out[o..o + 2 * l + 1].copy_from_slice(&rotated);
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        let l = IrrepLayout::new(32, 8, 4);
        assert_eq!(l.dim(), 32 + 24 + 20);
        assert_eq!(l.offset(1), 32);
        assert_eq!(l.offset(2), 56);
        assert_eq!(l.channel_offset(2, 1), 61);
        assert_eq!(l.vector_channels(), 12);
        assert!(IrrepFeature::new(l, vec![0.0; 3]).is_err());
    }
}
