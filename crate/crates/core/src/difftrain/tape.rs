//! Tensor-level reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its value and enough inputs to
//! replay the adjoint. [`Tape::backward`] walks nodes in exact reverse
//! recording order. Row-parallel kernels write disjoint rows, and every
//! cross-row reduction runs in ascending row order on one thread, so values
//! and gradients are bitwise independent of the thread count.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::equinet::batchnorm::{batch_stats, bn_backward, bn_forward, BnStats};
use crate::equinet::irreps::IrrepLayout;
use crate::equinet::sh::{sh_of_vector, SH_DIM};
use crate::equinet::tp::TpPlan;
use crate::par::{self, Exec};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Square(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentMean {
        x: Var,
        seg: Arc<Vec<usize>>,
        counts: Vec<f64>,
    },
    ScatterRows(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    TensorProduct {
        x: Var,
        sh: Var,
        w: Var,
        plan: Arc<TpPlan>,
    },
    BatchNorm {
        x: Var,
        gamma0: Var,
        beta0: Var,
        gamma_v: Var,
        layout: IrrepLayout,
        stats: BnStats,
        batch: bool,
    },
    IrrepLinear {
        x: Var,
        w: [Option<Var>; 3],
        input: IrrepLayout,
        output: IrrepLayout,
    },
    ScaleChannels {
        x: Var,
        s: Var,
        layout: IrrepLayout,
    },
    RowNorm(Var),
    Rbf {
        d: Var,
        centers: Arc<Vec<f64>>,
        gamma: f64,
    },
    SphericalHarmonics(Var),
    SumAll(Var),
    MeanAll(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

/// Adjoints from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads {
    g: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros shaped like `like` when `v` did not reach
    /// the loss.
    pub fn or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows, like.cols))
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_with(self.exec, self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `x + b` with `b` a single row broadcast over the rows of `x`. A bias
    /// narrower than `x` is added to the leading columns only.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert!(bv.rows == 1 && bv.cols <= xv.cols, "add_row: bias must be 1 × ≤{}", xv.cols);
        let mut out = xv.clone();
        for row in out.data.chunks_mut(xv.cols.max(1)) {
            for (o, b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for (o, b) in out.data.iter_mut().zip(&bv.data) {
            *o -= b;
        }
        self.push(out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for (o, b) in out.data.iter_mut().zip(&bv.data) {
            *o *= b;
        }
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// `out[i] = x[idx[i]]`
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let xv = self.value(x);
        let c = xv.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::from_vec(idx.len(), c, data);
        self.push(out, Op::GatherRows(x, idx))
    }

    /// Mean of the rows of `x` sharing a segment id; empty segments are zero.
    /// Rows are summed in ascending index order.
    pub fn segment_mean(&mut self, x: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(seg.len(), xv.rows, "segment_mean: one id per row");
        let c = xv.cols;
        let mut out = Tensor::zeros(n_seg, c);
        let mut counts = vec![0.0; n_seg];
        for (i, &s) in seg.iter().enumerate() {
            counts[s] += 1.0;
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for (s, &n) in counts.iter().enumerate() {
            if n > 0.0 {
                out.row_mut(s).iter_mut().for_each(|v| *v /= n);
            }
        }
        self.push(out, Op::SegmentMean { x, seg, counts })
    }

    /// `out[idx[i]] = x[i]` into `n_rows` zero rows; `idx` must be distinct.
    pub fn scatter_rows(&mut self, x: Var, idx: Arc<Vec<usize>>, n_rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(idx.len(), xv.rows, "scatter_rows: one target per row");
        let mut out = Tensor::zeros(n_rows, xv.cols);
        for (i, &t) in idx.iter().enumerate() {
            out.row_mut(t).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::ScatterRows(x, idx))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut o = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols: row mismatch");
                out.data[r * cols + o..r * cols + o + pv.cols].copy_from_slice(pv.row(r));
                o += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start <= end && end <= xv.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(xv.rows * (end - start));
        for r in 0..xv.rows {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::from_vec(xv.rows, end - start, data);
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "reshape: size mismatch");
        let out = Tensor::from_vec(rows, cols, xv.data.clone());
        self.push(out, Op::Reshape(x))
    }

    /// Row-wise weighted tensor product: `out[e] = TP(x[e], sh[e]; w[e])`.
    pub fn tensor_product(&mut self, x: Var, sh: Var, w: Var, plan: Arc<TpPlan>) -> Var {
        let (xv, sv, wv) = (self.value(x), self.value(sh), self.value(w));
        let rows = xv.rows;
        assert_eq!(xv.cols, plan.in_layout.dim(), "tensor_product: input width");
        assert_eq!(sv.shape(), (rows, SH_DIM), "tensor_product: harmonics shape");
        assert_eq!(wv.shape(), (rows, plan.n_weights), "tensor_product: weight shape");
        let width = plan.out_layout.dim();
        let mut out = Tensor::zeros(rows, width);
        par::for_each_row(self.exec, &mut out.data, width, |e, row| {
            plan.forward_row(xv.row(e), sv.row(e), wv.row(e), row);
        });
        self.push(out, Op::TensorProduct { x, sh, w, plan })
    }

    /// Equivariant batch norm over all rows of `x`.
    ///
    /// With `running = None` batch statistics are used (and returned so the
    /// caller can update its running averages); otherwise the given running
    /// statistics are treated as constants.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma0: Var,
        beta0: Var,
        gamma_v: Var,
        layout: IrrepLayout,
        running: Option<&BnStats>,
    ) -> (Var, BnStats) {
        let xv = self.value(x);
        assert_eq!(xv.cols, layout.dim(), "batch_norm: width");
        let batch = running.is_none();
        let stats = match running {
            Some(s) => s.clone(),
            None => batch_stats(&xv.data, xv.rows, &layout),
        };
        let y = bn_forward(
            &xv.data,
            xv.rows,
            &layout,
            &self.value(gamma0).data,
            &self.value(beta0).data,
            &self.value(gamma_v).data,
            &stats,
        );
        let out = Tensor::from_vec(xv.rows, xv.cols, y);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma0,
                beta0,
                gamma_v,
                layout,
                stats: stats.clone(),
                batch,
            },
        );
        (v, stats)
    }

    /// Channel mixing within each degree: `y_l[:, j] = Σ_i W_l[i, j] x_l[:, i]`
    /// applied to every `m` component. `w[l]` is `mult_in(l) × mult_out(l)`;
    /// a missing matrix leaves that output block zero.
    pub fn irrep_linear(
        &mut self,
        x: Var,
        w: [Option<Var>; 3],
        input: IrrepLayout,
        output: IrrepLayout,
    ) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols, input.dim(), "irrep_linear: input width");
        let rows = xv.rows;
        let mut out = Tensor::zeros(rows, output.dim());
        for l in 0..3 {
            let Some(wl) = w[l] else { continue };
            let wv = self.value(wl);
            assert_eq!(wv.shape(), (input.mult[l], output.mult[l]), "irrep_linear: weight {l}");
            let xl = unpack_block(xv, &input, l);
            let yl = xl.matmul_with(self.exec, wv);
            pack_block(&yl, &mut out, &output, l);
        }
        self.push(out, Op::IrrepLinear { x, w, input, output })
    }

    /// Multiply every l > 0 channel `c` of row `t` by `s[t, c]`; scalars pass.
    pub fn scale_channels(&mut self, x: Var, s: Var, layout: IrrepLayout) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(xv.cols, layout.dim(), "scale_channels: width");
        assert_eq!(sv.shape(), (xv.rows, layout.vector_channels()), "scale_channels: gates");
        let widths = layout.vector_channel_widths();
        let mut out = xv.clone();
        for t in 0..xv.rows {
            let row = out.row_mut(t);
            let mut o = layout.mult[0];
            for (c, &wd) in widths.iter().enumerate() {
                let g = sv.data[t * widths.len() + c];
                row[o..o + wd].iter_mut().for_each(|v| *v *= g);
                o += wd;
            }
        }
        self.push(out, Op::ScaleChannels { x, s, layout })
    }

    /// Euclidean norm of each row, as a column.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows)
            .map(|r| xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_vec(xv.rows, 1, data);
        self.push(out, Op::RowNorm(x))
    }

    /// Gaussian radial basis of a distance column.
    pub fn rbf(&mut self, d: Var, centers: Arc<Vec<f64>>, gamma: f64) -> Var {
        let dv = self.value(d);
        assert_eq!(dv.cols, 1, "rbf: expects a column");
        let k = centers.len();
        let mut out = Tensor::zeros(dv.rows, k);
        for r in 0..dv.rows {
            let x = dv.data[r];
            for (o, nu) in out.row_mut(r).iter_mut().zip(centers.iter()) {
                *o = (-gamma * (x - nu) * (x - nu)).exp();
            }
        }
        self.push(out, Op::Rbf { d, centers, gamma })
    }

    /// Real spherical harmonics (l ≤ 2) of the direction of each row.
    pub fn spherical_harmonics(&mut self, r: Var) -> Var {
        let rv = self.value(r);
        assert_eq!(rv.cols, 3, "spherical_harmonics: expects 3 columns");
        let mut out = Tensor::zeros(rv.rows, SH_DIM);
        par::for_each_row(self.exec, &mut out.data, SH_DIM, |i, row| {
            let v = rv.row(i);
            row.copy_from_slice(&sh_of_vector([v[0], v[1], v[2]]).0);
        });
        self.push(out, Op::SphericalHarmonics(r))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len().max(1) as f64;
        let out = Tensor::scalar(xv.sum() / n);
        self.push(out, Op::MeanAll(x))
    }

    /// Adjoints of a scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut g: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = g[i].take() else { continue };
            self.backprop(i, &gy, &mut g);
            g[i] = Some(gy);
        }
        Ok(Grads { g })
    }

    fn backprop(&self, i: usize, gy: &Tensor, g: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let exec = self.exec;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(g, *a, gy.matmul_with(exec, &bv.transpose()));
                accumulate(g, *b, av.transpose().matmul_with(exec, gy));
            }
            Op::AddRow(x, b) => {
                accumulate(g, *x, gy.clone());
                let mut gb = Tensor::zeros(1, self.value(*b).cols);
                for r in 0..gy.rows {
                    for (o, v) in gb.data.iter_mut().zip(gy.row(r)) {
                        *o += v;
                    }
                }
                accumulate(g, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(g, *a, gy.clone());
                accumulate(g, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                accumulate(g, *a, gy.clone());
                accumulate(g, *b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(g, *a, zip_map(gy, bv, |g, b| g * b));
                accumulate(g, *b, zip_map(gy, av, |g, a| g * a));
            }
            Op::Scale(x, s) => accumulate(g, *x, gy.map(|v| v * s)),
            Op::Silu(x) => {
                let xv = self.value(*x);
                accumulate(
                    g,
                    *x,
                    zip_map(gy, xv, |g, x| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    }),
                );
            }
            Op::Sigmoid(x) => accumulate(g, *x, zip_map(gy, y, |g, y| g * y * (1.0 - y))),
            Op::Square(x) => accumulate(g, *x, zip_map(gy, self.value(*x), |g, x| 2.0 * g * x)),
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(src).iter_mut().zip(gy.row(r)) {
                        *o += v;
                    }
                }
                accumulate(g, *x, gx);
            }
            Op::SegmentMean { x, seg, counts } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for (r, &s) in seg.iter().enumerate() {
                    let n = counts[s];
                    for (o, v) in gx.row_mut(r).iter_mut().zip(gy.row(s)) {
                        *o = v / n;
                    }
                }
                accumulate(g, *x, gx);
            }
            Op::ScatterRows(x, idx) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for (r, &t) in idx.iter().enumerate() {
                    gx.row_mut(r).copy_from_slice(gy.row(t));
                }
                accumulate(g, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut o = 0;
                for &p in parts {
                    let c = self.value(p).cols;
                    accumulate(g, p, cols_of(gy, o, o + c));
                    o += c;
                }
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    gx.row_mut(r)[*start..*start + gy.cols].copy_from_slice(gy.row(r));
                }
                accumulate(g, *x, gx);
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                accumulate(g, *x, Tensor::from_vec(xv.rows, xv.cols, gy.data.clone()));
            }
            Op::TensorProduct { x, sh, w, plan } => {
                let (xv, sv, wv) = (self.value(*x), self.value(*sh), self.value(*w));
                let (dx, dw) = (xv.cols, wv.cols);
                let width = dx + SH_DIM + dw;
                let mut packed = vec![0.0; xv.rows * width];
                par::for_each_row(exec, &mut packed, width, |e, row| {
                    let (gx, rest) = row.split_at_mut(dx);
                    let (gs, gw) = rest.split_at_mut(SH_DIM);
                    plan.backward_row(xv.row(e), sv.row(e), wv.row(e), gy.row(e), gx, gs, gw);
                });
                let split = |lo: usize, hi: usize| {
                    let mut t = Tensor::zeros(xv.rows, hi - lo);
                    for (r, chunk) in packed.chunks(width).enumerate() {
                        t.row_mut(r).copy_from_slice(&chunk[lo..hi]);
                    }
                    t
                };
                accumulate(g, *x, split(0, dx));
                accumulate(g, *sh, split(dx, dx + SH_DIM));
                accumulate(g, *w, split(dx + SH_DIM, width));
            }
            Op::BatchNorm {
                x,
                gamma0,
                beta0,
                gamma_v,
                layout,
                stats,
                batch,
            } => {
                let xv = self.value(*x);
                let (gx, gg0, gb0, ggv) = bn_backward(
                    &xv.data,
                    xv.rows,
                    layout,
                    &self.value(*gamma0).data,
                    &self.value(*gamma_v).data,
                    stats,
                    *batch,
                    &gy.data,
                );
                accumulate(g, *x, Tensor::from_vec(xv.rows, xv.cols, gx));
                accumulate(g, *gamma0, Tensor::from_vec(1, gg0.len(), gg0));
                accumulate(g, *beta0, Tensor::from_vec(1, gb0.len(), gb0));
                accumulate(g, *gamma_v, Tensor::from_vec(1, ggv.len(), ggv));
            }
            Op::IrrepLinear { x, w, input, output } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for l in 0..3 {
                    let Some(wl) = w[l] else { continue };
                    let wv = self.value(wl);
                    let xl = unpack_block(xv, input, l);
                    let gl = unpack_block(gy, output, l);
                    accumulate(g, wl, xl.transpose().matmul_with(exec, &gl));
                    let gxl = gl.matmul_with(exec, &wv.transpose());
                    pack_block(&gxl, &mut gx, input, l);
                }
                accumulate(g, *x, gx);
            }
            Op::ScaleChannels { x, s, layout } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let widths = layout.vector_channel_widths();
                let mut gx = gy.clone();
                let mut gs = Tensor::zeros(sv.rows, sv.cols);
                for t in 0..xv.rows {
                    let mut o = layout.mult[0];
                    for (c, &wd) in widths.iter().enumerate() {
                        let gate = sv.data[t * widths.len() + c];
                        let mut acc = 0.0;
                        for k in o..o + wd {
                            acc += gy.at(t, k) * xv.at(t, k);
                            gx.data[t * xv.cols + k] *= gate;
                        }
                        gs.data[t * widths.len() + c] = acc;
                        o += wd;
                    }
                }
                accumulate(g, *x, gx);
                accumulate(g, *s, gs);
            }
            Op::RowNorm(x) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows, xv.cols);
                for r in 0..xv.rows {
                    let n = y.data[r];
                    if n > 0.0 {
                        let s = gy.data[r] / n;
                        for (o, v) in gx.row_mut(r).iter_mut().zip(xv.row(r)) {
                            *o = s * v;
                        }
                    }
                }
                accumulate(g, *x, gx);
            }
            Op::Rbf { d, centers, gamma } => {
                let dv = self.value(*d);
                let mut gd = Tensor::zeros(dv.rows, 1);
                for r in 0..dv.rows {
                    let x = dv.data[r];
                    gd.data[r] = centers
                        .iter()
                        .zip(y.row(r))
                        .zip(gy.row(r))
                        .map(|((nu, mu), g)| g * -2.0 * gamma * (x - nu) * mu)
                        .sum();
                }
                accumulate(g, *d, gd);
            }
            Op::SphericalHarmonics(r) => {
                let rv = self.value(*r);
                let mut gr = Tensor::zeros(rv.rows, 3);
                par::for_each_row(exec, &mut gr.data, 3, |i, out| {
                    let v = rv.row(i);
                    let (_, jac) = sh_of_vector([v[0], v[1], v[2]]);
                    for (j, row) in jac.iter().enumerate() {
                        let gj = gy.data[i * SH_DIM + j];
                        for k in 0..3 {
                            out[k] += gj * row[k];
                        }
                    }
                });
                accumulate(g, *r, gr);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                accumulate(g, *x, Tensor::filled(xv.rows, xv.cols, gy.item()));
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let n = xv.len().max(1) as f64;
                accumulate(g, *x, Tensor::filled(xv.rows, xv.cols, gy.item() / n));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(g: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut g[v.0] {
        Some(t) => t.add_assign(&delta),
        slot => *slot = Some(delta),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn cols_of(t: &Tensor, lo: usize, hi: usize) -> Tensor {
    let mut out = Tensor::zeros(t.rows, hi - lo);
    for r in 0..t.rows {
        out.row_mut(r).copy_from_slice(&t.row(r)[lo..hi]);
    }
    out
}

/// Degree-l block as a `(rows · (2l+1)) × mult(l)` matrix with rows `(t, m)`.
fn unpack_block(x: &Tensor, layout: &IrrepLayout, l: usize) -> Tensor {
    let (mult, d) = (layout.mult[l], 2 * l + 1);
    let off = layout.offset(l);
    let mut out = Tensor::zeros(x.rows * d, mult);
    for t in 0..x.rows {
        let row = x.row(t);
        for c in 0..mult {
            for m in 0..d {
                out.data[(t * d + m) * mult + c] = row[off + c * d + m];
            }
        }
    }
    out
}

/// Inverse of [`unpack_block`], adding into `out`.
fn pack_block(block: &Tensor, out: &mut Tensor, layout: &IrrepLayout, l: usize) {
    let (mult, d) = (layout.mult[l], 2 * l + 1);
    let off = layout.offset(l);
    let cols = out.cols;
    for t in 0..out.rows {
        for c in 0..mult {
            for m in 0..d {
                out.data[t * cols + off + c * d + m] += block.data[(t * d + m) * mult + c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equinet::tp::PathSet;
    use crate::equinet::wigner::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| standard_normal(rng)).collect())
    }

    /// Check every leaf gradient of `build` against central differences.
    fn gradcheck(leaves: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |vals: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let out = build(&mut t, &vs);
            t.value(out).item()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let an = grads.or_zeros(vars[li], leaf);
            for k in 0..leaf.len() {
                let mut up = leaves.clone();
                up[li].data[k] += h;
                let mut dn = leaves.clone();
                dn[li].data[k] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let a = an.data[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-5 || (a - fd).abs() < 1e-8, "leaf {li}[{k}]: {a} vs {fd}");
            }
        }
    }

    /// Contract an output with fixed random weights to get a scalar.
    fn probe(t: &mut Tape, x: Var, seed: u64) -> Var {
        let (r, c) = t.value(x).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.leaf(randn(&mut rng, r, c));
        let p = t.mul(x, w);
        t.sum_all(p)
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_params() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]));
        let sq = t.square(p);
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data, vec![2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::zeros(2, 1));
        assert!(matches!(t.backward(p), Err(Error::Argument(_))));
    }

    #[test]
    fn dense_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaves = vec![randn(&mut rng, 4, 3), randn(&mut rng, 3, 5), randn(&mut rng, 1, 5)];
        gradcheck(leaves, |t, v| {
            let m = t.matmul(v[0], v[1]);
            let a = t.add_row(m, v[2]);
            let s = t.silu(a);
            let g = t.sigmoid(a);
            let p = t.mul(s, g);
            let q = t.sub(p, a);
            let r = t.scale(q, 0.3);
            let c = t.concat_cols(&[r, s]);
            let sl = t.slice_cols(c, 2, 8);
            let rs = t.reshape(sl, 8, 3);
            let sq = t.square(rs);
            let x = t.add(rs, sq);
            let m = t.mean_all(x);
            let pr = probe(t, rs, 7);
            t.add(m, pr)
        });
    }

    #[test]
    fn row_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let leaves = vec![randn(&mut rng, 5, 3)];
        let idx = Arc::new(vec![4, 0, 0, 2, 3, 1]);
        let seg = Arc::new(vec![1, 0, 1, 1, 3, 0]);
        let tgt = Arc::new(vec![2, 0, 3, 5]);
        gradcheck(leaves, move |t, v| {
            let gth = t.gather_rows(v[0], idx.clone());
            let sm = t.segment_mean(gth, seg.clone(), 4);
            let sc = t.scatter_rows(sm, tgt.clone(), 6);
            let n = t.row_norm(v[0]);
            let rb = t.rbf(n, Arc::new(vec![0.0, 0.5, 1.0, 1.5]), 1.3);
            let sh = t.spherical_harmonics(v[0]);
            let a = probe(t, sc, 1);
            let b = probe(t, rb, 2);
            let c = probe(t, sh, 3);
            let ab = t.add(a, b);
            t.add(ab, c)
        });
    }

    #[test]
    fn equivariant_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = IrrepLayout::new(2, 2, 1);
        let plan = Arc::new(TpPlan::new(input, PathSet::ParityEven));
        let mid = plan.out_layout;
        let out = IrrepLayout::new(3, 2, 2);
        let e = 4;
        let leaves = vec![
            randn(&mut rng, e, input.dim()),
            randn(&mut rng, e, 3),
            randn(&mut rng, e, plan.n_weights),
            randn(&mut rng, 1, mid.mult[0]),
            randn(&mut rng, 1, mid.mult[0]),
            randn(&mut rng, 1, mid.vector_channels()),
            randn(&mut rng, mid.mult[0], out.mult[0]),
            randn(&mut rng, mid.mult[1], out.mult[1]),
            randn(&mut rng, mid.mult[2], out.mult[2]),
            randn(&mut rng, e, out.vector_channels()),
        ];
        for batch in [true, false] {
            let plan = plan.clone();
            gradcheck(leaves.clone(), move |t, v| {
                let sh = t.spherical_harmonics(v[1]);
                let m = t.tensor_product(v[0], sh, v[2], plan.clone());
                let running = BnStats { mean: vec![0.1; mid.mult[0]], var: vec![0.8; mid.mult[0]], sq: vec![1.7; mid.vector_channels()] };
                let (bn, _) = t.batch_norm(m, v[3], v[4], v[5], mid, if batch { None } else { Some(&running) });
                let lin = t.irrep_linear(bn, [Some(v[6]), Some(v[7]), Some(v[8])], mid, out);
                let sc = t.scale_channels(lin, v[9], out);
                probe(t, sc, 9)
            });
        }
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randn(&mut rng, 300, 40);
        let b = randn(&mut rng, 40, 30);
        let run = |exec| {
            let mut t = Tape::with_exec(exec);
            let (x, y) = (t.leaf(a.clone()), t.leaf(b.clone()));
            let m = t.matmul(x, y);
            let s = t.silu(m);
            let l = t.mean_all(s);
            let g = t.backward(l).unwrap();
            (t.value(l).item(), g.get(x).unwrap().clone())
        };
        let (l1, g1) = run(Exec::Sequential);
        let (l2, g2) = run(Exec::Parallel);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
