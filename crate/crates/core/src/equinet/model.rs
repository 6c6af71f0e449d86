//! Network definition: embedding, message-passing layers, pooling, readout.
//!
//! One layer processes the edge kinds in [`EdgeKind::ORDER`]. For each kind
//! `z` the per-edge messages are averaged onto their receivers, normalized
//! over the receivers of that kind, and merged into every node by a
//! within-degree linear projection of `[h, m]`. After the three kinds a gated
//! nonlinearity is applied: SiLU on scalars, and each l > 0 channel scaled by
//! a sigmoid gate computed from the scalars.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{BnMode, BnStats};
use super::irreps::{IrrepFeature, IrrepLayout};
use super::params::{Bound, Init, ParamSpec, ParameterStore};
use super::tp::{PathSet, TpPlan};
use crate::difftrain::tape::{Tape, Var};
use crate::difftrain::tensor::Tensor;
use crate::fingerprint::{Fingerprint, DEFAULT_NBITS};
use crate::geograph::{CutoffConfig, EdgeKind, HeteroGraph, NodeKind, NODE_FEATURES};
use crate::par::{self, Exec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    /// Output layout of each layer.
    pub layouts: Vec<IrrepLayout>,
    pub lmax: usize,
    pub edge_mlp_hidden: usize,
    pub readout_hidden: usize,
    pub fingerprint_width: usize,
    /// Width of the dense fingerprint projection.
    pub fingerprint_embed: usize,
    pub node_features: usize,
    pub paths: PathSet,
    pub bn_momentum: f64,
    pub cutoffs: CutoffConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 3,
            layouts: vec![IrrepLayout::new(32, 8, 4); 3],
            lmax: 2,
            edge_mlp_hidden: 32,
            readout_hidden: 32,
            fingerprint_width: DEFAULT_NBITS,
            fingerprint_embed: 32,
            node_features: NODE_FEATURES,
            paths: PathSet::ParityEven,
            bn_momentum: 0.1,
            cutoffs: CutoffConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A small network for quick experiments and tests.
    pub fn tiny() -> Self {
        ModelConfig {
            layers: 2,
            layouts: vec![IrrepLayout::new(6, 2, 1); 2],
            edge_mlp_hidden: 8,
            readout_hidden: 8,
            fingerprint_width: 64,
            fingerprint_embed: 4,
            cutoffs: CutoffConfig {
                rbf_k: 8,
                ..CutoffConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lmax != 2 {
            return Err(Error::Config(format!("lmax must be 2, got {}", self.lmax)));
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one layer".into()));
        }
        if self.layouts.len() != self.layers {
            return Err(Error::Config(format!(
                "{} layouts given for {} layers",
                self.layouts.len(),
                self.layers
            )));
        }
        if self.layouts.iter().any(|l| l.mult[0] == 0) {
            return Err(Error::Config("every layer needs at least one l=0 channel".into()));
        }
        if self.edge_mlp_hidden == 0 || self.readout_hidden == 0 || self.fingerprint_embed == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.fingerprint_width == 0 || self.node_features == 0 {
            return Err(Error::Config("input widths must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("bn_momentum must be in (0, 1]".into()));
        }
        self.cutoffs.validate()
    }

    /// Layout entering layer `i`.
    pub fn layer_input(&self, i: usize) -> IrrepLayout {
        if i == 0 {
            IrrepLayout::scalars(self.layouts[0].mult[0])
        } else {
            self.layouts[i - 1]
        }
    }

    /// Layout of `h` before edge kind `k` of layer `i`.
    fn kind_input(&self, i: usize, k: usize) -> IrrepLayout {
        if k == 0 {
            self.layer_input(i)
        } else {
            self.layouts[i]
        }
    }
}

fn prefix(i: usize, kind: EdgeKind) -> String {
    format!("layer{i}.{}.", kind.name())
}

/// Validated configuration with prebuilt tensor-product plans.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    plans: Vec<[Arc<TpPlan>; 3]>,
    centers: Arc<Vec<f64>>,
}

/// Tape handles produced by [`Model::forward_tape`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `n_graphs × 1`
    pub predictions: Var,
    /// Node features after each layer, `n_nodes × layout.dim()`.
    pub layers: Vec<Var>,
    /// Batch statistics per normalization prefix (training mode only).
    pub bn_stats: Vec<(String, BnStats)>,
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let plans = (0..cfg.layers)
            .map(|i| {
                [0, 1, 2].map(|k| Arc::new(TpPlan::new(cfg.kind_input(i, k), cfg.paths)))
            })
            .collect();
        Ok(Model {
            cfg: cfg.clone(),
            plans,
            centers: Arc::new(cfg.cutoffs.centers()),
        })
    }

    pub fn plan(&self, layer: usize, kind: EdgeKind) -> &TpPlan {
        &self.plans[layer][kind_index(kind)]
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.cfg;
        let mut s = Vec::new();
        let m0 = c.layouts[0].mult[0];
        s.push(ParamSpec::new("embed.w", (c.node_features, m0), Init::FanIn(c.node_features)));
        s.push(ParamSpec::new("embed.b", (1, m0), Init::Zeros));
        let k = c.cutoffs.rbf_k;
        let hd = c.edge_mlp_hidden;
        for i in 0..c.layers {
            let out = c.layouts[i];
            for (ki, kind) in EdgeKind::ORDER.into_iter().enumerate() {
                let p = prefix(i, kind);
                let plan = &self.plans[i][ki];
                let (input, mid) = (plan.in_layout, plan.out_layout);
                let e_in = k + 2 * input.mult[0];
                s.push(ParamSpec::new(format!("{p}psi.w1"), (e_in, hd), Init::FanIn(e_in)));
                s.push(ParamSpec::new(format!("{p}psi.b1"), (1, hd), Init::Zeros));
                s.push(ParamSpec::new(format!("{p}psi.w2"), (hd, hd), Init::FanIn(hd)));
                s.push(ParamSpec::new(format!("{p}psi.b2"), (1, hd), Init::Zeros));
                s.push(ParamSpec::new(format!("{p}psi.w3"), (hd, plan.n_weights), Init::FanIn(hd)));
                s.push(ParamSpec::new(format!("{p}psi.b3"), (1, plan.n_weights), Init::Zeros));
                s.push(ParamSpec::new(format!("{p}bn.gamma0"), (1, mid.mult[0]), Init::Ones));
                s.push(ParamSpec::new(format!("{p}bn.beta0"), (1, mid.mult[0]), Init::Zeros));
                s.push(ParamSpec::new(format!("{p}bn.gamma_v"), (1, mid.vector_channels()), Init::Ones));
                for l in 0..3 {
                    let fan = input.mult[l] + mid.mult[l];
                    if input.mult[l] > 0 && out.mult[l] > 0 {
                        s.push(ParamSpec::new(format!("{p}proj.h{l}"), (input.mult[l], out.mult[l]), Init::FanIn(fan)));
                    }
                    if mid.mult[l] > 0 && out.mult[l] > 0 {
                        s.push(ParamSpec::new(format!("{p}proj.m{l}"), (mid.mult[l], out.mult[l]), Init::FanIn(fan)));
                    }
                }
                s.push(ParamSpec::new(format!("{p}proj.b"), (1, out.mult[0]), Init::Zeros));
            }
            if out.vector_channels() > 0 {
                s.push(ParamSpec::new(format!("layer{i}.gate.w"), (out.mult[0], out.vector_channels()), Init::FanIn(out.mult[0])));
                s.push(ParamSpec::new(format!("layer{i}.gate.b"), (1, out.vector_channels()), Init::Zeros));
            }
        }
        let (w, e, r) = (c.fingerprint_width, c.fingerprint_embed, c.readout_hidden);
        let last0 = c.layouts[c.layers - 1].mult[0];
        s.push(ParamSpec::new("readout.fp.w", (w, e), Init::FanIn(w)));
        s.push(ParamSpec::new("readout.fp.b", (1, e), Init::Zeros));
        let r_in = 2 * last0 + e;
        s.push(ParamSpec::new("readout.w1", (r_in, r), Init::FanIn(r_in)));
        s.push(ParamSpec::new("readout.b1", (1, r), Init::Zeros));
        s.push(ParamSpec::new("readout.w2", (r, 1), Init::FanIn(r)));
        s.push(ParamSpec::new("readout.b2", (1, 1), Init::Zeros));
        s
    }

    /// Running batch-norm statistics, stored alongside the parameters.
    pub fn buffer_specs(&self) -> Vec<ParamSpec> {
        let mut s = Vec::new();
        for i in 0..self.cfg.layers {
            for (ki, kind) in EdgeKind::ORDER.into_iter().enumerate() {
                let p = prefix(i, kind);
                let mid = self.plans[i][ki].out_layout;
                s.push(ParamSpec::new(format!("{p}bn.running_mean"), (1, mid.mult[0]), Init::Zeros));
                s.push(ParamSpec::new(format!("{p}bn.running_var"), (1, mid.mult[0]), Init::Ones));
                s.push(ParamSpec::new(format!("{p}bn.running_sq"), (1, mid.vector_channels()), Init::Ones));
            }
        }
        s
    }

    /// Seeded initialization: weights `U(±1/√fan_in)`, biases zero,
    /// normalization scales one.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParameterStore::initialize(&self.param_specs(), &self.buffer_specs(), &mut rng)
    }

    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        params.check(&self.param_specs(), &self.buffer_specs())
    }

    fn running_stats(&self, params: &ParameterStore, p: &str) -> Result<BnStats> {
        Ok(BnStats {
            mean: params.buffer(&format!("{p}bn.running_mean"))?.data.clone(),
            var: params.buffer(&format!("{p}bn.running_var"))?.data.clone(),
            sq: params.buffer(&format!("{p}bn.running_sq"))?.data.clone(),
        })
    }

    /// Fold batch statistics into the running buffers.
    pub fn update_running(&self, params: &mut ParameterStore, stats: &[(String, BnStats)]) -> Result<()> {
        for (p, batch) in stats {
            let mut running = self.running_stats(params, p)?;
            running.update(batch, self.cfg.bn_momentum);
            for (suffix, v) in [("running_mean", running.mean), ("running_var", running.var), ("running_sq", running.sq)] {
                let t = params
                    .buffers
                    .get_mut(&format!("{p}bn.{suffix}"))
                    .ok_or_else(|| Error::Config(format!("missing buffer {p}bn.{suffix}")))?;
                t.data = v;
            }
        }
        Ok(())
    }

    /// Record the forward pass for a batch. `pos` must hold the batch's node
    /// positions (`n_nodes × 3`); edge geometry is derived from it on the
    /// tape so position gradients are available.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        params: &ParameterStore,
        batch: &GraphBatch,
        pos: Var,
        mode: BnMode,
    ) -> Result<ForwardOutput> {
        let c = &self.cfg;
        if batch.features.cols != c.node_features {
            return Err(Error::Config(format!(
                "node features have width {}, model expects {}",
                batch.features.cols, c.node_features
            )));
        }
        if batch.fingerprints.cols != c.fingerprint_width {
            return Err(Error::Config(format!(
                "fingerprint width {} does not match model width {}",
                batch.fingerprints.cols, c.fingerprint_width
            )));
        }
        let n = batch.n_nodes;
        let x = tape.leaf(batch.features.clone());
        let emb = tape.matmul(x, bound.var("embed.w"));
        let mut h = tape.add_row(emb, bound.var("embed.b"));
        let mut layers = Vec::with_capacity(c.layers);
        let mut bn_stats = Vec::new();

        for i in 0..c.layers {
            let out = c.layouts[i];
            for (ki, kind) in EdgeKind::ORDER.into_iter().enumerate() {
                let p = prefix(i, kind);
                let plan = &self.plans[i][ki];
                let (input, mid) = (plan.in_layout, plan.out_layout);
                let wh = proj_weights(bound, &p, "h");
                let mut next = tape.irrep_linear(h, wh, input, out);
                next = tape.add_row(next, bound.var(&format!("{p}proj.b")));

                let ke = &batch.edges[ki];
                if !ke.a.is_empty() {
                    let pa = tape.gather_rows(pos, ke.a.clone());
                    let pb = tape.gather_rows(pos, ke.b.clone());
                    let r = tape.sub(pb, pa);
                    let d = tape.row_norm(r);
                    let rbf = tape.rbf(d, self.centers.clone(), c.cutoffs.rbf_gamma);
                    let sh = tape.spherical_harmonics(r);
                    let h0 = tape.slice_cols(h, 0, input.mult[0]);
                    let ha0 = tape.gather_rows(h0, ke.a.clone());
                    let hb0 = tape.gather_rows(h0, ke.b.clone());
                    let e_in = tape.concat_cols(&[rbf, ha0, hb0]);
                    let w = edge_weight_net_tape(tape, &edge_vars(bound, &p), e_in);
                    let hb = tape.gather_rows(h, ke.b.clone());
                    let msg = tape.tensor_product(hb, sh, w, plan.clone());
                    let agg = tape.segment_mean(msg, ke.seg.clone(), ke.targets.len());
                    let running = match mode {
                        BnMode::Train => None,
                        BnMode::Eval => Some(self.running_stats(params, &p)?),
                    };
                    let (bn, stats) = tape.batch_norm(
                        agg,
                        bound.var(&format!("{p}bn.gamma0")),
                        bound.var(&format!("{p}bn.beta0")),
                        bound.var(&format!("{p}bn.gamma_v")),
                        mid,
                        running.as_ref(),
                    );
                    if mode == BnMode::Train {
                        bn_stats.push((p.clone(), stats));
                    }
                    let full = tape.scatter_rows(bn, ke.targets.clone(), n);
                    let wm = proj_weights(bound, &p, "m");
                    let from_msg = tape.irrep_linear(full, wm, mid, out);
                    next = tape.add(next, from_msg);
                }
                h = next;
            }
            h = gate(tape, bound, i, h, out);
            if !tape.value(h).is_finite() {
                return Err(Error::Numerical {
                    layer: i,
                    msg: "non-finite node features".into(),
                });
            }
            layers.push(h);
        }

        let last0 = c.layouts[c.layers - 1].mult[0];
        let s = tape.slice_cols(h, 0, last0);
        let pooled = tape.segment_mean(s, batch.pool_segment.clone(), 2 * batch.n_graphs);
        let pooled = tape.reshape(pooled, batch.n_graphs, 2 * last0);
        let fp = tape.leaf(batch.fingerprints.clone());
        let predictions = readout_tape(tape, bound, pooled, fp);
        if !tape.value(predictions).is_finite() {
            return Err(Error::Numerical {
                layer: c.layers,
                msg: "non-finite prediction".into(),
            });
        }
        Ok(ForwardOutput {
            predictions,
            layers,
            bn_stats,
        })
    }

    /// Inference on one graph with running batch-norm statistics.
    pub fn forward_graph(
        &self,
        graph: &HeteroGraph,
        fp: &Fingerprint,
        params: &ParameterStore,
        exec: Exec,
    ) -> Result<(f64, Vec<Vec<IrrepFeature>>)> {
        let batch = GraphBatch::new(&[(graph, fp)])?;
        let mut tape = Tape::with_exec(exec);
        let bound = params.bind(&mut tape);
        let pos = tape.leaf(batch.positions.clone());
        let out = self.forward_tape(&mut tape, &bound, params, &batch, pos, BnMode::Eval)?;
        let feats = out
            .layers
            .iter()
            .zip(&self.cfg.layouts)
            .map(|(&v, &layout)| rows_to_features(tape.value(v), layout))
            .collect();
        Ok((tape.value(out.predictions).item(), feats))
    }
}

fn kind_index(kind: EdgeKind) -> usize {
    EdgeKind::ORDER.iter().position(|&k| k == kind).expect("known kind")
}

fn proj_weights(bound: &Bound, p: &str, src: &str) -> [Option<Var>; 3] {
    [0, 1, 2].map(|l| bound.try_var(&format!("{p}proj.{src}{l}")))
}

fn edge_vars(bound: &Bound, p: &str) -> [Var; 6] {
    ["w1", "b1", "w2", "b2", "w3", "b3"].map(|n| bound.var(&format!("{p}psi.{n}")))
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let m = tape.matmul(x, w);
    tape.add_row(m, b)
}

/// Two SiLU hidden layers, linear output; `w = [w1, b1, w2, b2, w3, b3]`.
pub fn edge_weight_net_tape(tape: &mut Tape, w: &[Var; 6], input: Var) -> Var {
    let a = dense(tape, input, w[0], w[1]);
    let a = tape.silu(a);
    let b = dense(tape, a, w[2], w[3]);
    let b = tape.silu(b);
    dense(tape, b, w[4], w[5])
}

fn gate(tape: &mut Tape, bound: &Bound, i: usize, h: Var, layout: IrrepLayout) -> Var {
    let m0 = layout.mult[0];
    let s = tape.slice_cols(h, 0, m0);
    let act = tape.silu(s);
    if layout.vector_channels() == 0 {
        return act;
    }
    let g = dense(tape, s, bound.var(&format!("layer{i}.gate.w")), bound.var(&format!("layer{i}.gate.b")));
    let g = tape.sigmoid(g);
    let scaled = tape.scale_channels(h, g, layout);
    let vec = tape.slice_cols(scaled, m0, layout.dim());
    tape.concat_cols(&[act, vec])
}

fn readout_tape(tape: &mut Tape, bound: &Bound, pooled: Var, fp: Var) -> Var {
    let f = dense(tape, fp, bound.var("readout.fp.w"), bound.var("readout.fp.b"));
    let z = tape.concat_cols(&[pooled, f]);
    let hid = dense(tape, z, bound.var("readout.w1"), bound.var("readout.b1"));
    let hid = tape.silu(hid);
    dense(tape, hid, bound.var("readout.w2"), bound.var("readout.b2"))
}

fn rows_to_features(t: &Tensor, layout: IrrepLayout) -> Vec<IrrepFeature> {
    (0..t.rows)
        .map(|r| IrrepFeature {
            layout,
            data: t.row(r).to_vec(),
        })
        .collect()
}

/// Edges of one kind in a batch.
#[derive(Debug, Clone, Default)]
pub struct KindEdges {
    /// Receivers (global node index).
    pub a: Arc<Vec<usize>>,
    /// Senders.
    pub b: Arc<Vec<usize>>,
    /// Distinct receivers in ascending order.
    pub targets: Arc<Vec<usize>>,
    /// Position of each edge's receiver in `targets`.
    pub seg: Arc<Vec<usize>>,
}

/// Several graphs flattened into one node/edge list.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub positions: Tensor,
    pub features: Tensor,
    /// `2·graph + is_residue` for every node.
    pub pool_segment: Arc<Vec<usize>>,
    /// Indexed like [`EdgeKind::ORDER`].
    pub edges: [KindEdges; 3],
    pub fingerprints: Tensor,
}

impl GraphBatch {
    pub fn new(items: &[(&HeteroGraph, &Fingerprint)]) -> Result<GraphBatch> {
        if items.is_empty() {
            return Err(Error::Argument("empty graph batch".into()));
        }
        let width = items[0].1.nbits();
        let n_feat = items[0]
            .0
            .nodes
            .first()
            .map_or(0, |n| n.scalar_features.len());
        let mut positions = Vec::new();
        let mut features = Vec::new();
        let mut pool = Vec::new();
        let mut fps = Vec::new();
        let mut ends: [(Vec<usize>, Vec<usize>); 3] = Default::default();
        let mut offset = 0;
        for (g, (graph, fp)) in items.iter().enumerate() {
            if graph.n_ligand == 0 || graph.n_residues() == 0 {
                return Err(Error::Argument("graph needs ligand atoms and residues".into()));
            }
            if fp.nbits() != width {
                return Err(Error::Argument("fingerprints in a batch must share a width".into()));
            }
            for node in &graph.nodes {
                if node.scalar_features.len() != n_feat {
                    return Err(Error::Argument("inconsistent node feature widths".into()));
                }
                positions.extend_from_slice(&node.position);
                features.extend_from_slice(&node.scalar_features);
                pool.push(2 * g + usize::from(node.kind == NodeKind::Residue));
            }
            for e in &graph.edges {
                let k = kind_index(e.kind);
                ends[k].0.push(offset + e.a);
                ends[k].1.push(offset + e.b);
            }
            fps.extend(fp.to_dense());
            offset += graph.nodes.len();
        }
        let edges = ends.map(|(a, b)| {
            let mut targets = a.clone();
            targets.dedup();
            let seg = a
                .iter()
                .map(|x| targets.binary_search(x).expect("receiver present"))
                .collect();
            KindEdges {
                a: Arc::new(a),
                b: Arc::new(b),
                targets: Arc::new(targets),
                seg: Arc::new(seg),
            }
        });
        Ok(GraphBatch {
            n_graphs: items.len(),
            n_nodes: offset,
            positions: Tensor::from_vec(offset, 3, positions),
            features: Tensor::from_vec(offset, n_feat, features),
            pool_segment: Arc::new(pool),
            edges,
            fingerprints: Tensor::from_vec(items.len(), width, fps),
        })
    }
}

/// Predicted value for one graph (inference mode).
pub fn forward(graph: &HeteroGraph, fp: &Fingerprint, params: &ParameterStore, cfg: &ModelConfig) -> Result<f64> {
    let model = Model::new(cfg)?;
    model.check_params(params)?;
    Ok(model.forward_graph(graph, fp, params, Exec::default())?.0)
}

/// Prediction together with every layer's node features.
pub fn forward_features(
    graph: &HeteroGraph,
    fp: &Fingerprint,
    params: &ParameterStore,
    cfg: &ModelConfig,
) -> Result<(f64, Vec<Vec<IrrepFeature>>)> {
    let model = Model::new(cfg)?;
    model.check_params(params)?;
    model.forward_graph(graph, fp, params, Exec::default())
}

/// Inference over many graphs; graphs are spread across threads.
pub fn predict(
    items: &[(HeteroGraph, Fingerprint)],
    params: &ParameterStore,
    cfg: &ModelConfig,
    exec: Exec,
) -> Result<Vec<f64>> {
    let model = Model::new(cfg)?;
    model.check_params(params)?;
    let inner = if exec.is_parallel() && items.len() > 1 { Exec::Sequential } else { exec };
    par::map_slice(exec, items, |(g, fp)| model.forward_graph(g, fp, params, inner).map(|r| r.0))
        .into_iter()
        .collect()
}

/// Parameters of one edge-conditioning network.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNet {
    /// `[w1, b1, w2, b2, w3, b3]`
    pub tensors: [Tensor; 6],
}

impl EdgeNet {
    pub fn from_store(params: &ParameterStore, layer: usize, kind: EdgeKind) -> Result<EdgeNet> {
        let p = prefix(layer, kind);
        let get = |n: &str| params.get(&format!("{p}psi.{n}")).cloned();
        Ok(EdgeNet {
            tensors: [get("w1")?, get("b1")?, get("w2")?, get("b2")?, get("w3")?, get("b3")?],
        })
    }
}

/// Path weights for one edge from its radial basis and endpoint scalars.
pub fn edge_weight_net(rbf: &[f64], h_a0: &[f64], h_b0: &[f64], net: &EdgeNet) -> Result<Vec<f64>> {
    let input: Vec<f64> = rbf.iter().chain(h_a0).chain(h_b0).copied().collect();
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite edge-network input".into()));
    }
    if input.len() != net.tensors[0].rows {
        return Err(Error::Config(format!(
            "edge-network input width {} does not match weights ({})",
            input.len(),
            net.tensors[0].rows
        )));
    }
    let mut tape = Tape::with_exec(Exec::Sequential);
    let vars = net.tensors.clone().map(|t| tape.leaf(t));
    let x = tape.leaf(Tensor::from_vec(1, input.len(), input));
    let out = edge_weight_net_tape(&mut tape, &vars, x);
    Ok(tape.value(out).data.clone())
}

/// Componentwise mean of messages, summed in the given order; zero if empty.
pub fn aggregate_messages(messages: &[IrrepFeature], layout: IrrepLayout) -> Result<IrrepFeature> {
    let mut out = IrrepFeature::zeros(layout);
    for m in messages {
        if m.layout != layout {
            return Err(Error::Config("message layout mismatch".into()));
        }
        for (o, v) in out.data.iter_mut().zip(&m.data) {
            *o += v;
        }
    }
    if !messages.is_empty() {
        let n = messages.len() as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Within-degree projection of `[h, m]` back to the layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProjection {
    pub input: IrrepLayout,
    pub message: IrrepLayout,
    pub output: IrrepLayout,
    /// `mult_in(l) × mult_out(l)` per degree.
    pub w_h: [Option<Tensor>; 3],
    /// `mult_msg(l) × mult_out(l)` per degree.
    pub w_m: [Option<Tensor>; 3],
    /// Added to the scalar block.
    pub bias: Vec<f64>,
}

impl NodeProjection {
    /// Copies `h` through and ignores the message.
    pub fn pass_through(layout: IrrepLayout, message: IrrepLayout) -> Self {
        let eye = |n: usize| {
            let mut t = Tensor::zeros(n, n);
            (0..n).for_each(|i| t.data[i * n + i] = 1.0);
            t
        };
        NodeProjection {
            input: layout,
            message,
            output: layout,
            w_h: [0, 1, 2].map(|l| (layout.mult[l] > 0).then(|| eye(layout.mult[l]))),
            w_m: [0, 1, 2].map(|l| {
                (message.mult[l] > 0 && layout.mult[l] > 0).then(|| Tensor::zeros(message.mult[l], layout.mult[l]))
            }),
            bias: vec![0.0; layout.mult[0]],
        }
    }

    pub fn from_store(model: &Model, params: &ParameterStore, layer: usize, kind: EdgeKind) -> Result<Self> {
        let p = prefix(layer, kind);
        let plan = model.plan(layer, kind);
        let opt = |n: String| params.params.get(&n).cloned();
        Ok(NodeProjection {
            input: plan.in_layout,
            message: plan.out_layout,
            output: model.cfg.layouts[layer],
            w_h: [0, 1, 2].map(|l| opt(format!("{p}proj.h{l}"))),
            w_m: [0, 1, 2].map(|l| opt(format!("{p}proj.m{l}"))),
            bias: params.get(&format!("{p}proj.b"))?.data.clone(),
        })
    }
}

/// `h ← P_h h + P_m m + b`, mixing channels only within each degree.
/// `message` is the normalized aggregated message.
pub fn node_update(h: &IrrepFeature, message: &IrrepFeature, proj: &NodeProjection) -> Result<IrrepFeature> {
    if h.layout != proj.input || message.layout != proj.message {
        return Err(Error::Config("node update layout mismatch".into()));
    }
    let mut tape = Tape::with_exec(Exec::Sequential);
    let hv = tape.leaf(Tensor::from_vec(1, h.data.len(), h.data.clone()));
    let mv = tape.leaf(Tensor::from_vec(1, message.data.len(), message.data.clone()));
    let wh = proj.w_h.clone().map(|w| w.map(|t| tape.leaf(t)));
    let wm = proj.w_m.clone().map(|w| w.map(|t| tape.leaf(t)));
    let b = tape.leaf(Tensor::from_vec(1, proj.bias.len(), proj.bias.clone()));
    let a = tape.irrep_linear(hv, wh, proj.input, proj.output);
    let c = tape.irrep_linear(mv, wm, proj.message, proj.output);
    let s = tape.add(a, c);
    let out = tape.add_row(s, b);
    IrrepFeature::new(proj.output, tape.value(out).data.clone())
}

/// Mean scalar channels of ligand nodes followed by those of residue nodes.
pub fn invariant_pool(features: &[IrrepFeature], kinds: &[NodeKind]) -> Result<Vec<f64>> {
    if features.len() != kinds.len() || features.is_empty() {
        return Err(Error::Argument("need one kind per node and at least one node".into()));
    }
    let m0 = features[0].layout.mult[0];
    let mut out = vec![0.0; 2 * m0];
    let mut counts = [0usize; 2];
    for (f, k) in features.iter().zip(kinds) {
        let side = usize::from(*k == NodeKind::Residue);
        counts[side] += 1;
        for (o, v) in out[side * m0..(side + 1) * m0].iter_mut().zip(f.scalars()) {
            *o += v;
        }
    }
    if counts.contains(&0) {
        return Err(Error::Argument("pooling needs at least one node of each kind".into()));
    }
    for side in 0..2 {
        out[side * m0..(side + 1) * m0]
            .iter_mut()
            .for_each(|v| *v /= counts[side] as f64);
    }
    Ok(out)
}

/// Scalar prediction from a pooled vector and a fingerprint.
pub fn readout(pooled: &[f64], fp: &Fingerprint, params: &ParameterStore, cfg: &ModelConfig) -> Result<f64> {
    let model = Model::new(cfg)?;
    model.check_params(params)?;
    let last0 = cfg.layouts[cfg.layers - 1].mult[0];
    if pooled.len() != 2 * last0 {
        return Err(Error::Config(format!("pooled vector must have width {}", 2 * last0)));
    }
    if fp.nbits() != cfg.fingerprint_width {
        return Err(Error::Config("fingerprint width does not match model".into()));
    }
    let mut tape = Tape::with_exec(Exec::Sequential);
    let bound = params.bind(&mut tape);
    let p = tape.leaf(Tensor::from_vec(1, pooled.len(), pooled.to_vec()));
    let f = tape.leaf(Tensor::from_vec(1, fp.nbits(), fp.to_dense()));
    let out = readout_tape(&mut tape, &bound, p, f);
    Ok(tape.value(out).item())
}
