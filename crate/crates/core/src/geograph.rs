//! Heterogeneous radius graph over ligand heavy atoms and receptor residues.
//!
//! Nodes are ordered ligand atoms first, then residues. Edges are directed
//! and always present in both directions; their kind follows from the
//! endpoint kinds and each kind has its own distance cutoff.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chemio::{AminoAcid, ComplexRecord, Element, LigandMolecule, ProteinStructure};
use crate::par::{self, Exec};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    LigandAtom,
    Residue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Cc,
    Pp,
    Pc,
}

impl EdgeKind {
    /// Processing order inside every message-passing layer.
    pub const ORDER: [EdgeKind; 3] = [EdgeKind::Cc, EdgeKind::Pp, EdgeKind::Pc];

    pub fn between(a: NodeKind, b: NodeKind) -> Self {
        match (a, b) {
            (NodeKind::LigandAtom, NodeKind::LigandAtom) => EdgeKind::Cc,
            (NodeKind::Residue, NodeKind::Residue) => EdgeKind::Pp,
            _ => EdgeKind::Pc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Cc => "cc",
            EdgeKind::Pp => "pp",
            EdgeKind::Pc => "pc",
        }
    }
}

/// Cutoffs (Å) and radial-basis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffConfig {
    pub cc: f64,
    pub pp: f64,
    pub pc: f64,
    pub rbf_k: usize,
    pub rbf_gamma: f64,
    pub rbf_nu_min: f64,
    pub rbf_nu_max: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        let (cc, pp, pc) = (5.0, 15.0, 10.0);
        let nu_max = 15.0;
        CutoffConfig {
            cc,
            pp,
            pc,
            rbf_k: 32,
            rbf_gamma: 10.0 / nu_max,
            rbf_nu_min: 0.0,
            rbf_nu_max: nu_max,
        }
    }
}

impl CutoffConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.cc) && ok(self.pp) && ok(self.pc)) {
            return Err(Error::Config("edge cutoffs must be positive".into()));
        }
        if self.rbf_k < 2 {
            return Err(Error::Config("rbf_k must be at least 2".into()));
        }
        if !(self.rbf_nu_min < self.rbf_nu_max) || !ok(self.rbf_gamma) {
            return Err(Error::Config(
                "need rbf_nu_min < rbf_nu_max and rbf_gamma > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn cutoff(&self, kind: EdgeKind) -> f64 {
        match kind {
            EdgeKind::Cc => self.cc,
            EdgeKind::Pp => self.pp,
            EdgeKind::Pc => self.pc,
        }
    }

    pub fn max_cutoff(&self) -> f64 {
        self.cc.max(self.pp).max(self.pc)
    }

    /// Evenly spaced anchors on `[nu_min, nu_max]`.
    pub fn centers(&self) -> Vec<f64> {
        let step = (self.rbf_nu_max - self.rbf_nu_min) / (self.rbf_k - 1) as f64;
        (0..self.rbf_k)
            .map(|i| self.rbf_nu_min + step * i as f64)
            .collect()
    }
}

/// Gaussian radial basis `exp(-γ (d - ν_i)²)`.
pub fn rbf_embed(dist: f64, cfg: &CutoffConfig) -> Vec<f64> {
    cfg.centers()
        .into_iter()
        .map(|nu| (-cfg.rbf_gamma * (dist - nu).powi(2)).exp())
        .collect()
}

/// `∂μ_i/∂d = -2γ (d - ν_i) μ_i`.
pub fn rbf_derivative(dist: f64, cfg: &CutoffConfig) -> Vec<f64> {
    cfg.centers()
        .into_iter()
        .zip(rbf_embed(dist, cfg))
        .map(|(nu, mu)| -2.0 * cfg.rbf_gamma * (dist - nu) * mu)
        .collect()
}

pub const ELEMENT_CLASSES: usize = 10;
pub const DEGREE_CLASSES: usize = 6;
pub const CHARGE_CLASSES: usize = 5;
/// element ⊕ degree ⊕ charge ⊕ aromatic
pub const LIGAND_FEATURES: usize = ELEMENT_CLASSES + DEGREE_CLASSES + CHARGE_CLASSES + 1;
pub const RESIDUE_FEATURES: usize = 21;
/// Ligand and residue one-hots occupy disjoint blocks of one vector.
pub const NODE_FEATURES: usize = LIGAND_FEATURES + RESIDUE_FEATURES;

fn element_class(e: Element) -> usize {
    match e {
        Element::C => 0,
        Element::N => 1,
        Element::O => 2,
        Element::S => 3,
        Element::P => 4,
        Element::F => 5,
        Element::CL => 6,
        Element::BR => 7,
        Element::I => 8,
        _ => 9,
    }
}

pub fn ligand_atom_features(element: Element, degree: usize, charge: i32, aromatic: bool) -> Vec<f64> {
    let mut x = vec![0.0; NODE_FEATURES];
    x[element_class(element)] = 1.0;
    x[ELEMENT_CLASSES + degree.min(DEGREE_CLASSES - 1)] = 1.0;
    x[ELEMENT_CLASSES + DEGREE_CLASSES + (charge.clamp(-2, 2) + 2) as usize] = 1.0;
    if aromatic {
        x[LIGAND_FEATURES - 1] = 1.0;
    }
    x
}

pub fn residue_features(aa: AminoAcid) -> Vec<f64> {
    let mut x = vec![0.0; NODE_FEATURES];
    x[LIGAND_FEATURES + aa.index()] = 1.0;
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub scalar_features: Vec<f64>,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Receiving node.
    pub a: usize,
    /// Sending node.
    pub b: usize,
    pub kind: EdgeKind,
    /// `position_b - position_a`
    pub r_vec: Vec3,
    pub dist: f64,
    pub rbf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphWarning {
    /// No ligand–residue edge: the ligand sits outside every pc cutoff.
    LigandOutsidePocket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub nodes: Vec<Node>,
    /// Sorted by `(a, b)`.
    pub edges: Vec<Edge>,
    pub n_ligand: usize,
    pub warnings: Vec<GraphWarning>,
}

impl HeteroGraph {
    pub fn n_residues(&self) -> usize {
        self.nodes.len() - self.n_ligand
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Rigidly move every node (`x -> R x + t`), recomputing edge geometry.
    pub fn transformed(&self, rot: &[[f64; 3]; 3], t: Vec3, cfg: &CutoffConfig) -> HeteroGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            n.position = add(mat_vec(rot, n.position), t);
        }
        for e in &mut g.edges {
            let (pa, pb) = (g.nodes[e.a].position, g.nodes[e.b].position);
            let (r, d) = edge_geometry(pa, pb);
            e.r_vec = r;
            e.dist = d;
            e.rbf = rbf_embed(d, cfg);
        }
        g
    }
}

pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// `(p_b - p_a, |p_b - p_a|)`
pub fn edge_geometry(pa: Vec3, pb: Vec3) -> (Vec3, f64) {
    let r = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
    let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    (r, d)
}

/// Node list for a ligand pose and receptor.
pub fn graph_nodes(ligand: &LigandMolecule, protein: &ProteinStructure) -> Vec<Node> {
    let degree = {
        let mut d = vec![0usize; ligand.atoms.len()];
        for b in &ligand.bonds {
            d[b.i] += 1;
            d[b.j] += 1;
        }
        d
    };
    let mut nodes = Vec::with_capacity(ligand.atoms.len() + protein.residues.len());
    for (a, deg) in ligand.atoms.iter().zip(degree) {
        nodes.push(Node {
            kind: NodeKind::LigandAtom,
            scalar_features: ligand_atom_features(a.element, deg, a.formal_charge, a.aromatic),
            position: a.position,
        });
    }
    for r in &protein.residues {
        nodes.push(Node {
            kind: NodeKind::Residue,
            scalar_features: residue_features(r.aa),
            position: r.ca_position,
        });
    }
    nodes
}

fn make_edge(nodes: &[Node], a: usize, b: usize, cfg: &CutoffConfig) -> Option<Edge> {
    let kind = EdgeKind::between(nodes[a].kind, nodes[b].kind);
    let (r_vec, dist) = edge_geometry(nodes[a].position, nodes[b].position);
    (dist <= cfg.cutoff(kind)).then(|| Edge {
        a,
        b,
        kind,
        r_vec,
        dist,
        rbf: rbf_embed(dist, cfg),
    })
}

type Cell = (i64, i64, i64);

fn cell_of(p: Vec3, size: f64) -> Cell {
    (
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    )
}

/// Directed edges via a uniform cell list with cell edge = largest cutoff.
pub fn radius_edges(nodes: &[Node], cfg: &CutoffConfig, exec: Exec) -> Vec<Edge> {
    let size = cfg.max_cutoff();
    let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        cells.entry(cell_of(n.position, size)).or_default().push(i);
    }
    let per_node = par::map_range(exec, nodes.len(), |a| {
        let (cx, cy, cz) = cell_of(nodes[a].position, size);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(members) = cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(
                            members
                                .iter()
                                .filter(|&&b| b != a)
                                .filter_map(|&b| make_edge(nodes, a, b, cfg)),
                        );
                    }
                }
            }
        }
        out.sort_by_key(|e| e.b);
        out
    });
    per_node.into_iter().flatten().collect()
}

/// O(n²) reference neighbor search. Produces exactly the same edge list as
/// [`radius_edges`].
pub fn radius_edges_bruteforce(nodes: &[Node], cfg: &CutoffConfig) -> Vec<Edge> {
    let mut out = Vec::new();
    for a in 0..nodes.len() {
        for b in 0..nodes.len() {
            if a != b {
                out.extend(make_edge(nodes, a, b, cfg));
            }
        }
    }
    out
}

/// Build the graph for a ligand pose against a receptor.
pub fn build_graph_from(
    ligand: &LigandMolecule,
    protein: &ProteinStructure,
    cfg: &CutoffConfig,
) -> Result<HeteroGraph> {
    build_graph_with(ligand, protein, cfg, Exec::default())
}

pub fn build_graph_with(
    ligand: &LigandMolecule,
    protein: &ProteinStructure,
    cfg: &CutoffConfig,
    exec: Exec,
) -> Result<HeteroGraph> {
    cfg.validate()?;
    if ligand.atoms.is_empty() {
        return Err(Error::Argument(format!("ligand {:?} has no atoms", ligand.id)));
    }
    if protein.residues.is_empty() {
        return Err(Error::Argument(format!("protein {:?} has no residues", protein.id)));
    }
    let nodes = graph_nodes(ligand, protein);
    let edges = radius_edges(&nodes, cfg, exec);
    let mut warnings = Vec::new();
    if !edges.iter().any(|e| e.kind == EdgeKind::Pc) {
        warnings.push(GraphWarning::LigandOutsidePocket);
    }
    Ok(HeteroGraph {
        nodes,
        edges,
        n_ligand: ligand.atoms.len(),
        warnings,
    })
}

/// Graph of a manifest record using its first pose.
pub fn build_graph(record: &ComplexRecord, cfg: &CutoffConfig) -> Result<HeteroGraph> {
    build_graph_from(&record.ligand, &record.protein, cfg)
}
