//! Empirical intermolecular docking score and pose re-ranking.
//!
//! The score uses distance-only terms over heavy-atom pairs within 8 Å of
//! each other:
//!
//! ```text
//! d = r_ij - R_i - R_j
//! e = w1 exp(-(d/0.5)^2) + w2 exp(-((d-3)/2)^2) + w_rep [d<0] d^2
//!   + w_hp ramp(d; 0.5, 1.5) [hydrophobic pair] + w_hb ramp(d; -0.7, 0) [H-bond pair]
//! score = sum(e) / (1 + w_rot N_rot)
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chemio::{BondOrder, Element, LigandMolecule, ProteinAtom, ProteinAtoms};
use crate::par::{map_slice, Exec};
use crate::{Error, Result, Vec3};

/// Pairs farther apart than this (center to center, Å) are ignored.
pub const CUTOFF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VinaWeights {
    pub w_gauss1: f64,
    pub w_gauss2: f64,
    pub w_repulsion: f64,
    pub w_hydrophobic: f64,
    pub w_hbond: f64,
    pub w_rot: f64,
}

impl Default for VinaWeights {
    fn default() -> Self {
        VinaWeights {
            w_gauss1: -0.0356,
            w_gauss2: -0.00516,
            w_repulsion: 0.840,
            w_hydrophobic: -0.0351,
            w_hbond: -0.587,
            w_rot: 0.0585,
        }
    }
}

impl VinaWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_gauss1,
            self.w_gauss2,
            self.w_repulsion,
            self.w_hydrophobic,
            self.w_hbond,
            self.w_rot,
        ];
        if all.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("docking weights must be finite".into()));
        }
        if self.w_rot < 0.0 {
            return Err(Error::Config("w_rot must be non-negative".into()));
        }
        Ok(())
    }
}

/// Van der Waals radius in Å.
pub fn vdw_radius(e: Element) -> f64 {
    match e {
        Element::C => 1.9,
        Element::N => 1.8,
        Element::O => 1.7,
        Element::S => 2.0,
        Element::P => 2.1,
        Element::F => 1.5,
        Element::CL => 1.8,
        Element::BR => 2.0,
        Element::I => 2.2,
        _ => 1.9,
    }
}

fn covalent_radius(e: Element) -> f64 {
    match e {
        Element::C => 0.76,
        Element::N => 0.71,
        Element::O => 0.66,
        Element::S => 1.05,
        Element::P => 1.07,
        _ => 0.76,
    }
}

/// 1 for `d <= a`, 0 for `d >= b`, linear in between.
pub fn ramp(d: f64, a: f64, b: f64) -> f64 {
    if d <= a {
        1.0
    } else if d >= b {
        0.0
    } else {
        (b - d) / (b - a)
    }
}

/// Unweighted term values for one atom pair at surface distance `d`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTerms {
    pub gauss1: f64,
    pub gauss2: f64,
    pub repulsion: f64,
    pub hydrophobic: f64,
    pub hbond: f64,
}

impl PairTerms {
    pub fn at(d: f64, hydrophobic: bool, hbond: bool) -> Self {
        PairTerms {
            gauss1: (-(d / 0.5).powi(2)).exp(),
            gauss2: (-((d - 3.0) / 2.0).powi(2)).exp(),
            repulsion: if d < 0.0 { d * d } else { 0.0 },
            hydrophobic: if hydrophobic { ramp(d, 0.5, 1.5) } else { 0.0 },
            hbond: if hbond { ramp(d, -0.7, 0.0) } else { 0.0 },
        }
    }

    pub fn energy(&self, w: &VinaWeights) -> f64 {
        w.w_gauss1 * self.gauss1
            + w.w_gauss2 * self.gauss2
            + w.w_repulsion * self.repulsion
            + w.w_hydrophobic * self.hydrophobic
            + w.w_hbond * self.hbond
    }

    fn add(&mut self, o: &PairTerms) {
        self.gauss1 += o.gauss1;
        self.gauss2 += o.gauss2;
        self.repulsion += o.repulsion;
        self.hydrophobic += o.hydrophobic;
        self.hbond += o.hbond;
    }
}

/// Interaction type of one heavy atom.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomType {
    pub hydrophobic: bool,
    pub donor: bool,
    pub acceptor: bool,
}

impl AtomType {
    fn hbond_with(&self, o: &AtomType) -> bool {
        (self.donor && o.acceptor) || (self.acceptor && o.donor)
    }
}

fn standard_valence(e: Element) -> Option<f64> {
    match e {
        Element::C => Some(4.0),
        Element::N => Some(3.0),
        Element::O => Some(2.0),
        Element::S => Some(2.0),
        _ => None,
    }
}

/// Implicit hydrogens from the standard valence, the bond orders and the
/// formal charge.
pub fn implicit_hydrogens(mol: &LigandMolecule, atom: usize) -> usize {
    let a = &mol.atoms[atom];
    let Some(val) = standard_valence(a.element) else {
        return 0;
    };
    let bonded: f64 = mol
        .bonds
        .iter()
        .filter(|b| b.i == atom || b.j == atom)
        .map(|b| b.order.valence())
        .sum();
    // N+ gains a bond (ammonium), O- loses one
    let adjusted = match a.element {
        Element::C => val - (a.formal_charge.abs() as f64),
        _ => val + a.formal_charge as f64,
    };
    (adjusted - bonded).round().max(0.0) as usize
}

/// Ligand atom typing: carbons bonded only to carbon are hydrophobic, every
/// O is an acceptor, N/O with an implicit H are donors, N without H and
/// without positive charge is an acceptor.
pub fn ligand_types(mol: &LigandMolecule) -> Vec<AtomType> {
    let adj = mol.adjacency();
    (0..mol.atoms.len())
        .map(|i| {
            let a = &mol.atoms[i];
            match a.element {
                Element::C => AtomType {
                    hydrophobic: adj[i].iter().all(|&(j, _)| mol.atoms[j].element == Element::C),
                    ..Default::default()
                },
                Element::O => AtomType {
                    hydrophobic: false,
                    donor: implicit_hydrogens(mol, i) > 0,
                    acceptor: true,
                },
                Element::N => {
                    let h = implicit_hydrogens(mol, i);
                    AtomType {
                        hydrophobic: false,
                        donor: h > 0,
                        acceptor: h == 0 && a.formal_charge <= 0,
                    }
                }
                _ => AtomType::default(),
            }
        })
        .collect()
}

fn sidechain_polar(residue: &str, atom: &str) -> Option<(bool, bool)> {
    // (donor, acceptor)
    let t = match (residue, atom) {
        ("ARG", "NE" | "NH1" | "NH2") => (true, false),
        ("ASN", "ND2") | ("GLN", "NE2") => (true, false),
        ("ASN", "OD1") | ("GLN", "OE1") => (false, true),
        ("ASP", "OD1" | "OD2") | ("GLU", "OE1" | "OE2") => (false, true),
        ("HIS", "ND1" | "NE2") => (true, true),
        ("LYS", "NZ") => (true, false),
        ("SER", "OG") | ("THR", "OG1") | ("TYR", "OH") => (true, true),
        ("TRP", "NE1") => (true, false),
        ("MET", "SD") | ("CYS", "SG") => (false, false),
        _ => return None,
    };
    Some(t)
}

/// Receptor typing from residue templates. Backbone N (not proline) donates,
/// backbone O/OXT accepts. Atoms outside the templates fall back to: O
/// acceptor, N donor. Carbons are hydrophobic unless a covalent neighbor
/// (inferred from distance within the residue and its sequence neighbors)
/// is N or O.
pub fn protein_types(protein: &ProteinAtoms) -> Vec<AtomType> {
    let atoms = &protein.atoms;
    let mut by_residue: BTreeMap<(&str, i32), Vec<usize>> = BTreeMap::new();
    for (i, a) in atoms.iter().enumerate() {
        by_residue.entry((a.chain.as_str(), a.seq_index)).or_default().push(i);
    }
    let polar_neighbor = |i: usize| -> bool {
        let a = &atoms[i];
        (-1..=1).any(|ds| {
            by_residue
                .get(&(a.chain.as_str(), a.seq_index + ds))
                .into_iter()
                .flatten()
                .any(|&j| j != i && is_polar(&atoms[j]) && bonded(a, &atoms[j]))
        })
    };
    atoms
        .iter()
        .enumerate()
        .map(|(i, a)| match a.element {
            Element::C => AtomType {
                hydrophobic: !polar_neighbor(i),
                ..Default::default()
            },
            Element::N | Element::O => {
                let (donor, acceptor) = match a.name.as_str() {
                    "N" => (a.residue_name != "PRO", false),
                    "O" | "OXT" => (false, true),
                    name => sidechain_polar(&a.residue_name, name)
                        .unwrap_or((a.element == Element::N, a.element == Element::O)),
                };
                AtomType {
                    hydrophobic: false,
                    donor,
                    acceptor,
                }
            }
            _ => AtomType::default(),
        })
        .collect()
}

fn is_polar(a: &ProteinAtom) -> bool {
    matches!(a.element, Element::N | Element::O)
}

fn bonded(a: &ProteinAtom, b: &ProteinAtom) -> bool {
    let lim = covalent_radius(a.element) + covalent_radius(b.element) + 0.4;
    dist2(a.position, b.position) < lim * lim
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Rotatable bonds: single, not in a ring, and both endpoints bonded to at
/// least two heavy atoms.
pub fn count_torsions(mol: &LigandMolecule) -> usize {
    let adj = mol.adjacency();
    mol.bonds
        .iter()
        .enumerate()
        .filter(|&(k, b)| {
            b.order == BondOrder::Single
                && adj[b.i].len() >= 2
                && adj[b.j].len() >= 2
                && !in_ring(mol, &adj, k)
        })
        .count()
}

fn in_ring(mol: &LigandMolecule, adj: &[Vec<(usize, BondOrder)>], bond: usize) -> bool {
    let b = mol.bonds[bond];
    let mut seen = vec![false; mol.atoms.len()];
    let mut stack = vec![b.i];
    seen[b.i] = true;
    while let Some(u) = stack.pop() {
        for &(v, _) in &adj[u] {
            if (u == b.i && v == b.j) || (u == b.j && v == b.i) || seen[v] {
                continue;
            }
            if v == b.j {
                return true;
            }
            seen[v] = true;
            stack.push(v);
        }
    }
    false
}

/// Receptor atoms with their radii and types, computed once and reused
/// across poses.
#[derive(Debug, Clone)]
pub struct Receptor {
    positions: Vec<Vec3>,
    radii: Vec<f64>,
    types: Vec<AtomType>,
}

impl Receptor {
    pub fn new(protein: &ProteinAtoms) -> Self {
        Receptor {
            positions: protein.atoms.iter().map(|a| a.position).collect(),
            radii: protein.atoms.iter().map(|a| vdw_radius(a.element)).collect(),
            types: protein_types(protein),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Summed (unweighted) terms, the intermolecular energy and the final score
/// of one pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VinaBreakdown {
    pub terms: PairTerms,
    pub e_inter: f64,
    pub n_torsional: usize,
    pub score: f64,
}

/// Score one pose against a prepared receptor. Each ligand atom's pair
/// energies are summed in receptor order, then the per-atom sums are added in
/// ligand order, so the result does not depend on thread count.
pub fn score_pose(ligand: &LigandMolecule, receptor: &Receptor, w: &VinaWeights, exec: Exec) -> Result<VinaBreakdown> {
    if ligand.atoms.is_empty() {
        return Err(Error::Argument(format!("pose {:?} has no atoms", ligand.id)));
    }
    if ligand
        .atoms
        .iter()
        .any(|a| a.position.iter().any(|c| !c.is_finite()))
    {
        return Err(Error::Argument(format!(
            "pose {:?} has non-finite coordinates",
            ligand.id
        )));
    }
    let ltypes = ligand_types(ligand);
    let idx: Vec<usize> = (0..ligand.atoms.len()).collect();
    let per_atom = map_slice(exec, &idx, |&i| {
        let a = &ligand.atoms[i];
        let ri = vdw_radius(a.element);
        let ti = ltypes[i];
        let mut acc = PairTerms::default();
        let mut e = 0.0;
        for j in 0..receptor.len() {
            let r2 = dist2(a.position, receptor.positions[j]);
            if r2 > CUTOFF * CUTOFF {
                continue;
            }
            let d = r2.sqrt() - ri - receptor.radii[j];
            let tj = receptor.types[j];
            let t = PairTerms::at(d, ti.hydrophobic && tj.hydrophobic, ti.hbond_with(&tj));
            e += t.energy(w);
            acc.add(&t);
        }
        (acc, e)
    });
    let mut terms = PairTerms::default();
    let mut e_inter = 0.0;
    for (t, e) in &per_atom {
        terms.add(t);
        e_inter += e;
    }
    let n_torsional = count_torsions(ligand);
    let score = if n_torsional == 0 {
        e_inter
    } else {
        e_inter / (1.0 + w.w_rot * n_torsional as f64)
    };
    Ok(VinaBreakdown {
        terms,
        e_inter,
        n_torsional,
        score,
    })
}

/// Docking score of a pose in kcal/mol.
pub fn vina_score(ligand: &LigandMolecule, protein: &ProteinAtoms, weights: &VinaWeights) -> Result<f64> {
    Ok(score_pose(ligand, &Receptor::new(protein), weights, Exec::Sequential)?.score)
}

/// Standard scores with the sample standard deviation. A single value, or a
/// set with zero spread, maps to zeros.
pub fn zscores(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; n];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// `lambda * p + alpha * (-z(e))`, with energies standardized over the
/// whole pose set; higher is better.
pub fn fuse_scores(confidences: &[f64], energies: &[f64], lambda: f64, alpha: f64) -> Result<Vec<f64>> {
    if confidences.len() != energies.len() {
        return Err(Error::Argument(format!(
            "{} confidences for {} poses",
            confidences.len(),
            energies.len()
        )));
    }
    if confidences.iter().chain(energies).any(|v| !v.is_finite()) {
        return Err(Error::Argument("fusion inputs must be finite".into()));
    }
    Ok(zscores(energies)
        .iter()
        .zip(confidences)
        .map(|(z, p)| lambda * p - alpha * z)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPose {
    pub pose_index: usize,
    pub e_vina: f64,
    pub upstream_confidence: Option<f64>,
    pub fused: Option<f64>,
}

/// Fusion settings for re-ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            lambda: 1.0,
            alpha: 1.0,
        }
    }
}

/// Score every pose and sort best first: by fused score (descending) when
/// confidences are given, else by energy (ascending). Ties keep pose order.
pub fn rerank_poses(
    poses: &[LigandMolecule],
    confidences: Option<&[f64]>,
    protein: &ProteinAtoms,
    weights: &VinaWeights,
    fusion: &RerankConfig,
    exec: Exec,
) -> Result<Vec<ScoredPose>> {
    if poses.is_empty() {
        return Err(Error::Argument("no poses to rank".into()));
    }
    let receptor = Receptor::new(protein);
    let scored = map_slice(exec, poses, |p| score_pose(p, &receptor, weights, Exec::Sequential));
    let energies = scored
        .into_iter()
        .map(|r| r.map(|b| b.score))
        .collect::<Result<Vec<f64>>>()?;
    let fused = match confidences {
        Some(c) => Some(fuse_scores(c, &energies, fusion.lambda, fusion.alpha)?),
        None => None,
    };
    let mut out: Vec<ScoredPose> = energies
        .iter()
        .enumerate()
        .map(|(i, &e)| ScoredPose {
            pose_index: i,
            e_vina: e,
            upstream_confidence: confidences.map(|c| c[i]),
            fused: fused.as_ref().map(|f| f[i]),
        })
        .collect();
    out.sort_by(|a, b| {
        let ord = match (a.fused, b.fused) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            _ => a.e_vina.total_cmp(&b.e_vina),
        };
        ord.then(a.pose_index.cmp(&b.pose_index))
    });
    Ok(out)
}
