//! Structure file parsing: PDB receptors, V2000 SDF ligands and dataset
//! manifests.

mod element;
mod manifest;
mod pdb;
mod sdf;

use serde::{Deserialize, Serialize};

pub use element::Element;
pub use manifest::{load_manifest, load_manifest_with, ComplexRecord};
pub use pdb::{parse_pdb, parse_pdb_atoms, read_pdb, ProteinAtom, ProteinAtoms};
pub use sdf::{parse_sdf, parse_sdf_records, read_sdf, write_sdf, SdfRecord};

use crate::Vec3;

/// The 20 standard amino acids plus an unknown class for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AminoAcid {
    Ala,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
    Unk,
}

impl AminoAcid {
    pub const ALL: [AminoAcid; 21] = [
        AminoAcid::Ala,
        AminoAcid::Arg,
        AminoAcid::Asn,
        AminoAcid::Asp,
        AminoAcid::Cys,
        AminoAcid::Gln,
        AminoAcid::Glu,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Leu,
        AminoAcid::Lys,
        AminoAcid::Met,
        AminoAcid::Phe,
        AminoAcid::Pro,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Trp,
        AminoAcid::Tyr,
        AminoAcid::Val,
        AminoAcid::Unk,
    ];

    /// Residue name lookup; anything non-standard becomes `Unk`.
    pub fn from_three_letter(name: &str) -> Self {
        match name.trim().to_ascii_uppercase().as_str() {
            "ALA" => AminoAcid::Ala,
            "ARG" => AminoAcid::Arg,
            "ASN" => AminoAcid::Asn,
            "ASP" => AminoAcid::Asp,
            "CYS" => AminoAcid::Cys,
            "GLN" => AminoAcid::Gln,
            "GLU" => AminoAcid::Glu,
            "GLY" => AminoAcid::Gly,
            "HIS" => AminoAcid::His,
            "ILE" => AminoAcid::Ile,
            "LEU" => AminoAcid::Leu,
            "LYS" => AminoAcid::Lys,
            "MET" => AminoAcid::Met,
            "PHE" => AminoAcid::Phe,
            "PRO" => AminoAcid::Pro,
            "SER" => AminoAcid::Ser,
            "THR" => AminoAcid::Thr,
            "TRP" => AminoAcid::Trp,
            "TYR" => AminoAcid::Tyr,
            "VAL" => AminoAcid::Val,
            _ => AminoAcid::Unk,
        }
    }

    pub fn one_letter(self) -> char {
        b"ARNDCQEGHILKMFPSTWYVX"[self.index()] as char
    }

    pub fn from_one_letter(c: char) -> Self {
        let c = c.to_ascii_uppercase();
        AminoAcid::ALL
            .into_iter()
            .find(|aa| aa.one_letter() == c)
            .unwrap_or(AminoAcid::Unk)
    }

    /// Position in [`AminoAcid::ALL`]; used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub aa: AminoAcid,
    pub chain: String,
    pub seq_index: i32,
    pub ca_position: Vec3,
}

/// Residue-level receptor: one node per residue, located at its Cα.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinStructure {
    pub id: String,
    pub residues: Vec<Residue>,
}

impl ProteinStructure {
    /// One-letter sequence in residue order.
    pub fn sequence(&self) -> String {
        self.residues.iter().map(|r| r.aa.one_letter()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Code used in V2000 bond blocks.
    pub fn sdf_code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_sdf_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    /// Valence contribution; aromatic bonds count 1.5.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LigandAtom {
    pub element: Element,
    pub position: Vec3,
    pub formal_charge: i32,
    pub aromatic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// Heavy-atom ligand graph with 3D coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LigandMolecule {
    pub id: String,
    pub atoms: Vec<LigandAtom>,
    pub bonds: Vec<Bond>,
}

impl LigandMolecule {
    /// Neighbor lists `(neighbor, order)` per atom, in bond-list order.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        adj
    }

    /// Apply `f` to every atom position.
    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> LigandMolecule {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.position = f(a.position);
        }
        out
    }
}
