#![allow(dead_code)]

use equicpi::chemio::{
    AminoAcid, Bond, BondOrder, ComplexRecord, Element, LigandAtom, LigandMolecule, ProteinAtom, ProteinAtoms,
    ProteinStructure, Residue,
};
use equicpi::Vec3;
use rand::Rng;

const LIGAND_ELEMENTS: [Element; 7] = [
    Element::C,
    Element::C,
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::CL,
];

const AMINO_ACIDS: [AminoAcid; 8] = [
    AminoAcid::Ala,
    AminoAcid::Gly,
    AminoAcid::Ser,
    AminoAcid::Phe,
    AminoAcid::Lys,
    AminoAcid::Asp,
    AminoAcid::Leu,
    AminoAcid::Trp,
];

fn unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n: f64 = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn add(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

/// Random bonded chain of heavy atoms, 1.5 Å steps.
pub fn random_ligand<R: Rng>(rng: &mut R, n: usize, id: &str) -> LigandMolecule {
    let mut atoms = Vec::with_capacity(n);
    let mut pos = [0.0; 3];
    for i in 0..n {
        if i > 0 {
            pos = add(pos, unit(rng), 1.5);
        }
        let element = if i == 0 {
            Element::C
        } else {
            LIGAND_ELEMENTS[rng.gen_range(0..LIGAND_ELEMENTS.len())]
        };
        atoms.push(LigandAtom {
            element,
            position: pos,
            formal_charge: 0,
            aromatic: false,
        });
    }
    // halogens and terminal atoms only at chain ends
    for i in 1..n.saturating_sub(1) {
        if atoms[i].element == Element::CL {
            atoms[i].element = Element::C;
        }
    }
    let bonds = (1..n)
        .map(|i| Bond {
            i: i - 1,
            j: i,
            order: BondOrder::Single,
        })
        .collect();
    LigandMolecule {
        id: id.into(),
        atoms,
        bonds,
    }
}

/// Residues scattered 4–8 Å around the ligand centroid, with backbone atoms.
pub fn random_protein<R: Rng>(rng: &mut R, n: usize, center: Vec3, id: &str) -> (ProteinStructure, ProteinAtoms) {
    let mut residues = Vec::with_capacity(n);
    let mut atoms = Vec::new();
    for i in 0..n {
        let ca = add(center, unit(rng), rng.gen_range(4.0..8.0));
        let aa = AMINO_ACIDS[rng.gen_range(0..AMINO_ACIDS.len())];
        residues.push(Residue {
            aa,
            chain: "A".into(),
            seq_index: i as i32 + 1,
            ca_position: ca,
        });
        let name3 = aa_name(aa);
        let mut push = |name: &str, element: Element, p: Vec3| {
            atoms.push(ProteinAtom {
                name: name.into(),
                element,
                residue_name: name3.into(),
                chain: "A".into(),
                seq_index: i as i32 + 1,
                position: p,
            })
        };
        push("N", Element::N, add(ca, [-1.0, 1.0, 0.0], 1.0 / 2f64.sqrt() * 1.46));
        push("CA", Element::C, ca);
        let c = add(ca, [1.0, 0.5, 0.0], 1.52 / 1.25f64.sqrt());
        push("C", Element::C, c);
        push("O", Element::O, add(c, [0.0, 1.0, 0.0], 1.23));
        if aa != AminoAcid::Gly {
            push("CB", Element::C, add(ca, [0.0, -1.0, 0.3], 1.53 / 1.09f64.sqrt()));
        }
    }
    (
        ProteinStructure {
            id: id.into(),
            residues,
        },
        ProteinAtoms { id: id.into(), atoms },
    )
}

fn aa_name(aa: AminoAcid) -> &'static str {
    match aa {
        AminoAcid::Ala => "ALA",
        AminoAcid::Gly => "GLY",
        AminoAcid::Ser => "SER",
        AminoAcid::Phe => "PHE",
        AminoAcid::Lys => "LYS",
        AminoAcid::Asp => "ASP",
        AminoAcid::Leu => "LEU",
        AminoAcid::Trp => "TRP",
        _ => "UNK",
    }
}

pub fn centroid(m: &LigandMolecule) -> Vec3 {
    let n = m.atoms.len() as f64;
    let mut c = [0.0; 3];
    for a in &m.atoms {
        for k in 0..3 {
            c[k] += a.position[k] / n;
        }
    }
    c
}

/// Complex with `n_lig` ligand atoms and `n_res` residues, labelled with
/// `ec50_nm`.
pub fn random_complex<R: Rng>(rng: &mut R, id: &str, n_lig: usize, n_res: usize, ec50_nm: Option<f64>) -> ComplexRecord {
    let ligand = random_ligand(rng, n_lig, id);
    let (protein, protein_atoms) = random_protein(rng, n_res, centroid(&ligand), &format!("{id}_rec"));
    ComplexRecord {
        complex_id: id.into(),
        poses: vec![ligand.clone()],
        ligand,
        pose_confidences: None,
        protein,
        protein_atoms,
        label_ec50_nm: ec50_nm,
        upstream_confidence: None,
        is_active: None,
    }
}
