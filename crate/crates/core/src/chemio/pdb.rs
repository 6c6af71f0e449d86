use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AminoAcid, Element, ProteinStructure, Residue};
use crate::{Error, Result, Vec3};

/// One heavy atom of a receptor, as needed by the empirical docking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinAtom {
    pub name: String,
    pub element: Element,
    pub residue_name: String,
    pub chain: String,
    pub seq_index: i32,
    pub position: Vec3,
}

/// All heavy atoms of a receptor in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinAtoms {
    pub id: String,
    pub atoms: Vec<ProteinAtom>,
}

impl ProteinAtoms {
    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> ProteinAtoms {
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.position = f(a.position);
        }
        out
    }
}

struct AtomLine<'a> {
    name: &'a str,
    residue_name: &'a str,
    chain: &'a str,
    seq_index: i32,
    position: Vec3,
    element: &'a str,
}

fn field(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("")
}

fn parse_atom_line(line: &str, lineno: usize) -> Result<AtomLine<'_>> {
    if !line.is_ascii() {
        return Err(Error::parse(lineno, "non-ASCII characters in ATOM record"));
    }
    if line.len() < 54 {
        return Err(Error::parse(
            lineno,
            format!("ATOM record too short ({} columns)", line.len()),
        ));
    }
    let coord = |start: usize, axis: &str| -> Result<f64> {
        let raw = field(line, start, start + 8).trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::parse(
                lineno,
                format!("malformed {axis} coordinate {raw:?}"),
            )),
        }
    };
    let position = [coord(30, "x")?, coord(38, "y")?, coord(46, "z")?];
    let seq_raw = field(line, 22, 26).trim();
    let seq_index = seq_raw
        .parse::<i32>()
        .map_err(|_| Error::parse(lineno, format!("malformed residue number {seq_raw:?}")))?;
    Ok(AtomLine {
        name: field(line, 12, 16).trim(),
        residue_name: field(line, 17, 20).trim(),
        chain: field(line, 21, 22).trim(),
        seq_index,
        position,
        element: field(line, 76, 78).trim(),
    })
}

/// ATOM records of the first model, with their 1-based line numbers.
fn atom_records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .take_while(|(_, l)| !l.starts_with("ENDMDL"))
        .filter(|(_, l)| l.starts_with("ATOM  ") || *l == "ATOM")
}

/// Parse a PDB file into residue nodes located at their Cα atoms.
///
/// Only `ATOM` records of the first model are read. The first Cα record seen
/// for a `(chain, seq_index)` pair wins, which discards later alternate
/// locations and insertion-code duplicates.
pub fn parse_pdb(id: &str, text: &str) -> Result<ProteinStructure> {
    let mut by_key: BTreeMap<(String, i32), Residue> = BTreeMap::new();
    for (lineno, line) in atom_records(text) {
        let rec = parse_atom_line(line, lineno)?;
        if rec.name != "CA" {
            continue;
        }
        let key = (rec.chain.to_string(), rec.seq_index);
        by_key.entry(key).or_insert_with(|| Residue {
            aa: AminoAcid::from_three_letter(rec.residue_name),
            chain: rec.chain.to_string(),
            seq_index: rec.seq_index,
            ca_position: rec.position,
        });
    }
    if by_key.is_empty() {
        return Err(Error::EmptyStructure(format!("{id}: no CA atoms in ATOM records")));
    }
    Ok(ProteinStructure {
        id: id.to_string(),
        residues: by_key.into_values().collect(),
    })
}

fn element_from_name(name: &str) -> Option<Element> {
    let letters: String = name.chars().filter(|c| c.is_ascii_alphabetic()).collect();
    // PDB atom names start with the element, e.g. "CA" is a carbon, "SD" a sulfur.
    letters
        .get(..1)
        .and_then(Element::from_symbol)
}

/// Parse every heavy `ATOM` record of the first model.
///
/// Alternate locations are resolved per `(chain, seq_index, atom name)`: the
/// first occurrence wins. Elements come from columns 77–78, falling back to
/// the leading letter of the atom name.
pub fn parse_pdb_atoms(id: &str, text: &str) -> Result<ProteinAtoms> {
    let mut seen: HashSet<(String, i32, String)> = HashSet::new();
    let mut atoms = Vec::new();
    for (lineno, line) in atom_records(text) {
        let rec = parse_atom_line(line, lineno)?;
        let element = if rec.element.is_empty() {
            element_from_name(rec.name)
        } else {
            Element::from_symbol(rec.element)
        }
        .ok_or_else(|| {
            Error::parse(
                lineno,
                format!("cannot determine element of atom {:?}", rec.name),
            )
        })?;
        if element.is_hydrogen() {
            continue;
        }
        let key = (rec.chain.to_string(), rec.seq_index, rec.name.to_string());
        if !seen.insert(key) {
            continue;
        }
        atoms.push(ProteinAtom {
            name: rec.name.to_string(),
            element,
            residue_name: rec.residue_name.to_string(),
            chain: rec.chain.to_string(),
            seq_index: rec.seq_index,
            position: rec.position,
        });
    }
    if atoms.is_empty() {
        return Err(Error::EmptyStructure(format!("{id}: no heavy ATOM records")));
    }
    Ok(ProteinAtoms {
        id: id.to_string(),
        atoms,
    })
}

/// Read a PDB file and return both the residue view and the heavy-atom view.
pub fn read_pdb(path: &Path) -> Result<(ProteinStructure, ProteinAtoms)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((parse_pdb(&id, &text)?, parse_pdb_atoms(&id, &text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(serial: u32, name: &str, alt: char, res: &str, chain: char, seq: i32, xyz: Vec3, el: &str) -> String {
        format!(
            "ATOM  {serial:>5} {name:<4}{alt}{res:>3} {chain}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {el:>2}",
            xyz[0], xyz[1], xyz[2]
        )
    }

    #[test]
    fn single_ca_line() {
        let text = atom(1, " CA ", ' ', "ALA", 'A', 1, [1.0, 2.0, 3.0], "C");
        let p = parse_pdb("x", &text).unwrap();
        assert_eq!(p.residues.len(), 1);
        assert_eq!(p.residues[0].aa, AminoAcid::Ala);
        assert_eq!(p.residues[0].ca_position, [1.0, 2.0, 3.0]);
        assert_eq!(p.residues[0].chain, "A");
    }

    #[test]
    fn first_altloc_wins() {
        let text = [
            atom(1, " CA ", 'A', "SER", 'A', 5, [1.0, 1.0, 1.0], "C"),
            atom(2, " CA ", 'B', "SER", 'A', 5, [9.0, 9.0, 9.0], "C"),
        ]
        .join("\n");
        let p = parse_pdb("x", &text).unwrap();
        assert_eq!(p.residues.len(), 1);
        assert_eq!(p.residues[0].ca_position, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn hetatm_only_is_empty() {
        let text = atom(1, " CA ", ' ', "HOH", 'A', 1, [0.0; 3], "C").replacen("ATOM  ", "HETATM", 1);
        assert!(matches!(parse_pdb("x", &text), Err(Error::EmptyStructure(_))));
    }

    #[test]
    fn residues_sorted_and_nonstandard_is_unk() {
        let text = [
            atom(1, " CA ", ' ', "MSE", 'B', 2, [0.0; 3], "C"),
            atom(2, " CA ", ' ', "GLY", 'A', 7, [0.0; 3], "C"),
            atom(3, " CA ", ' ', "TRP", 'A', 3, [0.0; 3], "C"),
        ]
        .join("\n");
        let p = parse_pdb("x", &text).unwrap();
        let keys: Vec<_> = p.residues.iter().map(|r| (r.chain.as_str(), r.seq_index)).collect();
        assert_eq!(keys, vec![("A", 3), ("A", 7), ("B", 2)]);
        assert_eq!(p.sequence(), "WGX");
    }

    #[test]
    fn malformed_coordinate_reports_line() {
        let good = atom(1, " CA ", ' ', "ALA", 'A', 1, [0.0; 3], "C");
        let mut bad = atom(2, " CA ", ' ', "ALA", 'A', 2, [0.0; 3], "C");
        bad.replace_range(30..38, "   abc  ");
        let text = format!("REMARK x\n{good}\n{bad}\n");
        match parse_pdb("x", &text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn heavy_atoms_skip_hydrogens_and_altlocs() {
        let text = [
            atom(1, " N  ", ' ', "ALA", 'A', 1, [0.0; 3], "N"),
            atom(2, " CA ", 'A', "ALA", 'A', 1, [1.0, 0.0, 0.0], "C"),
            atom(3, " CA ", 'B', "ALA", 'A', 1, [5.0, 0.0, 0.0], "C"),
            atom(4, " H  ", ' ', "ALA", 'A', 1, [0.0; 3], "H"),
            atom(5, " SD ", ' ', "MET", 'A', 2, [0.0; 3], ""),
        ]
        .join("\n");
        let atoms = parse_pdb_atoms("x", &text).unwrap();
        assert_eq!(atoms.atoms.len(), 3);
        assert_eq!(atoms.atoms[1].position, [1.0, 0.0, 0.0]);
        assert_eq!(atoms.atoms[2].element, Element::S);
    }

    #[test]
    fn only_first_model_is_read() {
        let text = [
            "MODEL        1".to_string(),
            atom(1, " CA ", ' ', "ALA", 'A', 1, [0.0; 3], "C"),
            "ENDMDL".to_string(),
            "MODEL        2".to_string(),
            atom(1, " CA ", ' ', "ALA", 'A', 2, [0.0; 3], "C"),
        ]
        .join("\n");
        assert_eq!(parse_pdb("x", &text).unwrap().residues.len(), 1);
    }
}
