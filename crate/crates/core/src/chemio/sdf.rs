use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{Bond, BondOrder, Element, LigandAtom, LigandMolecule};
use crate::{Error, Result};

/// A parsed SDF record: the heavy-atom molecule plus its `> <name>` data items.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfRecord {
    pub molecule: LigandMolecule,
    pub properties: BTreeMap<String, String>,
}

struct RawAtom {
    element: Element,
    position: [f64; 3],
    charge: i32,
}

fn col(line: &str, start: usize, end: usize) -> &str {
    let end = end.min(line.len());
    if start >= end {
        return "";
    }
    line.get(start..end).unwrap_or("")
}

fn parse_count(line: &str, start: usize, lineno: usize, what: &str) -> Result<usize> {
    let raw = col(line, start, start + 3).trim();
    raw.parse::<usize>()
        .map_err(|_| Error::parse(lineno, format!("malformed {what} count {raw:?}")))
}

fn charge_from_code(code: i32) -> i32 {
    match code {
        1 => 3,
        2 => 2,
        3 => 1,
        5 => -1,
        6 => -2,
        7 => -3,
        _ => 0,
    }
}

fn parse_atom(line: &str, lineno: usize) -> Result<RawAtom> {
    // Fixed columns first; whitespace-separated fallback for sloppy writers.
    let fixed = || -> Option<(f64, f64, f64, &str, i32)> {
        let x = col(line, 0, 10).trim().parse().ok()?;
        let y = col(line, 10, 20).trim().parse().ok()?;
        let z = col(line, 20, 30).trim().parse().ok()?;
        let sym = col(line, 31, 34).trim();
        let chg = col(line, 36, 39).trim();
        let chg = if chg.is_empty() { 0 } else { chg.parse().ok()? };
        (!sym.is_empty()).then_some((x, y, z, sym, chg))
    };
    let loose = || -> Option<(f64, f64, f64, &str, i32)> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return None;
        }
        let chg = f.get(5).and_then(|c| c.parse().ok()).unwrap_or(0);
        Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?, f[3], chg))
    };
    let (x, y, z, sym, chg) = fixed()
        .or_else(loose)
        .ok_or_else(|| Error::parse(lineno, format!("malformed atom line {line:?}")))?;
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::parse(lineno, "non-finite coordinate"));
    }
    let element = Element::from_symbol(sym)
        .ok_or_else(|| Error::parse(lineno, format!("unknown element symbol {sym:?}")))?;
    Ok(RawAtom {
        element,
        position: [x, y, z],
        charge: charge_from_code(chg),
    })
}

fn parse_bond(line: &str, lineno: usize, n_atoms: usize) -> Result<(usize, usize, BondOrder)> {
    let fixed = || -> Option<(usize, usize, u8)> {
        Some((
            col(line, 0, 3).trim().parse().ok()?,
            col(line, 3, 6).trim().parse().ok()?,
            col(line, 6, 9).trim().parse().ok()?,
        ))
    };
    let loose = || -> Option<(usize, usize, u8)> {
        let f: Vec<&str> = line.split_whitespace().collect();
        Some((f.first()?.parse().ok()?, f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?))
    };
    let (a, b, code) = fixed()
        .or_else(loose)
        .ok_or_else(|| Error::parse(lineno, format!("malformed bond line {line:?}")))?;
    let order = BondOrder::from_sdf_code(code)
        .ok_or_else(|| Error::parse(lineno, format!("unsupported bond type {code}")))?;
    if a == 0 || b == 0 || a > n_atoms || b > n_atoms {
        return Err(Error::parse(lineno, format!("bond endpoint out of range ({a}, {b})")));
    }
    if a == b {
        return Err(Error::parse(lineno, "bond connects an atom to itself"));
    }
    Ok((a - 1, b - 1, order))
}

/// Parse one record; `lines` starts at the header and `first_line` is its
/// 1-based line number in the file.
fn parse_record(lines: &[&str], first_line: usize) -> Result<SdfRecord> {
    let at = |i: usize| first_line + i;
    if lines.len() < 4 {
        return Err(Error::parse(at(lines.len().saturating_sub(1)), "truncated molfile header"));
    }
    let id = lines[0].trim().to_string();
    let counts = lines[3];
    if counts.contains("V3000") {
        return Err(Error::parse(at(3), "V3000 connection tables are not supported"));
    }
    let n_atoms = parse_count(counts, 0, at(3), "atom")?;
    let n_bonds = parse_count(counts, 3, at(3), "bond")?;

    let block_end = lines
        .iter()
        .position(|l| l.starts_with("M  END"))
        .unwrap_or(lines.len());
    let declared = 4 + n_atoms + n_bonds;
    if declared > block_end {
        return Err(Error::parse(
            at(block_end.min(lines.len().saturating_sub(1))),
            format!(
                "counts line declares {n_atoms} atoms and {n_bonds} bonds but the connection table has {} lines",
                block_end - 4
            ),
        ));
    }

    let mut raw_atoms = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        raw_atoms.push(parse_atom(lines[4 + i], at(4 + i))?);
    }
    let mut raw_bonds = Vec::with_capacity(n_bonds);
    let mut seen = HashSet::new();
    for i in 0..n_bonds {
        let idx = 4 + n_atoms + i;
        let (a, b, order) = parse_bond(lines[idx], at(idx), n_atoms)?;
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::parse(at(idx), format!("duplicate bond {}-{}", a + 1, b + 1)));
        }
        raw_bonds.push((a, b, order));
    }
    for (i, line) in lines.iter().enumerate().take(block_end).skip(declared) {
        if line.starts_with("M  CHG") {
            let f: Vec<&str> = line.split_whitespace().collect();
            let n: usize = f.get(2).and_then(|v| v.parse().ok()).unwrap_or(0);
            for k in 0..n {
                let (Some(a), Some(c)) = (f.get(3 + 2 * k), f.get(4 + 2 * k)) else {
                    return Err(Error::parse(at(i), "truncated M  CHG entry"));
                };
                let (a, c): (usize, i32) = match (a.parse(), c.parse()) {
                    (Ok(a), Ok(c)) => (a, c),
                    _ => return Err(Error::parse(at(i), "malformed M  CHG entry")),
                };
                if a == 0 || a > n_atoms {
                    return Err(Error::parse(at(i), "M  CHG atom index out of range"));
                }
                raw_atoms[a - 1].charge = c;
            }
        }
    }

    let mut properties = BTreeMap::new();
    let mut i = block_end + 1;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with('>') {
            if let (Some(s), Some(e)) = (line.find('<'), line.rfind('>')) {
                if e > s {
                    let name = line[s + 1..e].to_string();
                    let mut value = Vec::new();
                    i += 1;
                    while i < lines.len() && !lines[i].trim().is_empty() {
                        value.push(lines[i]);
                        i += 1;
                    }
                    properties.insert(name, value.join("\n"));
                    continue;
                }
            }
        }
        i += 1;
    }

    // Drop hydrogens and remap bond endpoints onto the heavy-atom indexing.
    let mut remap = vec![usize::MAX; n_atoms];
    let mut atoms = Vec::new();
    for (i, a) in raw_atoms.iter().enumerate() {
        if !a.element.is_hydrogen() {
            remap[i] = atoms.len();
            atoms.push(LigandAtom {
                element: a.element,
                position: a.position,
                formal_charge: a.charge,
                aromatic: false,
            });
        }
    }
    let mut bonds = Vec::new();
    for (a, b, order) in raw_bonds {
        let (i, j) = (remap[a], remap[b]);
        if i == usize::MAX || j == usize::MAX {
            continue;
        }
        if order == BondOrder::Aromatic {
            atoms[i].aromatic = true;
            atoms[j].aromatic = true;
        }
        bonds.push(Bond { i, j, order });
    }
    Ok(SdfRecord {
        molecule: LigandMolecule { id, atoms, bonds },
        properties,
    })
}

/// Parse every `$$$$`-delimited record of a V2000 SDF, keeping data items.
pub fn parse_sdf_records(text: &str) -> Result<Vec<SdfRecord>> {
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, line) in lines.iter().enumerate() {
        if line.starts_with("$$$$") {
            out.push(parse_record(&lines[start..i], start + 1)?);
            start = i + 1;
        }
    }
    if lines[start..].iter().any(|l| !l.trim().is_empty()) {
        out.push(parse_record(&lines[start..], start + 1)?);
    }
    Ok(out)
}

/// Parse a V2000 SDF into heavy-atom molecules, one per record.
pub fn parse_sdf(text: &str) -> Result<Vec<LigandMolecule>> {
    Ok(parse_sdf_records(text)?
        .into_iter()
        .map(|r| r.molecule)
        .collect())
}

/// Read an SDF file. Records with an empty title get `<file stem>_<index>`.
pub fn read_sdf(path: &Path) -> Result<Vec<SdfRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut records = parse_sdf_records(&text)?;
    for (i, r) in records.iter_mut().enumerate() {
        if r.molecule.id.is_empty() {
            r.molecule.id = format!("{stem}_{i}");
        }
    }
    Ok(records)
}

/// Serialize molecules as V2000 records; coordinates carry 4 decimals.
pub fn write_sdf(molecules: &[LigandMolecule]) -> String {
    let mut s = String::new();
    for m in molecules {
        let _ = writeln!(s, "{}", m.id);
        let _ = writeln!(s, "  equicpi          3D");
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000",
            m.atoms.len(),
            m.bonds.len()
        );
        for a in &m.atoms {
            let _ = writeln!(
                s,
                "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
                a.position[0],
                a.position[1],
                a.position[2],
                a.element.symbol()
            );
        }
        for b in &m.bonds {
            let _ = writeln!(
                s,
                "{:>3}{:>3}{:>3}  0",
                b.i + 1,
                b.j + 1,
                b.order.sdf_code()
            );
        }
        let charged: Vec<(usize, i32)> = m
            .atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.formal_charge != 0)
            .map(|(i, a)| (i + 1, a.formal_charge))
            .collect();
        for chunk in charged.chunks(8) {
            let _ = write!(s, "M  CHG{:>3}", chunk.len());
            for (i, c) in chunk {
                let _ = write!(s, " {i:>3} {c:>3}");
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "M  END");
        let _ = writeln!(s, "$$$$");
    }
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const METHANE: &str = "methane
  test

  5  4  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.6291    0.6291    0.6291 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6291   -0.6291    0.6291 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.6291    0.6291   -0.6291 H   0  0  0  0  0  0  0  0  0  0  0  0
    0.6291   -0.6291   -0.6291 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
M  END
$$$$
";

    pub(crate) const ETHANE: &str = "ethane
  test

  8  7  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    0.7600    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
   -0.7600    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.1500    1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.1500   -0.5000    0.8700 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1500   -1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1500    0.5000    0.8700 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.1500    0.5000   -0.8700 H   0  0  0  0  0  0  0  0  0  0  0  0
  2  3  1  0
  1  2  1  0
  2  4  1  0
  2  5  1  0
  3  6  1  0
  3  7  1  0
  3  8  1  0
M  END
> <confidence>
0.42

$$$$
";

    #[test]
    fn methane_strips_hydrogens() {
        let mols = parse_sdf(METHANE).unwrap();
        assert_eq!(mols.len(), 1);
        assert_eq!(mols[0].atoms.len(), 1);
        assert!(mols[0].bonds.is_empty());
        assert_eq!(mols[0].id, "methane");
    }

    #[test]
    fn ethane_remaps_bonds() {
        let recs = parse_sdf_records(ETHANE).unwrap();
        let m = &recs[0].molecule;
        assert_eq!(m.atoms.len(), 2);
        assert_eq!(m.bonds, vec![Bond { i: 0, j: 1, order: BondOrder::Single }]);
        assert_eq!(m.atoms[0].position, [0.76, 0.0, 0.0]);
        assert_eq!(recs[0].properties["confidence"], "0.42");
    }

    #[test]
    fn two_records() {
        let text = format!("{METHANE}{ETHANE}");
        assert_eq!(parse_sdf(&text).unwrap().len(), 2);
    }

    #[test]
    fn count_mismatch_is_error() {
        let text = METHANE.replace("  5  4  0", "  6  4  0");
        assert!(matches!(parse_sdf(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_element_is_error() {
        let text = METHANE.replacen(" C   0", " Qq  0", 1);
        match parse_sdf(&text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 5);
                assert!(msg.contains("Qq"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn aromatic_bonds_flag_atoms_and_charges_apply() {
        let text = "benz
  t

  3  2  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.4000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    2.8000    0.0000    0.0000 N   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  4  0
  2  3  1  0
M  CHG  1   3   1
M  END
$$$$
";
        let m = &parse_sdf(text).unwrap()[0];
        assert!(m.atoms[0].aromatic && m.atoms[1].aromatic && !m.atoms[2].aromatic);
        assert_eq!(m.atoms[2].formal_charge, 1);
        assert_eq!(m.bonds[0].order, BondOrder::Aromatic);
    }

    #[test]
    fn write_then_parse_is_stable() {
        let text = format!("{METHANE}{ETHANE}");
        let mols = parse_sdf(&text).unwrap();
        let once = write_sdf(&mols);
        let again = parse_sdf(&once).unwrap();
        assert_eq!(mols, again);
        assert_eq!(write_sdf(&again), once);
    }
}
