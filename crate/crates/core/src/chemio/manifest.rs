use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{read_pdb, read_sdf, LigandMolecule, ProteinAtoms, ProteinStructure};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// One manifest row with its parsed structures.
#[derive(Debug, Clone)]
pub struct ComplexRecord {
    pub complex_id: String,
    /// First pose of the ligand file.
    pub ligand: LigandMolecule,
    /// Every pose in the ligand file (at least one), for re-ranking.
    pub poses: Vec<LigandMolecule>,
    /// Per-pose upstream confidence read from the SDF `confidence` data item,
    /// when every pose carries one.
    pub pose_confidences: Option<Vec<f64>>,
    pub protein: ProteinStructure,
    pub protein_atoms: ProteinAtoms,
    pub label_ec50_nm: Option<f64>,
    pub upstream_confidence: Option<f64>,
    pub is_active: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct Row {
    complex_id: String,
    ligand_sdf: String,
    protein_pdb: String,
    #[serde(default)]
    ec50_nm: Option<String>,
    #[serde(default)]
    confidence: Option<String>,
    #[serde(default)]
    is_active: Option<String>,
}

fn non_empty(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "active" => Some(true),
        "0" | "false" | "no" | "inactive" | "decoy" => Some(false),
        _ => None,
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_row(base: &Path, rowno: usize, row: &Row) -> Result<ComplexRecord> {
    let ctx = |what: &str| format!("manifest row {rowno} ({}): {what}", row.complex_id);
    let label_ec50_nm = match non_empty(&row.ec50_nm) {
        None => None,
        Some(s) => {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Validation(ctx(&format!("ec50_nm {s:?} is not a number"))))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(ctx(&format!("ec50_nm must be positive, got {s}"))));
            }
            Some(v)
        }
    };
    let upstream_confidence = match non_empty(&row.confidence) {
        None => None,
        Some(s) => {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Validation(ctx(&format!("confidence {s:?} is not a number"))))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(ctx(&format!("confidence must lie in [0,1], got {s}"))));
            }
            Some(v)
        }
    };
    let is_active = match non_empty(&row.is_active) {
        None => None,
        Some(s) => Some(
            parse_bool(s).ok_or_else(|| Error::Validation(ctx(&format!("is_active {s:?} is not boolean"))))?,
        ),
    };

    let lig_path = resolve(base, &row.ligand_sdf);
    let pdb_path = resolve(base, &row.protein_pdb);
    for p in [&lig_path, &pdb_path] {
        if !p.is_file() {
            return Err(Error::Io {
                context: ctx(&format!("cannot open {}", p.display())),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            });
        }
    }
    let records = read_sdf(&lig_path).map_err(|e| wrap(e, &ctx("ligand")))?;
    if records.is_empty() {
        return Err(Error::Validation(ctx("ligand file holds no records")));
    }
    for r in &records {
        if r.molecule.atoms.is_empty() {
            return Err(Error::Validation(ctx("ligand pose has no heavy atoms")));
        }
    }
    let pose_confidences: Option<Vec<f64>> = records
        .iter()
        .map(|r| {
            r.properties
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("confidence"))
                .and_then(|(_, v)| v.trim().parse().ok())
        })
        .collect();
    let (protein, protein_atoms) = read_pdb(&pdb_path).map_err(|e| wrap(e, &ctx("protein")))?;
    let poses: Vec<LigandMolecule> = records.into_iter().map(|r| r.molecule).collect();
    Ok(ComplexRecord {
        complex_id: row.complex_id.clone(),
        ligand: poses[0].clone(),
        poses,
        pose_confidences,
        protein,
        protein_atoms,
        label_ec50_nm,
        upstream_confidence,
        is_active,
    })
}

fn wrap(e: Error, ctx: &str) -> Error {
    match e {
        Error::Io { context, source } => Error::Io {
            context: format!("{ctx}: {context}"),
            source,
        },
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{ctx}: {msg}"),
        },
        Error::EmptyStructure(m) => Error::EmptyStructure(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Load a CSV manifest. Relative file paths resolve against the manifest's
/// directory. Rows are parsed in parallel but returned in file order.
pub fn load_manifest(path: &Path) -> Result<Vec<ComplexRecord>> {
    load_manifest_with(path, Exec::default())
}

pub fn load_manifest_with(path: &Path, exec: Exec) -> Result<Vec<ComplexRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
        .clone();
    for required in ["complex_id", "ligand_sdf", "protein_pdb"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Validation(format!(
                "{}: missing required column {required}",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Validation(format!("manifest row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let indexed: Vec<(usize, &Row)> = rows.iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
    par::map_slice(exec, &indexed, |(n, r)| load_row(base, *n, r))
        .into_iter()
        .collect()
}
