//! Circular (Morgan/ECFP-style) fingerprints, protein k-mer sets, and the
//! Tanimoto/Jaccard similarities used for clustering.
//!
//! Hashing is 64-bit FNV-1a over a fixed little-endian byte encoding so that
//! bit positions are reproducible without a chemistry toolkit:
//!
//! * round 0: `[atomic_number: u8][heavy_degree: u32][formal_charge: i32][aromatic: u8]`
//! * round r: `[r: u32][own_code: u64]` followed by `[bond_code: u8][neighbor_code: u64]`
//!   for every neighbor, sorted ascending by `(bond_code, neighbor_code)`
//!
//! Atoms without neighbors keep their code across rounds. Every code of every
//! round sets bit `code % nbits`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chemio::LigandMolecule;
use crate::{Error, Result};

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_NBITS: usize = 2048;
pub const DEFAULT_KMER: usize = 3;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Fixed-width binary fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn zeros(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_bits(nbits: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Fingerprint::zeros(nbits, 0);
        for b in bits {
            fp.set(b % nbits);
        }
        fp
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }

    /// Dense 0/1 vector of length `nbits`.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.nbits).map(|b| if self.get(b) { 1.0 } else { 0.0 }).collect()
    }

    /// Lower-case hex of the bitset; byte `k` holds bits `8k..8k+8`, bit `i`
    /// at mask `1 << (i % 8)`.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.nbits.div_ceil(8) * 2);
        for k in 0..self.nbits.div_ceil(8) {
            let byte = (self.words[k / 8] >> ((k % 8) * 8)) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }
}

fn atom_invariant(element: u8, degree: usize, charge: i32, aromatic: bool) -> u64 {
    let mut buf = Vec::with_capacity(10);
    buf.push(element);
    buf.extend_from_slice(&(degree as u32).to_le_bytes());
    buf.extend_from_slice(&charge.to_le_bytes());
    buf.push(aromatic as u8);
    fnv1a64(&buf)
}

/// Circular fingerprint with the given radius and width.
pub fn morgan_fingerprint(mol: &LigandMolecule, radius: usize, nbits: usize) -> Result<Fingerprint> {
    if nbits == 0 {
        return Err(Error::Argument("fingerprint width must be positive".into()));
    }
    if mol.atoms.is_empty() {
        return Err(Error::Argument(format!("molecule {:?} has no atoms", mol.id)));
    }
    let adj = mol.adjacency();
    let mut codes: Vec<u64> = mol
        .atoms
        .iter()
        .zip(&adj)
        .map(|(a, nb)| atom_invariant(a.element.atomic_number(), nb.len(), a.formal_charge, a.aromatic))
        .collect();
    let mut fp = Fingerprint::zeros(nbits, radius);
    for &c in &codes {
        fp.set((c % nbits as u64) as usize);
    }
    for round in 1..=radius {
        let next: Vec<u64> = codes
            .iter()
            .zip(&adj)
            .map(|(&own, nb)| {
                if nb.is_empty() {
                    return own;
                }
                let mut env: Vec<(u8, u64)> = nb.iter().map(|&(j, o)| (o.sdf_code(), codes[j])).collect();
                env.sort_unstable();
                let mut buf = Vec::with_capacity(12 + 9 * env.len());
                buf.extend_from_slice(&(round as u32).to_le_bytes());
                buf.extend_from_slice(&own.to_le_bytes());
                for (o, c) in env {
                    buf.push(o);
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                fnv1a64(&buf)
            })
            .collect();
        for &c in &next {
            fp.set((c % nbits as u64) as usize);
        }
        codes = next;
    }
    Ok(fp)
}

/// `|a ∧ b| / |a ∨ b|`; 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.nbits != b.nbits {
        return Err(Error::Argument(format!(
            "fingerprint widths differ ({} vs {})",
            a.nbits, b.nbits
        )));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

const AA_ALPHABET: &str = "ARNDCQEGHILKMFPSTWYVX";

/// Set of length-`k` substrings of a protein sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmerSet {
    kmers: BTreeSet<String>,
    k: usize,
}

impl KmerSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.kmers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kmers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.kmers.iter().map(String::as_str)
    }

    pub fn contains(&self, kmer: &str) -> bool {
        self.kmers.contains(kmer)
    }
}

/// Sliding-window k-mers over the 21-letter alphabet (`X` for unknown).
pub fn protein_kmer_set(sequence: &str, k: usize) -> Result<KmerSet> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let seq: Vec<char> = sequence.trim().chars().map(|c| c.to_ascii_uppercase()).collect();
    if let Some(bad) = seq.iter().find(|c| !AA_ALPHABET.contains(**c)) {
        return Err(Error::Argument(format!("invalid amino-acid letter {bad:?}")));
    }
    if seq.len() < k {
        return Err(Error::Argument(format!(
            "sequence of length {} is shorter than k = {k}",
            seq.len()
        )));
    }
    let kmers = seq.windows(k).map(|w| w.iter().collect()).collect();
    Ok(KmerSet { kmers, k })
}

/// `|a ∩ b| / |a ∪ b|`; 1.0 when both are empty.
pub fn jaccard(a: &KmerSet, b: &KmerSet) -> f64 {
    let inter = a.kmers.intersection(&b.kmers).count();
    let union = a.kmers.len() + b.kmers.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
