//! Label normalization and cluster-disjoint cross-validation splits.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chemio::ComplexRecord;
use crate::fingerprint::{
    jaccard, morgan_fingerprint, protein_kmer_set, tanimoto, Fingerprint, KmerSet, DEFAULT_KMER, DEFAULT_NBITS,
    DEFAULT_RADIUS,
};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// `log10(ec50_nm · 1e-9)`, the log-molar potency.
pub fn normalize_label(ec50_nm: f64) -> Result<f64> {
    if !(ec50_nm > 0.0 && ec50_nm.is_finite()) {
        return Err(Error::Argument(format!(
            "EC50 must be positive and finite, got {ec50_nm}"
        )));
    }
    Ok((ec50_nm * 1e-9).log10())
}

/// Inverse of [`normalize_label`].
pub fn denormalize_label(p: f64) -> f64 {
    10f64.powf(p + 9.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    /// Cluster distance is the largest member distance.
    Complete,
    /// Cluster distance is the smallest member distance. Every pair at or
    /// above the similarity threshold ends up in one cluster.
    Single,
}

/// Complete-linkage agglomerative clustering on `1 - similarity`.
pub fn hierarchical_cluster<T: Sync>(
    items: &[T],
    similarity: impl Fn(&T, &T) -> f64 + Sync,
    threshold: f64,
) -> Result<Vec<usize>> {
    cluster_with(items, similarity, threshold, Linkage::Complete, Exec::default())
}

/// Agglomerative clustering. Clusters merge while their linkage distance is
/// at most `1 - threshold`; among equally close pairs the one with the
/// smallest member indices merges first. Cluster ids are numbered by their
/// smallest member.
pub fn cluster_with<T: Sync>(
    items: &[T],
    similarity: impl Fn(&T, &T) -> f64 + Sync,
    threshold: f64,
    linkage: Linkage,
    exec: Exec,
) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let rows = par::map_range(exec, n, |i| {
        (0..n)
            .map(|j| if i == j { 0.0 } else { 1.0 - similarity(&items[i], &items[j]) })
            .collect::<Vec<f64>>()
    });
    let limit = 1.0 - threshold;
    let mut d: Vec<f64> = rows.concat();
    if d.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("similarity returned NaN".into()));
    }
    // `rep[c]` is the smallest member of the cluster stored at slot c; slots
    // are item indices and a merged cluster lives at its smaller slot.
    let mut active = vec![true; n];
    let mut label: Vec<usize> = (0..n).collect();
    let nearest = |d: &[f64], active: &[bool], i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if j != i && active[j] {
                let v = d[i * n + j];
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, j));
                }
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|i| nearest(&d, &active, i)).collect();
    loop {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((v, j)) = nn[i] {
                let (a, b) = (i.min(j), i.max(j));
                let better = match pick {
                    None => true,
                    Some((pv, pa, pb)) => v < pv || (v == pv && (a, b) < (pa, pb)),
                };
                if better {
                    pick = Some((v, a, b));
                }
            }
        }
        let Some((v, a, b)) = pick else { break };
        if v > limit {
            break;
        }
        active[b] = false;
        for l in label.iter_mut() {
            if *l == b {
                *l = a;
            }
        }
        for k in 0..n {
            if k == a || !active[k] {
                continue;
            }
            let (da, db) = (d[a * n + k], d[b * n + k]);
            let merged = match linkage {
                Linkage::Complete => da.max(db),
                Linkage::Single => da.min(db),
            };
            d[a * n + k] = merged;
            d[k * n + a] = merged;
        }
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let stale = i == a || matches!(nn[i], Some((_, j)) if j == a || j == b);
            let improved = i != a && d[i * n + a] < nn[i].map_or(f64::INFINITY, |x| x.0);
            if stale {
                nn[i] = nearest(&d, &active, i);
            } else if improved {
                nn[i] = Some((d[i * n + a], a));
            } else if let Some((bv, bj)) = nn[i] {
                // Equal distance to `a` with a smaller index keeps the scan's
                // first-minimum convention.
                if i != a && d[i * n + a] == bv && a < bj {
                    nn[i] = Some((bv, a));
                }
            }
        }
    }
    Ok(renumber(&label))
}

/// Relabel so cluster ids count up in order of first appearance.
fn renumber(label: &[usize]) -> Vec<usize> {
    let mut map = HashMap::new();
    label
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitSetting {
    NovelPair,
    NovelCompound,
    NovelProtein,
}

impl std::str::FromStr for SplitSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "novel_pair" => Ok(SplitSetting::NovelPair),
            "novel_compound" => Ok(SplitSetting::NovelCompound),
            "novel_protein" => Ok(SplitSetting::NovelProtein),
            _ => Err(Error::Argument(format!(
                "unknown split setting {s:?} (novel_pair, novel_compound, novel_protein)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub folds: usize,
    /// Tanimoto similarity at which compounds are grouped.
    pub compound_threshold: f64,
    /// k-mer Jaccard similarity at which proteins are grouped.
    pub protein_threshold: f64,
    pub linkage: Linkage,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            folds: 5,
            compound_threshold: 0.4,
            protein_threshold: 0.5,
            linkage: Linkage::Single,
            seed: 0,
        }
    }
}

/// What the splitter needs to know about one record.
#[derive(Debug, Clone)]
pub struct SplitRecord {
    pub id: String,
    pub compound: Fingerprint,
    pub protein: KmerSet,
}

impl SplitRecord {
    pub fn from_complex(r: &ComplexRecord) -> Result<Self> {
        Ok(SplitRecord {
            id: r.complex_id.clone(),
            compound: morgan_fingerprint(&r.ligand, DEFAULT_RADIUS, DEFAULT_NBITS)?,
            protein: protein_kmer_set(&r.protein.sequence(), DEFAULT_KMER)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub setting: SplitSetting,
    /// Record ids per fold, in input order.
    pub folds: Vec<Vec<String>>,
    pub compound_cluster_of: BTreeMap<String, usize>,
    pub protein_cluster_of: BTreeMap<String, usize>,
    pub fold_sizes: Vec<usize>,
    /// Largest fold size over the ideal `n / k`.
    pub balance: f64,
    pub warnings: Vec<String>,
}

impl FoldAssignment {
    pub fn fold_of(&self) -> BTreeMap<&str, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |id| (id.as_str(), f)))
            .collect()
    }
}

/// Cluster ids for unique values, mapped back onto records.
fn cluster_unique<K: Eq + std::hash::Hash + Clone, T: Sync + Clone>(
    keys: &[K],
    values: &[T],
    sim: impl Fn(&T, &T) -> f64 + Sync,
    threshold: f64,
    linkage: Linkage,
    exec: Exec,
) -> Result<Vec<usize>> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut uniq: Vec<T> = Vec::new();
    let slot: Vec<usize> = keys
        .iter()
        .zip(values)
        .map(|(k, v)| {
            *index.entry(k.clone()).or_insert_with(|| {
                uniq.push(v.clone());
                uniq.len() - 1
            })
        })
        .collect();
    let c = cluster_with(&uniq, sim, threshold, linkage, exec)?;
    Ok(slot.into_iter().map(|s| c[s]).collect())
}

/// Greedy placement: clusters by size descending (seeded order among equal
/// sizes) into the currently smallest fold, lowest fold index on ties.
/// Returns the fold of every record.
pub fn assign_clusters_to_folds(cluster_of: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let n_clusters = cluster_of.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_clusters];
    for &c in cluster_of {
        sizes[c] += 1;
    }
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|a, b| sizes[*b].cmp(&sizes[*a]));
    let mut fold_size = vec![0usize; k];
    let mut fold_of_cluster = vec![0usize; n_clusters];
    for c in order {
        let f = (0..k).min_by_key(|&f| (fold_size[f], f)).expect("k >= 1");
        fold_of_cluster[c] = f;
        fold_size[f] += sizes[c];
    }
    cluster_of.iter().map(|&c| fold_of_cluster[c]).collect()
}

/// Move every cluster that spans folds to the fold holding most of its
/// records (lowest fold on ties). Returns whether anything moved.
fn consolidate(fold: &mut [usize], cluster_of: &[usize], k: usize) -> bool {
    let n_clusters = cluster_of.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; k]; n_clusters];
    for (i, &c) in cluster_of.iter().enumerate() {
        counts[c][fold[i]] += 1;
    }
    let target: Vec<usize> = counts
        .iter()
        .map(|row| (0..k).max_by_key(|&f| (row[f], std::cmp::Reverse(f))).unwrap_or(0))
        .collect();
    let mut moved = false;
    for (i, &c) in cluster_of.iter().enumerate() {
        if fold[i] != target[c] {
            fold[i] = target[c];
            moved = true;
        }
    }
    moved
}

fn spans(fold: &[usize], cluster_of: &[usize]) -> bool {
    let mut seen: HashMap<usize, usize> = HashMap::new();
    cluster_of
        .iter()
        .zip(fold)
        .any(|(c, f)| *seen.entry(*c).or_insert(*f) != *f)
}

/// Connected components of the union of two clusterings.
fn joint_components(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for labels in [a, b] {
        let mut first: HashMap<usize, usize> = HashMap::new();
        for (i, &c) in labels.iter().enumerate() {
            let r = *first.entry(c).or_insert(i);
            let (x, y) = (find(&mut parent, i), find(&mut parent, r));
            if x != y {
                parent[x.max(y)] = x.min(y);
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    renumber(&roots)
}

pub fn assign_folds(records: &[SplitRecord], setting: SplitSetting, cfg: &SplitConfig) -> Result<FoldAssignment> {
    assign_folds_with(records, setting, cfg, Exec::default())
}

pub fn assign_folds_with(
    records: &[SplitRecord],
    setting: SplitSetting,
    cfg: &SplitConfig,
    exec: Exec,
) -> Result<FoldAssignment> {
    let k = cfg.folds;
    if k == 0 {
        return Err(Error::Argument("need at least one fold".into()));
    }
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = records.iter().find(|r| !ids.insert(r.id.as_str())) {
        return Err(Error::Validation(format!("duplicate record id {:?}", dup.id)));
    }
    let n = records.len();
    let ckeys: Vec<String> = records.iter().map(|r| r.compound.to_hex()).collect();
    let cvals: Vec<Fingerprint> = records.iter().map(|r| r.compound.clone()).collect();
    let compound = cluster_unique(
        &ckeys,
        &cvals,
        |a, b| tanimoto(a, b).unwrap_or(0.0),
        cfg.compound_threshold,
        cfg.linkage,
        exec,
    )?;
    let pkeys: Vec<Vec<String>> = records.iter().map(|r| r.protein.iter().map(str::to_owned).collect()).collect();
    let pvals: Vec<KmerSet> = records.iter().map(|r| r.protein.clone()).collect();
    let protein = cluster_unique(&pkeys, &pvals, jaccard, cfg.protein_threshold, cfg.linkage, exec)?;

    let mut warnings = Vec::new();
    let fold = match setting {
        SplitSetting::NovelCompound => assign_clusters_to_folds(&compound, k, cfg.seed),
        SplitSetting::NovelProtein => assign_clusters_to_folds(&protein, k, cfg.seed),
        SplitSetting::NovelPair => {
            let mut fold = assign_clusters_to_folds(&compound, k, cfg.seed);
            let mut settled = false;
            for _ in 0..100 {
                let a = consolidate(&mut fold, &protein, k);
                let b = consolidate(&mut fold, &compound, k);
                if !a && !b {
                    settled = true;
                    break;
                }
            }
            if !settled || spans(&fold, &compound) || spans(&fold, &protein) {
                warnings.push("majority reassignment did not settle; grouping by joint compound-protein components".into());
                fold = assign_clusters_to_folds(&joint_components(&compound, &protein), k, cfg.seed);
            }
            fold
        }
    };

    let mut folds = vec![Vec::new(); k];
    for (r, &f) in records.iter().zip(&fold) {
        folds[f].push(r.id.clone());
    }
    let fold_sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    let cap = n.div_ceil(k) * 2;
    let groups = match setting {
        SplitSetting::NovelCompound => vec![("compound", &compound)],
        SplitSetting::NovelProtein => vec![("protein", &protein)],
        SplitSetting::NovelPair => vec![("compound", &compound), ("protein", &protein)],
    };
    for (what, labels) in groups {
        let mut size: BTreeMap<usize, usize> = BTreeMap::new();
        for &c in labels.iter() {
            *size.entry(c).or_default() += 1;
        }
        for (c, s) in size {
            if s > cap {
                warnings.push(format!("{what} cluster {c} has {s} records (more than {cap}); folds will be unbalanced"));
            }
        }
    }
    let ideal = n as f64 / k as f64;
    let balance = if n == 0 {
        1.0
    } else {
        *fold_sizes.iter().max().unwrap_or(&0) as f64 / ideal
    };
    let map = |labels: &[usize]| {
        records
            .iter()
            .zip(labels)
            .map(|(r, &c)| (r.id.clone(), c))
            .collect()
    };
    Ok(FoldAssignment {
        setting,
        folds,
        compound_cluster_of: map(&compound),
        protein_cluster_of: map(&protein),
        fold_sizes,
        balance,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPairLeak {
    pub fold_a: usize,
    pub fold_b: usize,
    pub max_compound_tanimoto: f64,
    pub max_protein_jaccard: f64,
    /// Cross-fold record pairs whose compound similarity is at or above the
    /// threshold.
    pub compound_violations: usize,
    pub protein_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub setting: SplitSetting,
    pub compound_threshold: f64,
    pub protein_threshold: f64,
    pub pairs: Vec<FoldPairLeak>,
    pub pass: bool,
}

/// Maximum cross-fold similarities for every fold pair, by exhaustive scan.
///
/// A split passes when no cross-fold pair reaches the threshold of any
/// modality the setting constrains.
pub fn leakage_report(
    assignment: &FoldAssignment,
    records: &[SplitRecord],
    cfg: &SplitConfig,
    exec: Exec,
) -> Result<LeakageReport> {
    let fold_map = assignment.fold_of();
    let fold: Vec<usize> = records
        .iter()
        .map(|r| {
            fold_map
                .get(r.id.as_str())
                .copied()
                .ok_or_else(|| Error::Validation(format!("record {:?} is not in any fold", r.id)))
        })
        .collect::<Result<_>>()?;
    let k = assignment.folds.len();
    let n = records.len();
    // Per row i: for every later j in another fold, fold-pair maxima and counts.
    let rows = par::map_range(exec, n, |i| {
        let mut acc: BTreeMap<(usize, usize), (f64, f64, usize, usize)> = BTreeMap::new();
        for j in i + 1..n {
            if fold[i] == fold[j] {
                continue;
            }
            let t = tanimoto(&records[i].compound, &records[j].compound).unwrap_or(0.0);
            let p = jaccard(&records[i].protein, &records[j].protein);
            let key = (fold[i].min(fold[j]), fold[i].max(fold[j]));
            let e = acc.entry(key).or_insert((0.0, 0.0, 0, 0));
            e.0 = e.0.max(t);
            e.1 = e.1.max(p);
            e.2 += usize::from(t >= cfg.compound_threshold);
            e.3 += usize::from(p >= cfg.protein_threshold);
        }
        acc
    });
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let mut leak = FoldPairLeak {
                fold_a: a,
                fold_b: b,
                max_compound_tanimoto: 0.0,
                max_protein_jaccard: 0.0,
                compound_violations: 0,
                protein_violations: 0,
            };
            for row in &rows {
                if let Some(&(t, p, ct, pt)) = row.get(&(a, b)) {
                    leak.max_compound_tanimoto = leak.max_compound_tanimoto.max(t);
                    leak.max_protein_jaccard = leak.max_protein_jaccard.max(p);
                    leak.compound_violations += ct;
                    leak.protein_violations += pt;
                }
            }
            pairs.push(leak);
        }
    }
    let check_c = matches!(assignment.setting, SplitSetting::NovelCompound | SplitSetting::NovelPair);
    let check_p = matches!(assignment.setting, SplitSetting::NovelProtein | SplitSetting::NovelPair);
    let pass = pairs
        .iter()
        .all(|p| (!check_c || p.compound_violations == 0) && (!check_p || p.protein_violations == 0));
    Ok(LeakageReport {
        setting: assignment.setting,
        compound_threshold: cfg.compound_threshold,
        protein_threshold: cfg.protein_threshold,
        pairs,
        pass,
    })
}
