//! Regression and virtual-screening metrics, plus the random-ranking
//! baseline for enrichment metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::{map_range, Exec};
use crate::{Error, Result};

pub const DEFAULT_BEDROC_ALPHA: f64 = 80.5;

fn check_pair(preds: &[f64], labels: &[f64], min: usize) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.len() < min {
        return Err(Error::Undefined(format!("need at least {min} values, got {}", preds.len())));
    }
    if preds.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::Argument("values must be finite".into()));
    }
    Ok(())
}

/// Fenwick tree over compressed ranks, counting inserted values.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted values with rank < i.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

fn dense_ranks(v: &[f64]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let r = v
        .iter()
        .map(|x| sorted.partition_point(|s| s < x))
        .collect();
    (r, sorted.len())
}

/// Fraction of comparable pairs (different labels) whose predictions are
/// ordered like the labels; tied predictions count one half. O(n log n).
pub fn concordance_index(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels, 2)?;
    let n = preds.len();
    let (pr, np) = dense_ranks(preds);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[a].total_cmp(&labels[b]));
    let mut tree = Fenwick::new(np);
    let (mut concordant, mut ties, mut comparable) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && labels[order[end]] == labels[order[start]] {
            end += 1;
        }
        // every earlier item has a strictly smaller label
        for &i in &order[start..end] {
            let below = tree.prefix(pr[i]);
            let upto = tree.prefix(pr[i] + 1);
            concordant += below;
            ties += upto - below;
            comparable += inserted;
        }
        for &i in &order[start..end] {
            tree.add(pr[i]);
            inserted += 1;
        }
        start = end;
    }
    if comparable == 0 {
        return Err(Error::Undefined("all labels are equal".into()));
    }
    Ok((concordant as f64 + 0.5 * ties as f64) / comparable as f64)
}

/// Product-moment correlation.
pub fn pearson(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels, 2)?;
    let n = preds.len() as f64;
    let mx = preds.iter().sum::<f64>() / n;
    let my = labels.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in preds.iter().zip(labels) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks in ascending order; tied values share their mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels, 2)?;
    pearson(&average_ranks(preds), &average_ranks(labels))
}

pub fn mse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair(preds, labels, 1)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).powi(2))
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub id: String,
    /// Higher means more likely active.
    pub score: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub entries: Vec<ScreenEntry>,
}

impl ScreenResult {
    pub fn new(entries: Vec<ScreenEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Argument("screen result is empty".into()));
        }
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Argument(format!("non-finite score for {:?}", e.id)));
        }
        Ok(ScreenResult { entries })
    }

    pub fn from_scores(scores: &[f64], active: &[bool]) -> Result<Self> {
        if scores.len() != active.len() {
            return Err(Error::Argument("scores and labels differ in length".into()));
        }
        ScreenResult::new(
            scores
                .iter()
                .zip(active)
                .enumerate()
                .map(|(i, (&score, &active))| ScreenEntry {
                    id: i.to_string(),
                    score,
                    active,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_actives(&self) -> usize {
        self.entries.iter().filter(|e| e.active).count()
    }

    /// 1-based ranks of the actives, best first; equal scores keep input
    /// order.
    pub fn active_ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| self.entries[b].score.total_cmp(&self.entries[a].score));
        order
            .iter()
            .enumerate()
            .filter(|&(_, &i)| self.entries[i].active)
            .map(|(r, _)| r + 1)
            .collect()
    }
}

/// Number of entries in the top `x_percent` (rounded up).
pub fn top_count(n: usize, x_percent: f64) -> usize {
    // guard against 100 * 1% style rounding pushing m one over
    ((n as f64 * x_percent / 100.0) - 1e-9).ceil().max(1.0) as usize
}

fn ef_from_ranks(ranks: &[usize], n: usize, x_percent: f64) -> f64 {
    let m = top_count(n, x_percent).min(n);
    let hits = ranks.iter().filter(|&&r| r <= m).count();
    (hits as f64 / m as f64) / (ranks.len() as f64 / n as f64)
}

pub fn enrichment_factor(result: &ScreenResult, x_percent: f64) -> Result<f64> {
    if !(x_percent > 0.0 && x_percent <= 100.0) {
        return Err(Error::Argument(format!("x_percent {x_percent} not in (0, 100]")));
    }
    let ranks = result.active_ranks();
    if ranks.is_empty() {
        return Err(Error::Undefined("no actives".into()));
    }
    Ok(ef_from_ranks(&ranks, result.len(), x_percent))
}

fn bedroc_from_ranks(ranks: &[usize], n_total: usize, alpha: f64) -> f64 {
    let n = ranks.len() as f64;
    let big_n = n_total as f64;
    let ra = n / big_n;
    let sum: f64 = ranks.iter().map(|&r| (-alpha * r as f64 / big_n).exp()).sum();
    let rie = sum / (ra * (-(-alpha).exp_m1()) / (alpha / big_n).exp_m1());
    let half = alpha / 2.0;
    let factor = ra * half.sinh() / (half.cosh() - (half - alpha * ra).cosh());
    let constant = 1.0 / (1.0 - (alpha * (1.0 - ra)).exp());
    rie * factor + constant
}

/// Exponentially weighted early-recognition score in [0, 1].
pub fn bedroc(result: &ScreenResult, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Argument(format!("alpha {alpha} must be positive")));
    }
    let ranks = result.active_ranks();
    if ranks.is_empty() || ranks.len() == result.len() {
        return Err(Error::Undefined("BEDROC needs both actives and inactives".into()));
    }
    Ok(bedroc_from_ranks(&ranks, result.len(), alpha))
}

/// Screening composition and trial settings for the random-ranking baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub actives: usize,
    pub decoys: usize,
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub ef_percent: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            actives: 1759,
            decoys: 107_590,
            trials: 200,
            seed: 0,
            alpha: DEFAULT_BEDROC_ALPHA,
            ef_percent: 1.0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.actives == 0 || self.decoys == 0 {
            return Err(Error::Config("need at least one active and one decoy".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.ef_percent > 0.0 && self.ef_percent <= 100.0) {
            return Err(Error::Config("ef_percent must be in (0, 100]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub bedroc: MeanStd,
    pub ef: MeanStd,
    pub trial_bedroc: Vec<f64>,
    pub trial_ef: Vec<f64>,
}

/// One random ranking: the 1-based positions of the actives.
fn random_active_ranks(actives: usize, total: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, total, actives)
        .into_iter()
        .map(|i| i + 1)
        .collect()
}

/// Monte-Carlo EF and BEDROC of uniformly random rankings. Trial `t` is
/// seeded with `seed + t`, so results do not depend on thread count.
pub fn simulate_screen(cfg: &SimulationConfig, exec: Exec) -> Result<SimulationReport> {
    cfg.validate()?;
    let total = cfg.actives + cfg.decoys;
    let trials = map_range(exec, cfg.trials, |t| {
        let ranks = random_active_ranks(cfg.actives, total, cfg.seed.wrapping_add(t as u64));
        (
            bedroc_from_ranks(&ranks, total, cfg.alpha),
            ef_from_ranks(&ranks, total, cfg.ef_percent),
        )
    });
    let trial_bedroc: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let trial_ef: Vec<f64> = trials.iter().map(|t| t.1).collect();
    Ok(SimulationReport {
        config: cfg.clone(),
        bedroc: MeanStd::of(&trial_bedroc),
        ef: MeanStd::of(&trial_ef),
        trial_bedroc,
        trial_ef,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetComposition {
    pub name: String,
    pub actives: usize,
    pub decoys: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTargetReport {
    pub targets: Vec<(String, SimulationReport)>,
    /// Spread of the per-target means.
    pub bedroc: MeanStd,
    pub ef: MeanStd,
}

/// Random baseline per target, then mean and spread across targets. Target
/// `k` uses root seed `seed + k * trials`.
pub fn simulate_screen_per_target(
    targets: &[TargetComposition],
    base: &SimulationConfig,
    exec: Exec,
) -> Result<PerTargetReport> {
    if targets.is_empty() {
        return Err(Error::Config("no targets given".into()));
    }
    let mut out = Vec::with_capacity(targets.len());
    for (k, t) in targets.iter().enumerate() {
        let cfg = SimulationConfig {
            actives: t.actives,
            decoys: t.decoys,
            seed: base.seed.wrapping_add((k * base.trials) as u64),
            ..base.clone()
        };
        out.push((t.name.clone(), simulate_screen(&cfg, exec)?));
    }
    let b: Vec<f64> = out.iter().map(|(_, r)| r.bedroc.mean).collect();
    let e: Vec<f64> = out.iter().map(|(_, r)| r.ef.mean).collect();
    Ok(PerTargetReport {
        bedroc: MeanStd::of(&b),
        ef: MeanStd::of(&e),
        targets: out,
    })
}

/// A metric that [`evaluate`] can compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Ci,
    Spearman,
    Pearson,
    Mse,
    Ef(f64),
    Bedroc(f64),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ci => write!(f, "ci"),
            Metric::Spearman => write!(f, "spearman"),
            Metric::Pearson => write!(f, "pearson"),
            Metric::Mse => write!(f, "mse"),
            Metric::Ef(x) => write!(f, "ef{x}"),
            Metric::Bedroc(a) => write!(f, "bedroc{a}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let num = |rest: &str, default: f64| -> Result<f64> {
            if rest.is_empty() {
                return Ok(default);
            }
            rest.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::Argument(format!("bad metric parameter in {s:?}")))
        };
        match s.as_str() {
            "ci" => Ok(Metric::Ci),
            "spearman" => Ok(Metric::Spearman),
            "pearson" => Ok(Metric::Pearson),
            "mse" => Ok(Metric::Mse),
            _ => {
                if let Some(rest) = s.strip_prefix("bedroc") {
                    Ok(Metric::Bedroc(num(rest, DEFAULT_BEDROC_ALPHA)?))
                } else if let Some(rest) = s.strip_prefix("ef") {
                    let x = num(rest, 1.0)?;
                    if x > 100.0 {
                        return Err(Error::Argument(format!("EF percentage {x} above 100")));
                    }
                    Ok(Metric::Ef(x))
                } else {
                    Err(Error::Argument(format!("unknown metric {s:?}")))
                }
            }
        }
    }
}

/// Parse a comma-separated metric list; blanks are skipped.
pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Which end of the prediction scale marks likely actives for EF and
/// BEDROC. Predicted log10 EC50 values are `LowerIsActive`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    #[default]
    HigherIsActive,
    LowerIsActive,
}

/// One scored item for [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prediction: f64,
    pub label: Option<f64>,
    pub active: Option<bool>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mse: Option<f64>,
    /// Keyed by the percentage, e.g. `"1"`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub ef: BTreeMap<String, f64>,
    /// Keyed by alpha, e.g. `"80.5"`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub bedroc: BTreeMap<String, f64>,
    /// Requested metrics that could not be computed, with the reason.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub omitted: BTreeMap<String, String>,
}

/// Compute the requested metrics. Regression metrics use records with a
/// label, screening metrics records with an activity flag; undefined
/// metrics are listed in `omitted` rather than failing.
pub fn evaluate(records: &[EvalRecord], metrics: &[Metric], direction: ScoreDirection) -> MetricReport {
    let mut report = MetricReport {
        n: records.len(),
        ..Default::default()
    };
    let (preds, labels): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| r.label.map(|y| (r.prediction, y)))
        .unzip();
    let screen: Vec<ScreenEntry> = records
        .iter()
        .filter_map(|r| {
            r.active.map(|a| ScreenEntry {
                id: r.id.clone(),
                score: match direction {
                    ScoreDirection::HigherIsActive => r.prediction,
                    ScoreDirection::LowerIsActive => -r.prediction,
                },
                active: a,
            })
        })
        .collect();
    let screen = ScreenResult::new(screen);
    for m in metrics {
        let value = match m {
            Metric::Ci | Metric::Spearman | Metric::Pearson | Metric::Mse if preds.is_empty() => {
                Err(Error::Undefined("no labeled records".into()))
            }
            Metric::Ci => concordance_index(&preds, &labels),
            Metric::Spearman => spearman(&preds, &labels),
            Metric::Pearson => pearson(&preds, &labels),
            Metric::Mse => mse(&preds, &labels),
            Metric::Ef(x) => match &screen {
                Ok(s) => enrichment_factor(s, *x),
                Err(_) => Err(Error::Undefined("no activity labels".into())),
            },
            Metric::Bedroc(a) => match &screen {
                Ok(s) => bedroc(s, *a),
                Err(_) => Err(Error::Undefined("no activity labels".into())),
            },
        };
        match value {
            Ok(v) => match m {
                Metric::Ci => report.ci = Some(v),
                Metric::Spearman => report.spearman = Some(v),
                Metric::Pearson => report.pearson = Some(v),
                Metric::Mse => report.mse = Some(v),
                Metric::Ef(x) => {
                    report.ef.insert(x.to_string(), v);
                }
                Metric::Bedroc(a) => {
                    report.bedroc.insert(a.to_string(), v);
                }
            },
            Err(e) => {
                report.omitted.insert(m.to_string(), e.to_string());
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub overall: MetricReport,
    pub groups: BTreeMap<String, MetricReport>,
    /// Mean and spread of each metric over the groups where it is defined.
    pub group_summary: BTreeMap<String, MeanStd>,
}

/// Evaluate overall and per group; records without a group are only counted
/// in the overall report.
pub fn evaluate_grouped(records: &[EvalRecord], metrics: &[Metric], direction: ScoreDirection) -> GroupedReport {
    let mut by_group: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        if let Some(g) = &r.group {
            by_group.entry(g.clone()).or_default().push(r.clone());
        }
    }
    let groups: BTreeMap<String, MetricReport> = by_group
        .iter()
        .map(|(g, rs)| (g.clone(), evaluate(rs, metrics, direction)))
        .collect();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rep in groups.values() {
        for (k, v) in report_values(rep) {
            values.entry(k).or_default().push(v);
        }
    }
    GroupedReport {
        overall: evaluate(records, metrics, direction),
        groups,
        group_summary: values.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect(),
    }
}

fn report_values(r: &MetricReport) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (k, v) in [("ci", r.ci), ("spearman", r.spearman), ("pearson", r.pearson), ("mse", r.mse)] {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    }
    out.extend(r.ef.iter().map(|(k, v)| (format!("ef{k}"), *v)));
    out.extend(r.bedroc.iter().map(|(k, v)| (format!("bedroc{k}"), *v)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ci_examples() {
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(concordance_index(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let c = concordance_index(&[1.0, 3.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(concordance_index(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::Undefined(_))
        ));
        assert!(concordance_index(&[1.0], &[1.0]).is_err());
    }

    fn brute_ci(p: &[f64], y: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] < y[j] {
                    den += 1.0;
                    if p[i] < p[j] {
                        num += 1.0;
                    } else if p[i] == p[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn ci_matches_pair_scan_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(2..60);
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
            if y.iter().all(|v| *v == y[0]) {
                continue;
            }
            let a = concordance_index(&p, &y).unwrap();
            assert!((a - brute_ci(&p, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mse(&y, &y).unwrap(), 0.0);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        // ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): cov 4.5/4, var 4.5/4 and 5/4
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let s = spearman(&[1.0, 2.0, 2.0, 4.0], &y).unwrap();
        assert!((s - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-14);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert_eq!(mse(&[1.0, 3.0], &[2.0, 1.0]).unwrap(), 2.5);
    }

    #[test]
    fn ef_examples() {
        let n = 10000;
        let active: Vec<bool> = (0..n).map(|i| i < 50).collect();
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let r = ScreenResult::from_scores(&scores, &active).unwrap();
        assert!((enrichment_factor(&r, 1.0).unwrap() - 100.0).abs() < 1e-9);

        let all = ScreenResult::from_scores(&[3.0, 2.0, 1.0], &[true; 3]).unwrap();
        for x in [1.0, 33.0, 50.0, 100.0] {
            assert!((enrichment_factor(&all, x).unwrap() - 1.0).abs() < 1e-12);
        }

        let inter: Vec<bool> = (0..1000).map(|i| i % 10 == 0).collect();
        let sc: Vec<f64> = (0..1000).map(|i| -(i as f64)).collect();
        let r = ScreenResult::from_scores(&sc, &inter).unwrap();
        assert!((enrichment_factor(&r, 10.0).unwrap() - 1.0).abs() < 1e-12);

        let none = ScreenResult::from_scores(&[1.0, 2.0], &[false, false]).unwrap();
        assert!(matches!(enrichment_factor(&none, 1.0), Err(Error::Undefined(_))));
        assert!(enrichment_factor(&r, 0.0).is_err());
        assert_eq!(top_count(100, 1.0), 1);
        assert_eq!(top_count(101, 1.0), 2);
        assert_eq!(top_count(5, 1.0), 1);
    }

    #[test]
    fn ties_keep_input_order() {
        let r = ScreenResult::from_scores(&[1.0, 1.0, 1.0, 1.0], &[false, true, false, false]).unwrap();
        assert_eq!(r.active_ranks(), vec![2]);
    }

    #[test]
    fn bedroc_extremes() {
        let n = 1000;
        let top: Vec<bool> = (0..n).map(|i| i < 10).collect();
        let sc: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let best = bedroc(&ScreenResult::from_scores(&sc, &top).unwrap(), 80.5).unwrap();
        assert!((best - 1.0).abs() < 1e-6);
        let bottom: Vec<bool> = (0..n).map(|i| i >= n - 10).collect();
        let worst = bedroc(&ScreenResult::from_scores(&sc, &bottom).unwrap(), 80.5).unwrap();
        assert!(worst.abs() < 1e-6);
        let all = ScreenResult::from_scores(&[1.0, 2.0], &[true, true]).unwrap();
        assert!(matches!(bedroc(&all, 80.5), Err(Error::Undefined(_))));
    }

    #[test]
    fn bedroc_small_alpha_tracks_mean_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(20..200);
            let active: Vec<bool> = (0..n).map(|i| i == 0 || i == 1 || rng.gen_bool(0.2)).collect();
            let mut active = active;
            active[n - 1] = false;
            let sc: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let r = ScreenResult::from_scores(&sc, &active).unwrap();
            let ranks = r.active_ranks();
            let k = ranks.len() as f64;
            let nn = n as f64;
            // fraction of inactives ranked below each active, averaged
            let auc = ranks
                .iter()
                .enumerate()
                .map(|(i, &rk)| (nn - k - (rk - 1 - i) as f64) / (nn - k))
                .sum::<f64>()
                / k;
            let b = bedroc(&r, 0.001).unwrap();
            assert!((b - auc).abs() < 1e-3, "{b} vs {auc}");
        }
    }

    #[test]
    fn simulation_is_deterministic_across_strategies() {
        let cfg = SimulationConfig {
            actives: 30,
            decoys: 2000,
            trials: 16,
            seed: 5,
            ..Default::default()
        };
        let a = simulate_screen(&cfg, Exec::Sequential).unwrap();
        let b = simulate_screen(&cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.trial_bedroc.iter().all(|v| (0.0..=1.0).contains(v)));
        let bad = SimulationConfig { trials: 0, ..cfg };
        assert!(simulate_screen(&bad, Exec::Parallel).is_err());
    }

    #[test]
    fn per_target_mode() {
        let base = SimulationConfig {
            trials: 8,
            ..Default::default()
        };
        let targets = vec![
            TargetComposition { name: "a".into(), actives: 20, decoys: 1000 },
            TargetComposition { name: "b".into(), actives: 50, decoys: 3000 },
        ];
        let r = simulate_screen_per_target(&targets, &base, Exec::Parallel).unwrap();
        assert_eq!(r.targets.len(), 2);
        assert_eq!(r.targets[1].1.config.seed, 8);
    }

    #[test]
    fn metric_names() {
        let m = parse_metrics("ci,spearman,pearson,mse,ef1,bedroc80.5").unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m[4], Metric::Ef(1.0));
        assert_eq!(m[5], Metric::Bedroc(80.5));
        assert_eq!(m[5].to_string(), "bedroc80.5");
        assert_eq!(parse_metrics("").unwrap(), vec![]);
        assert!(parse_metrics("auc").is_err());
        assert!(parse_metrics("ef200").is_err());
    }

    fn rec(id: &str, p: f64, y: Option<f64>, a: Option<bool>, g: Option<&str>) -> EvalRecord {
        EvalRecord {
            id: id.into(),
            prediction: p,
            label: y,
            active: a,
            group: g.map(String::from),
        }
    }

    #[test]
    fn evaluate_dispatch() {
        let rs = vec![
            rec("a", 1.0, Some(1.0), None, None),
            rec("b", 2.0, Some(2.0), None, None),
            rec("c", 3.0, Some(3.0), None, None),
        ];
        let m = parse_metrics("ci,mse,ef1,bedroc").unwrap();
        let r = evaluate(&rs, &m, ScoreDirection::HigherIsActive);
        assert_eq!(r.ci, Some(1.0));
        assert_eq!(r.mse, Some(0.0));
        assert!(r.ef.is_empty() && r.bedroc.is_empty());
        assert!(r.omitted.contains_key("ef1"));
        assert!(r.omitted.contains_key("bedroc80.5"));

        let empty = evaluate(&rs, &[], ScoreDirection::HigherIsActive);
        assert_eq!(empty, MetricReport { n: 3, ..Default::default() });

        let json = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn grouped_evaluation() {
        let rs = vec![
            rec("a", 0.9, None, Some(true), Some("t1")),
            rec("b", 0.1, None, Some(false), Some("t1")),
            rec("c", 0.2, None, Some(true), Some("t2")),
            rec("d", 0.8, None, Some(false), Some("t2")),
        ];
        let g = evaluate_grouped(&rs, &[Metric::Ef(50.0)], ScoreDirection::HigherIsActive);
        assert_eq!(g.groups["t1"].ef["50"], 2.0);
        assert_eq!(g.groups["t2"].ef["50"], 0.0);
        assert_eq!(g.group_summary["ef50"].mean, 1.0);
        assert_eq!(g.overall.n, 4);
        let flipped = evaluate_grouped(&rs, &[Metric::Ef(50.0)], ScoreDirection::LowerIsActive);
        assert_eq!(flipped.groups["t1"].ef["50"], 0.0);
        assert_eq!(flipped.groups["t2"].ef["50"], 2.0);
    }
}
