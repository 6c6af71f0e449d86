use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use clap::Args;
use equicpi::chemio::{load_manifest_with, read_pdb, read_sdf, SdfRecord};
use equicpi::datasplit::{assign_folds_with, leakage_report, normalize_label, SplitRecord, SplitSetting};
use equicpi::difftrain::train::{featurize, prepare_examples, train_examples};
use equicpi::difftrain::{load_checkpoint, Checkpoint};
use equicpi::equinet::predict as model_predict;
use equicpi::fingerprint::morgan_fingerprint;
use equicpi::geograph::build_graph_with;
use equicpi::metrics::{
    evaluate, evaluate_grouped, parse_metrics, simulate_screen as run_simulation, simulate_screen_per_target, EvalRecord,
    ScoreDirection, TargetComposition,
};
use equicpi::par::{map_slice, Exec};
use equicpi::physscore::{rerank_poses, score_pose, Receptor};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{json_doc, opt, Artifact, CsvOut, Provenance};
use crate::CliError;

type Out = Result<Vec<Artifact>, CliError>;

fn invalid(m: impl Into<String>) -> CliError {
    CliError::Invalid(m.into())
}

fn read_sdf_nonempty(path: &Path) -> Result<Vec<SdfRecord>, CliError> {
    let recs = read_sdf(path)?;
    if recs.is_empty() {
        return Err(invalid(format!("{}: no molecules", path.display())));
    }
    Ok(recs)
}

#[derive(Debug, Args)]
pub struct FingerprintArgs {
    /// Input SDF file.
    #[arg(long)]
    sdf: PathBuf,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    nbits: Option<usize>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fingerprint(a: FingerprintArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    if let Some(r) = a.radius {
        cfg.fingerprint.radius = r;
    }
    if let Some(n) = a.nbits {
        cfg.fingerprint.nbits = n;
    }
    cfg.validate()?;
    let recs = read_sdf_nonempty(&a.sdf)?;
    let fps = map_slice(exec, &recs, |r| {
        morgan_fingerprint(&r.molecule, cfg.fingerprint.radius, cfg.fingerprint.nbits)
    })
    .into_iter()
    .collect::<equicpi::Result<Vec<_>>>()?;
    let prov = Provenance::new("fingerprint", &cfg, None);
    let mut csv = CsvOut::new(&prov, &["index", "id", "radius", "nbits", "on_bits", "hex"]);
    for (i, (r, fp)) in recs.iter().zip(&fps).enumerate() {
        csv.row([
            i.to_string(),
            r.molecule.id.clone(),
            fp.radius().to_string(),
            fp.nbits().to_string(),
            fp.count_ones().to_string(),
            fp.to_hex(),
        ]);
    }
    Ok(vec![Artifact::new(a.out, csv.finish())])
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Ligand SDF; the pose selected by --pose is used.
    #[arg(long)]
    ligand: PathBuf,
    /// Receptor PDB.
    #[arg(long)]
    protein: PathBuf,
    #[arg(long, default_value_t = 0)]
    pose: usize,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GraphDoc<'a> {
    ligand_id: &'a str,
    protein_id: &'a str,
    n_ligand: usize,
    n_residues: usize,
    edge_counts: BTreeMap<&'static str, usize>,
    graph: &'a equicpi::geograph::HeteroGraph,
}

pub fn build_graph(a: BuildGraphArgs, cfg: RunConfig, exec: Exec) -> Out {
    cfg.validate()?;
    let recs = read_sdf_nonempty(&a.ligand)?;
    let (protein, _) = read_pdb(&a.protein)?;
    let lig = recs
        .get(a.pose)
        .ok_or_else(|| invalid(format!("--pose {} but the file has {} poses", a.pose, recs.len())))?;
    let g = build_graph_with(&lig.molecule, &protein, &cfg.model.cutoffs, exec)?;
    let edge_counts = [
        equicpi::geograph::EdgeKind::Cc,
        equicpi::geograph::EdgeKind::Pp,
        equicpi::geograph::EdgeKind::Pc,
    ]
    .into_iter()
    .map(|k| (k.name(), g.edge_count(k)))
    .collect();
    let doc = GraphDoc {
        ligand_id: &lig.molecule.id,
        protein_id: &protein.id,
        n_ligand: g.n_ligand,
        n_residues: g.n_residues(),
        edge_counts,
        graph: &g,
    };
    let prov = Provenance::new("build-graph", &cfg, None);
    Ok(vec![Artifact::new(a.out, json_doc(&prov, &doc))])
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV manifest with complex_id, ligand_sdf, protein_pdb, ec50_nm.
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the per-step training loss.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn train(a: TrainArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let records = load_manifest_with(&a.manifest, exec)?;
    let examples = prepare_examples(&records, &cfg.model, exec)?;
    let out = train_examples(&examples, &cfg.train, &cfg.model, exec)?;
    let prov = Provenance::new("train", &cfg, Some(cfg.train.seed));
    let ckpt = Checkpoint {
        model: cfg.model.clone(),
        train: Some(cfg.train.clone()),
        params: out.params,
        provenance: Some(prov.to_value()),
    };
    let mut arts = vec![Artifact::new(Some(a.out), ckpt.to_bytes()?)];
    if let Some(p) = a.losses {
        let mut csv = CsvOut::new(&prov, &["step", "loss"]);
        for (i, l) in out.losses.iter().enumerate() {
            csv.row([i.to_string(), l.to_string()]);
        }
        arts.push(Artifact::new(Some(p), csv.finish()));
    }
    Ok(arts)
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn predict(a: PredictArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    // the network shape comes from the checkpoint
    cfg.model = ckpt.model.clone();
    cfg.validate()?;
    let records = load_manifest_with(&a.manifest, exec)?;
    let inner = if exec.is_parallel() && records.len() > 1 { Exec::Sequential } else { exec };
    let items = map_slice(exec, &records, |r| featurize(r, &cfg.model, inner))
        .into_iter()
        .collect::<equicpi::Result<Vec<_>>>()?;
    let preds = model_predict(&items, &ckpt.params, &cfg.model, exec)?;
    let seed = ckpt.train.as_ref().map(|t| t.seed);
    let prov = Provenance::new("predict", &cfg, seed);
    let mut csv = CsvOut::new(&prov, &["complex_id", "prediction"]);
    for (r, p) in records.iter().zip(&preds) {
        csv.row([r.complex_id.clone(), p.to_string()]);
    }
    Ok(vec![Artifact::new(a.out, csv.finish())])
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// SDF with one or more ligand poses.
    #[arg(long)]
    ligand: PathBuf,
    #[arg(long)]
    protein: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn score_vina(a: ScoreArgs, cfg: RunConfig, exec: Exec) -> Out {
    cfg.validate()?;
    let recs = read_sdf_nonempty(&a.ligand)?;
    let (_, atoms) = read_pdb(&a.protein)?;
    let receptor = Receptor::new(&atoms);
    let scored = map_slice(exec, &recs, |r| {
        score_pose(&r.molecule, &receptor, &cfg.vina, Exec::Sequential)
    })
    .into_iter()
    .collect::<equicpi::Result<Vec<_>>>()?;
    let prov = Provenance::new("score-vina", &cfg, None);
    let mut csv = CsvOut::new(
        &prov,
        &[
            "pose_index",
            "id",
            "score",
            "e_inter",
            "n_torsional",
            "gauss1",
            "gauss2",
            "repulsion",
            "hydrophobic",
            "hbond",
        ],
    );
    for (i, (r, b)) in recs.iter().zip(&scored).enumerate() {
        csv.row([
            i.to_string(),
            r.molecule.id.clone(),
            b.score.to_string(),
            b.e_inter.to_string(),
            b.n_torsional.to_string(),
            b.terms.gauss1.to_string(),
            b.terms.gauss2.to_string(),
            b.terms.repulsion.to_string(),
            b.terms.hydrophobic.to_string(),
            b.terms.hbond.to_string(),
        ]);
    }
    Ok(vec![Artifact::new(a.out, csv.finish())])
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    /// SDF with the docked poses.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    protein: PathBuf,
    /// Weight of the upstream confidence.
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the standardized docking score.
    #[arg(long)]
    alpha: Option<f64>,
    /// SDF data item holding each pose's confidence.
    #[arg(long, default_value = "confidence")]
    confidence_key: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pose_confidences(recs: &[SdfRecord], key: &str) -> Result<Option<Vec<f64>>, CliError> {
    let vals: Vec<Option<&String>> = recs
        .iter()
        .map(|r| {
            r.properties
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(key))
                .map(|(_, v)| v)
        })
        .collect();
    let present = vals.iter().filter(|v| v.is_some()).count();
    if present == 0 {
        return Ok(None);
    }
    if present != vals.len() {
        return Err(invalid(format!(
            "only {present} of {} poses carry a {key:?} value",
            vals.len()
        )));
    }
    vals.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = v.expect("checked above").trim();
            s.parse::<f64>()
                .ok()
                .filter(|c| c.is_finite())
                .ok_or_else(|| invalid(format!("pose {i}: {key} {s:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

pub fn rerank(a: RerankArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    if let Some(l) = a.lambda {
        cfg.rerank.lambda = l;
    }
    if let Some(al) = a.alpha {
        cfg.rerank.alpha = al;
    }
    cfg.validate()?;
    let recs = read_sdf_nonempty(&a.poses)?;
    let (_, atoms) = read_pdb(&a.protein)?;
    let conf = pose_confidences(&recs, &a.confidence_key)?;
    let poses: Vec<_> = recs.iter().map(|r| r.molecule.clone()).collect();
    let ranked = rerank_poses(&poses, conf.as_deref(), &atoms, &cfg.vina, &cfg.rerank, exec)?;
    let prov = Provenance::new("rerank", &cfg, None);
    let mut csv = CsvOut::new(&prov, &["pose_index", "e_vina", "confidence", "fused", "rank"]);
    for (rank, p) in ranked.iter().enumerate() {
        csv.row([
            p.pose_index.to_string(),
            p.e_vina.to_string(),
            opt(p.upstream_confidence),
            opt(p.fused),
            rank.to_string(),
        ]);
    }
    Ok(vec![Artifact::new(a.out, csv.finish())])
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// novel_pair, novel_compound or novel_protein.
    #[arg(long)]
    setting: String,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SplitDoc<'a> {
    assignment: &'a equicpi::datasplit::FoldAssignment,
    leakage: &'a equicpi::datasplit::LeakageReport,
}

pub fn split(a: SplitArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    let setting: SplitSetting = a.setting.parse()?;
    if let Some(k) = a.folds {
        cfg.split.folds = k;
    }
    if let Some(s) = a.seed {
        cfg.split.seed = s;
    }
    cfg.validate()?;
    let records = load_manifest_with(&a.manifest, exec)?;
    let recs = records
        .iter()
        .map(SplitRecord::from_complex)
        .collect::<equicpi::Result<Vec<_>>>()?;
    let assignment = assign_folds_with(&recs, setting, &cfg.split, exec)?;
    let leakage = leakage_report(&assignment, &recs, &cfg.split, exec)?;
    let prov = Provenance::new("split", &cfg, Some(cfg.split.seed));
    let doc = SplitDoc {
        assignment: &assignment,
        leakage: &leakage,
    };
    Ok(vec![Artifact::new(a.out, json_doc(&prov, &doc))])
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with complex_id (or id) and prediction (or score) columns; may
    /// also hold label, ec50_nm, is_active and group columns.
    #[arg(long)]
    pred: PathBuf,
    /// Optional CSV (a manifest works) joined on complex_id for labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "ci,spearman,pearson,mse,ef1,bedroc80.5")]
    metrics: String,
    /// Column to report metrics per group, plus mean and spread over groups.
    #[arg(long)]
    group_by: Option<String>,
    /// Treat larger predictions as more likely active. By default lower
    /// predictions (lower EC50) rank first for EF and BEDROC.
    #[arg(long)]
    higher_is_active: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone)]
struct Row {
    prediction: Option<f64>,
    label: Option<f64>,
    active: Option<bool>,
    group: Option<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "active" => Some(true),
        "0" | "false" | "no" | "inactive" | "decoy" => Some(false),
        _ => None,
    }
}

/// Read an id-keyed table; rows keep file order.
fn read_table(path: &Path, group_by: Option<&str>, need_prediction: bool) -> Result<Vec<(String, Row)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
            _ => invalid(format!("{}: {e}", path.display())),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        .clone();
    let col = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h == *n));
    let id_col = col(&["complex_id", "id"])
        .ok_or_else(|| invalid(format!("{}: no complex_id or id column", path.display())))?;
    let pred_col = col(&["prediction", "score"]);
    if need_prediction && pred_col.is_none() {
        return Err(invalid(format!("{}: no prediction or score column", path.display())));
    }
    let label_col = col(&["label"]);
    let ec50_col = col(&["ec50_nm"]);
    let active_col = col(&["is_active"]);
    let group_col = match group_by {
        Some(g) => col(&[g]),
        None => None,
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let line = i + 2;
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let num = |c: Option<usize>, what: &str| -> Result<Option<f64>, CliError> {
            field(c)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| invalid(format!("{} row {line}: {what} {s:?} is not a number", path.display())))
                })
                .transpose()
        };
        let mut row = Row {
            prediction: num(pred_col, "prediction")?,
            label: num(label_col, "label")?,
            active: field(active_col)
                .map(|s| {
                    parse_bool(s)
                        .ok_or_else(|| invalid(format!("{} row {line}: is_active {s:?} is not boolean", path.display())))
                })
                .transpose()?,
            group: field(group_col).map(String::from),
        };
        if row.label.is_none() {
            if let Some(ec) = num(ec50_col, "ec50_nm")? {
                row.label = Some(normalize_label(ec).map_err(|e| invalid(format!("{} row {line}: {e}", path.display())))?);
            }
        }
        if need_prediction && row.prediction.is_none() {
            return Err(invalid(format!("{} row {line}: missing prediction", path.display())));
        }
        let id = rec.get(id_col).unwrap_or("").to_string();
        out.push((id, row));
    }
    Ok(out)
}

pub fn eval(a: EvalArgs, cfg: RunConfig) -> Out {
    cfg.validate()?;
    let metrics = parse_metrics(&a.metrics)?;
    let mut rows = read_table(&a.pred, a.group_by.as_deref(), true)?;
    let mut seen = HashMap::new();
    for (i, (id, _)) in rows.iter().enumerate() {
        if seen.insert(id.clone(), i).is_some() {
            return Err(invalid(format!("duplicate id {id:?} in {}", a.pred.display())));
        }
    }
    if let Some(lp) = &a.labels {
        for (id, l) in read_table(lp, a.group_by.as_deref(), false)? {
            if let Some(&i) = seen.get(&id) {
                let r = &mut rows[i].1;
                r.label = r.label.or(l.label);
                r.active = r.active.or(l.active);
                r.group = r.group.take().or(l.group);
            }
        }
    }
    let records: Vec<EvalRecord> = rows
        .into_iter()
        .map(|(id, r)| EvalRecord {
            id,
            prediction: r.prediction.expect("checked on read"),
            label: r.label,
            active: r.active,
            group: r.group,
        })
        .collect();
    let direction = if a.higher_is_active {
        ScoreDirection::HigherIsActive
    } else {
        ScoreDirection::LowerIsActive
    };
    let prov = Provenance::new("eval", &cfg, None);
    let bytes = match &a.group_by {
        Some(g) => {
            if records.iter().all(|r| r.group.is_none()) {
                return Err(invalid(format!("no values for group column {g:?}")));
            }
            json_doc(&prov, &evaluate_grouped(&records, &metrics, direction))
        }
        None => json_doc(&prov, &evaluate(&records, &metrics, direction)),
    };
    Ok(vec![Artifact::new(a.out, bytes)])
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    actives: Option<usize>,
    #[arg(long)]
    decoys: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    ef_percent: Option<f64>,
    /// CSV with name, actives, decoys columns: simulate every target and
    /// report the mean over targets.
    #[arg(long)]
    per_target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_targets(path: &Path) -> Result<Vec<TargetComposition>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
            _ => invalid(format!("{}: {e}", path.display())),
        })?;
    let targets = rdr
        .deserialize()
        .collect::<Result<Vec<TargetComposition>, _>>()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if targets.is_empty() {
        return Err(invalid(format!("{}: no targets", path.display())));
    }
    Ok(targets)
}

pub fn simulate_screen(a: SimulateArgs, mut cfg: RunConfig, exec: Exec) -> Out {
    let s = &mut cfg.screen;
    if let Some(v) = a.actives {
        s.actives = v;
    }
    if let Some(v) = a.decoys {
        s.decoys = v;
    }
    if let Some(v) = a.trials {
        s.trials = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.alpha {
        s.alpha = v;
    }
    if let Some(v) = a.ef_percent {
        s.ef_percent = v;
    }
    cfg.validate()?;
    let prov = Provenance::new("simulate-screen", &cfg, Some(cfg.screen.seed));
    let bytes = match &a.per_target {
        Some(p) => {
            let targets = read_targets(p)?;
            for t in &targets {
                if t.actives == 0 || t.decoys == 0 {
                    return Err(invalid(format!("target {:?} needs actives and decoys", t.name)));
                }
            }
            json_doc(&prov, &simulate_screen_per_target(&targets, &cfg.screen, exec)?)
        }
        None => json_doc(&prov, &run_simulation(&cfg.screen, exec)?),
    };
    Ok(vec![Artifact::new(a.out, bytes)])
}
