use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use equicpi::chemio::{load_manifest, write_sdf, Bond, BondOrder, Element, LigandAtom, LigandMolecule};
use equicpi::datasplit::normalize_label;
use equicpi::difftrain::train::{prepare_examples, train_examples, TrainConfig};
use equicpi::equinet::{predict, ModelConfig};
use equicpi::par::Exec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_equicpi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const ELEMENTS: [Element; 5] = [Element::C, Element::C, Element::N, Element::O, Element::C];

/// Zig-zag chain of `n` heavy atoms shifted by `shift`.
fn ligand(id: &str, n: usize, phase: f64, shift: [f64; 3]) -> LigandMolecule {
    let atoms = (0..n)
        .map(|i| {
            let t = i as f64;
            LigandAtom {
                element: ELEMENTS[(i + phase as usize) % ELEMENTS.len()],
                position: [
                    shift[0] + 1.25 * t - 2.0,
                    shift[1] + 0.7 * ((t + phase).sin()),
                    shift[2] + 0.5 * ((0.7 * t + phase).cos()),
                ],
                formal_charge: 0,
                aromatic: false,
            }
        })
        .collect();
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

const RESIDUES: [&str; 6] = ["ALA", "SER", "LEU", "ASP", "PHE", "LYS"];

fn pdb_text(n_res: usize, phase: f64) -> String {
    let mut s = String::new();
    let mut serial = 1;
    let mut line = |name: &str, res: &str, seq: usize, x: [f64; 3], el: &str| {
        s.push_str(&format!(
            "ATOM  {serial:>5} {name:<4} {res:>3} A{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {el:>2}\n",
            x[0], x[1], x[2]
        ));
        serial += 1;
    };
    for i in 0..n_res {
        let a = phase + i as f64 * 2.0 * std::f64::consts::PI / n_res as f64;
        let ca = [6.0 * a.cos(), 6.0 * a.sin(), 1.5 * (3.0 * a).sin()];
        let res = RESIDUES[(i + phase as usize) % RESIDUES.len()];
        let seq = i + 1;
        line("N", res, seq, [ca[0] - 1.0, ca[1] + 1.0, ca[2]], "N");
        line("CA", res, seq, ca, "C");
        line("C", res, seq, [ca[0] + 1.4, ca[1] + 0.5, ca[2]], "C");
        line("O", res, seq, [ca[0] + 1.4, ca[1] + 1.7, ca[2]], "O");
        line("CB", res, seq, [ca[0], ca[1] - 1.5, ca[2] + 0.3], "C");
    }
    s.push_str("END\n");
    s
}

/// `n` complexes with files under `dir` and a manifest.
fn toy_set(dir: &Path, n: usize) -> PathBuf {
    let mut manifest = String::from("complex_id,ligand_sdf,protein_pdb,ec50_nm,is_active\n");
    for i in 0..n {
        let phase = i as f64 * 0.9;
        let lig = ligand(&format!("lig{i}"), 4 + i % 4, phase, [0.0; 3]);
        std::fs::write(dir.join(format!("lig{i}.sdf")), write_sdf(&[lig])).unwrap();
        std::fs::write(dir.join(format!("rec{i}.pdb")), pdb_text(4 + (i * 3) % 5, phase)).unwrap();
        let ec50 = 10f64.powf(0.5 * i as f64);
        manifest.push_str(&format!(
            "c{i},lig{i}.sdf,rec{i}.pdb,{ec50},{}\n",
            if i % 3 == 0 { "true" } else { "false" }
        ));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn tiny_config(dir: &Path, steps: usize) -> PathBuf {
    let mut table = toml::Table::new();
    table.insert("model".into(), toml::Value::try_from(ModelConfig::tiny()).unwrap());
    let train = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    table.insert("train".into(), toml::Value::try_from(train).unwrap());
    let path = dir.join("tiny.toml");
    std::fs::write(&path, toml::to_string(&table).unwrap()).unwrap();
    path
}

/// Rows of a CSV artifact after the provenance line.
fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let prov = lines.next().unwrap().to_string();
    assert!(prov.starts_with("# provenance {"), "{prov}");
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (prov, rows)
}

#[test]
fn print_config_shows_resolved_values() {
    let o = run(&["--print-config"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[train]") && text.contains("learning_rate = 0.001"));
    assert!(text.contains("w_gauss1 = -0.0356"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nsteps = 7\n").unwrap();
    let o = run(&["--config", p(&cfg), "--print-config"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("steps = 7"));

    std::fs::write(&cfg, "[train]\nstepz = 7\n").unwrap();
    assert_eq!(code(&run(&["--config", p(&cfg), "--print-config"])), 1);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["eval", "--bogus-flag"])), 1);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let missing = dir.path().join("nope.sdf");
    assert_eq!(code(&run(&["fingerprint", "--sdf", p(&missing), "--out", p(&out)])), 2);
    assert!(!out.exists());

    let m = toy_set(dir.path(), 3);
    let o = run(&["split", "--manifest", p(&m), "--setting", "sideways", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    let o = run(&["simulate-screen", "--trials", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
    let o = run(&["--threads", "0", "simulate-screen", "--trials", "2", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn fingerprint_and_graph_outputs() {
    let dir = tempfile::tempdir().unwrap();
    toy_set(dir.path(), 2);
    let out = dir.path().join("fp.csv");
    let o = run(&["fingerprint", "--sdf", p(&dir.path().join("lig1.sdf")), "--nbits", "256", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (prov, rows) = csv_rows(&out);
    assert!(prov.contains("\"config_hash\""));
    assert_eq!(rows[0], vec!["index", "id", "radius", "nbits", "on_bits", "hex"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][3], "256");

    let g = dir.path().join("g.json");
    let o = run(&[
        "build-graph",
        "--ligand",
        p(&dir.path().join("lig0.sdf")),
        "--protein",
        p(&dir.path().join("rec0.pdb")),
        "--out",
        p(&g),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&g).unwrap()).unwrap();
    assert_eq!(v["n_ligand"], 4);
    assert_eq!(v["n_residues"], 4);
    assert!(v["edge_counts"]["pc"].as_u64().unwrap() > 0);
    assert!(v["provenance"]["config_hash"].is_string());
}

fn five_pose_sdf(dir: &Path, with_conf: bool) -> PathBuf {
    let shifts = [[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [4.5, 0.0, 0.0], [0.0, 0.4, 0.2], [0.0, 0.0, 1.0]];
    let confs = [0.2, 0.9, 0.5, 0.4, 0.7];
    let mut text = String::new();
    for (i, s) in shifts.iter().enumerate() {
        let rec = write_sdf(&[ligand(&format!("pose{i}"), 5, 1.0, *s)]);
        if with_conf {
            let body = rec.trim_end().strip_suffix("$$$$").unwrap();
            text.push_str(body);
            text.push_str(&format!(">  <confidence>\n{}\n\n$$$$\n", confs[i]));
        } else {
            text.push_str(&rec);
        }
    }
    let path = dir.join(if with_conf { "poses_conf.sdf" } else { "poses.sdf" });
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn rerank_and_score_five_poses() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("rec.pdb");
    std::fs::write(&rec, pdb_text(8, 0.3)).unwrap();

    let poses = five_pose_sdf(dir.path(), false);
    let out = dir.path().join("ranked.csv");
    let o = run(&["rerank", "--poses", p(&poses), "--protein", p(&rec), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows[0], vec!["pose_index", "e_vina", "confidence", "fused", "rank"]);
    assert_eq!(rows.len(), 6);
    let e: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(e.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(rows[1][4], "0");
    assert!(rows[1][3].is_empty());

    let scores = dir.path().join("scores.csv");
    let o = run(&["score-vina", "--ligand", p(&poses), "--protein", p(&rec), "--out", p(&scores)]);
    assert_eq!(code(&o), 0);
    let (_, srows) = csv_rows(&scores);
    assert_eq!(srows.len(), 6);
    let best = rows[1][0].parse::<usize>().unwrap();
    assert_eq!(srows[best + 1][2], rows[1][1]);

    let cposes = five_pose_sdf(dir.path(), true);
    let o = run(&[
        "rerank", "--poses", p(&cposes), "--protein", p(&rec), "--lambda", "1", "--alpha", "1", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 6);
    let fused: Vec<f64> = rows[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(fused.windows(2).all(|w| w[0] >= w[1]));
    assert!(rows[1..].iter().all(|r| !r[2].is_empty()));
}

#[test]
fn predict_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_set(dir.path(), 2);
    let cfg = tiny_config(dir.path(), 20);
    let ckpt = dir.path().join("model.ckpt");
    let o = run(&["--config", p(&cfg), "train", "--manifest", p(&m), "--out", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt2 = dir.path().join("model2.ckpt");
    let o = run(&["--config", p(&cfg), "--threads", "1", "train", "--manifest", p(&m), "--out", p(&ckpt2)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt2).unwrap());

    let outs: Vec<Vec<u8>> = [None, Some("1"), Some("3")]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = dir.path().join(format!("pred{i}.csv"));
            let mut args = vec![];
            if let Some(t) = t {
                args.extend(["--threads", t]);
            }
            args.extend(["predict", "--manifest", p(&m), "--checkpoint", p(&ckpt), "--out", p(&out)]);
            let o = run(&args);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
    let (_, rows) = csv_rows(&dir.path().join("pred0.csv"));
    assert_eq!(rows[0], vec!["complex_id", "prediction"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], "c0");

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = dir.path().join("never.csv");
    let o = run(&["predict", "--manifest", p(&m), "--checkpoint", p(&bad), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(!out.exists());
}

#[test]
fn train_then_predict_matches_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_set(dir.path(), 8);
    let steps = 2000;
    let cfg = tiny_config(dir.path(), steps);
    let ckpt = dir.path().join("model.ckpt");
    let losses = dir.path().join("losses.csv");
    let o = run(&["--config", p(&cfg), "train", "--manifest", p(&m), "--out", p(&ckpt), "--losses", p(&losses)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, lrows) = csv_rows(&losses);
    assert_eq!(lrows.len(), steps + 1);
    let out = dir.path().join("pred.csv");
    let o = run(&["--config", p(&cfg), "predict", "--manifest", p(&m), "--checkpoint", p(&ckpt), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = csv_rows(&out);
    let cli: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();

    let records = load_manifest(&m).unwrap();
    let model_cfg = ModelConfig::tiny();
    let tcfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let ex = prepare_examples(&records, &model_cfg, Exec::Parallel).unwrap();
    let trained = train_examples(&ex, &tcfg, &model_cfg, Exec::Parallel).unwrap();
    let items: Vec<_> = ex.iter().map(|e| (e.graph.clone(), e.fingerprint.clone())).collect();
    let lib = predict(&items, &trained.params, &model_cfg, Exec::Parallel).unwrap();
    assert_eq!(cli, lib);

    let labels: Vec<f64> = records.iter().map(|r| normalize_label(r.label_ec50_nm.unwrap()).unwrap()).collect();
    let mse = cli.iter().zip(&labels).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / cli.len() as f64;
    assert!(mse < 0.01, "mse {mse}");

    let report = dir.path().join("eval.json");
    let o = run(&["eval", "--pred", p(&out), "--labels", p(&m), "--metrics", "ci,spearman,mse,ef50,bedroc", "--out", p(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["n"], 8);
    assert!(v["ci"].as_f64().unwrap() > 0.9);
    assert!(v["ef"]["50"].is_number());
    assert!(v["bedroc"]["80.5"].is_number());
}

#[test]
fn split_writes_folds_and_leakage() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_set(dir.path(), 6);
    let out = dir.path().join("splits.json");
    let o = run(&["split", "--manifest", p(&m), "--setting", "novel_compound", "--folds", "3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let folds = v["assignment"]["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 3);
    let total: usize = folds.iter().map(|f| f.as_array().unwrap().len()).sum();
    assert_eq!(total, 6);
    assert_eq!(v["leakage"]["pass"], true);
    assert_eq!(v["provenance"]["seed"], 0);
}

#[test]
fn eval_grouped_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("p.csv");
    std::fs::write(
        &pred,
        "# provenance {}\nid,prediction,label,is_active,target\na,1,1,true,t1\nb,2,2,false,t1\nc,3,3,false,t2\nd,4,5,true,t2\n",
    )
    .unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["eval", "--pred", p(&pred), "--metrics", "ci,ef50", "--group-by", "target", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["overall"]["ci"], 1.0);
    assert_eq!(v["groups"]["t1"]["ef"]["50"], 2.0);
    assert_eq!(v["groups"]["t2"]["ef"]["50"], 0.0);
    assert_eq!(v["group_summary"]["ef50"]["mean"], 1.0);

    let o = run(&["eval", "--pred", p(&pred), "--metrics", "auc"]);
    assert_eq!(code(&o), 1);

    let a = dir.path().join("s1.json");
    let b = dir.path().join("s2.json");
    let args = ["simulate-screen", "--actives", "20", "--decoys", "980", "--trials", "10", "--seed", "3", "--out"];
    let mut a1 = args.to_vec();
    a1.push(p(&a));
    assert_eq!(code(&run(&a1)), 0);
    let mut b1 = vec!["--threads", "1"];
    b1.extend(args);
    b1.push(p(&b));
    assert_eq!(code(&run(&b1)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["trial_bedroc"].as_array().unwrap().len(), 10);

    let targets = dir.path().join("t.csv");
    std::fs::write(&targets, "name,actives,decoys\nx,10,500\ny,20,900\n").unwrap();
    let o = run(&["simulate-screen", "--trials", "4", "--per-target", p(&targets), "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["targets"].as_array().unwrap().len(), 2);
}
