mod common;

use equicpi::equinet::wigner::wigner_all;
use equicpi::equinet::{Model, ModelConfig};
use equicpi::fingerprint::morgan_fingerprint;
use equicpi::geograph::build_graph_from;
use equicpi::par::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// A mirror M factors as inversion times the proper rotation -M. With only
// parity-even coupling paths, degree-l blocks pick up (-1)^l under inversion,
// so scalars (and the prediction) are unchanged.
#[test]
fn mirror_images_predict_the_same() {
    let cfg = ModelConfig::default();
    let model = Model::new(&cfg).unwrap();
    let params = model.init_params(4);
    let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let proper = mirror.map(|row| row.map(|v: f64| -v));
    let d = wigner_all(&proper).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for c in 0..10 {
        let nl = rng.gen_range(3..=10);
        let nr = rng.gen_range(3..=10);
        let rec = common::random_complex(&mut rng, &format!("m{c}"), nl, nr, None);
        let fp = morgan_fingerprint(&rec.ligand, 2, cfg.fingerprint_width).unwrap();
        let g = build_graph_from(&rec.ligand, &rec.protein, &cfg.cutoffs).unwrap();
        let flip = |p: [f64; 3]| [-p[0], p[1], p[2]];
        let mut prot = rec.protein.clone();
        for r in &mut prot.residues {
            r.ca_position = flip(r.ca_position);
        }
        let gm = build_graph_from(&rec.ligand.map_positions(flip), &prot, &cfg.cutoffs).unwrap();
        let (y, feats) = model.forward_graph(&g, &fp, &params, Exec::Sequential).unwrap();
        let (ym, feats_m) = model.forward_graph(&gm, &fp, &params, Exec::Sequential).unwrap();
        assert!((y - ym).abs() <= 1e-12 * (y.abs() + 1e-8), "{y} vs {ym}");
        for (la, lb) in feats.iter().zip(&feats_m) {
            let scale = la.iter().flat_map(|f| &f.data).fold(0f64, |m, v| m.max(v.abs()));
            for (a, b) in la.iter().zip(lb) {
                let expected = a.inverted().rotated(&d);
                for (u, v) in expected.data.iter().zip(&b.data) {
                    assert!((u - v).abs() <= 1e-10 * scale);
                }
            }
        }
    }
}
