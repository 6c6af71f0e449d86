mod common;

use equicpi::chemio::{parse_sdf, write_sdf};
use equicpi::datasplit::{denormalize_label, normalize_label};
use equicpi::fingerprint::{jaccard, morgan_fingerprint, protein_kmer_set, tanimoto, Fingerprint};
use equicpi::metrics::{bedroc, concordance_index, enrichment_factor, spearman, ScreenResult};
use equicpi::par::Exec;
use equicpi::physscore::{fuse_scores, score_pose, Receptor, VinaWeights};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn paired(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..max).prop_flat_map(|n| {
        (
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(-50i32..50, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ci_is_a_probability_and_flips_with_negation((p, y) in paired(60)) {
        prop_assume!(y.iter().any(|&v| v != y[0]));
        let ci = concordance_index(&p, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&ci));
        let neg: Vec<f64> = p.iter().map(|v| -v).collect();
        let ci_neg = concordance_index(&neg, &y).unwrap();
        prop_assert!((ci + ci_neg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_ignores_monotone_transforms((p, y) in paired(60)) {
        prop_assume!(p.iter().any(|&v| v != p[0]) && y.iter().any(|&v| v != y[0]));
        let a = spearman(&p, &y).unwrap();
        let q: Vec<f64> = p.iter().map(|v| (v / 10.0).exp()).collect();
        prop_assert!((a - spearman(&q, &y).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn screening_metrics_stay_in_range(
        scores in prop::collection::vec(-100i32..100, 2..300),
        seed in any::<u64>(),
    ) {
        let n = scores.len();
        let active: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        prop_assume!(active.iter().any(|&a| !a));
        let s: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let r = ScreenResult::from_scores(&s, &active).unwrap();
        let b = bedroc(&r, 20.0).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&b));
        let ef = enrichment_factor(&r, 10.0).unwrap();
        let ra = r.n_actives() as f64 / n as f64;
        prop_assert!(ef >= 0.0 && ef <= 1.0 / ra + 1e-12);
    }

    #[test]
    fn label_round_trip(exp in -4.0f64..10.0) {
        let ec50 = 10f64.powf(exp);
        let p = normalize_label(ec50).unwrap();
        prop_assert!((denormalize_label(p) - ec50).abs() <= 1e-12 * ec50);
        prop_assert!((p - (exp - 9.0)).abs() < 1e-12);
    }

    #[test]
    fn set_similarities_are_symmetric_and_bounded(
        a in prop::collection::btree_set(0usize..256, 0..40),
        b in prop::collection::btree_set(0usize..256, 0..40),
    ) {
        let (fa, fb) = (Fingerprint::from_bits(256, a.iter().copied()), Fingerprint::from_bits(256, b.iter().copied()));
        let t = tanimoto(&fa, &fb).unwrap();
        prop_assert_eq!(t, tanimoto(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert_eq!(tanimoto(&fa, &fa).unwrap(), 1.0);
    }

    #[test]
    fn kmer_jaccard_of_identical_sequences_is_one(seq in "[ACDEFGHIKLMNPQRSTVWY]{3,80}") {
        let k = protein_kmer_set(&seq, 3).unwrap();
        prop_assert_eq!(jaccard(&k, &k), 1.0);
        let other = protein_kmer_set(&format!("{seq}W"), 3).unwrap();
        let j = jaccard(&k, &other);
        prop_assert!(j > 0.0 && j <= 1.0);
    }

    #[test]
    fn fused_order_follows_confidence_when_alpha_is_zero(
        conf in prop::collection::vec(-5.0f64..5.0, 1..20),
    ) {
        let energies = vec![0.0; conf.len()];
        let fused = fuse_scores(&conf, &energies, 2.0, 0.0).unwrap();
        for (f, c) in fused.iter().zip(&conf) {
            prop_assert!((f - 2.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_score_ignores_atom_order(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lig = common::random_ligand(&mut rng, n, "p");
        let (_, prot) = common::random_protein(&mut rng, 6, common::centroid(&lig), "r");
        let receptor = Receptor::new(&prot);
        let w = VinaWeights::default();
        let a = score_pose(&lig, &receptor, &w, Exec::Sequential).unwrap();
        let mut rev = lig.clone();
        rev.atoms.reverse();
        for b in &mut rev.bonds {
            (b.i, b.j) = (n - 1 - b.i, n - 1 - b.j);
        }
        let b = score_pose(&rev, &receptor, &w, Exec::Sequential).unwrap();
        prop_assert!((a.score - b.score).abs() <= 1e-12 * a.score.abs().max(1.0));
        prop_assert_eq!(a.n_torsional, b.n_torsional);
        let p = score_pose(&lig, &receptor, &w, Exec::Parallel).unwrap();
        prop_assert_eq!(a.score.to_bits(), p.score.to_bits());
    }

    #[test]
    fn sdf_round_trip_keeps_fingerprint(seed in any::<u64>(), n in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mol = common::random_ligand(&mut rng, n, "m");
        let back = parse_sdf(&write_sdf(std::slice::from_ref(&mol))).unwrap().remove(0);
        prop_assert_eq!(
            morgan_fingerprint(&mol, 2, 2048).unwrap(),
            morgan_fingerprint(&back, 2, 2048).unwrap()
        );
    }
}
