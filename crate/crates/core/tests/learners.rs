use erd::autodiff::{Tape, Tensor};
use erd::learners::{predict, proto_classify, relation_scores, Embedder, LearnerConfig, LearnerKind, Model};
use erd::rng::Rng;
use proptest::prelude::*;

mod common;
use common::{random_tensor, small_model, toy_episodes};

/// Random orthogonal matrix by Gram-Schmidt.
fn orthogonal(rng: &mut Rng, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn transform(row: &[f32], q: &[Vec<f64>], shift: &[f64]) -> Vec<f32> {
    q.iter()
        .zip(shift)
        .map(|(qr, s)| (qr.iter().zip(row).map(|(a, b)| a * *b as f64).sum::<f64>() + s) as f32)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn proto_classify_is_isometry_invariant(seed in any::<u64>(), n in 2usize..6, d in 1usize..6) {
        let mut rng = Rng::new(seed);
        let protos = random_tensor(&mut rng, n, d, 1.0);
        let query: Vec<f32> = (0..d).map(|_| rng.normal() as f32).collect();
        let q = orthogonal(&mut rng, d);
        let shift: Vec<f64> = (0..d).map(|_| rng.normal() * 3.0).collect();
        let moved: Vec<Vec<f32>> = (0..n).map(|k| transform(protos.row(k), &q, &shift)).collect();
        let a = proto_classify(&protos, &query).unwrap();
        let b = proto_classify(&Tensor::from_rows(&moved).unwrap(), &transform(&query, &q, &shift)).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|p| *p >= 0.0));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn relation_scores_lie_in_the_unit_interval() {
    for seed in 0..10 {
        let toy = toy_episodes(3, 2, 2, 5, seed);
        let model = small_model(LearnerKind::Relation, 5, seed);
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let scores = relation_scores(&tape, &bound, &toy.standard).unwrap();
        let v = tape.value(scores);
        assert_eq!(v.len(), toy.standard.support.rows() * toy.standard.query.rows());
        assert!(v.iter().all(|s| *s > 0.0 && *s < 1.0));
    }
}

#[test]
fn proto_prediction_is_the_nearest_prototype() {
    for seed in 0..10 {
        let toy = toy_episodes(4, 3, 2, 5, seed);
        let model = small_model(LearnerKind::Proto, 5, seed);
        let ep = &toy.cross;
        let s = model.embed(&ep.support).unwrap();
        let q = model.embed(&ep.query).unwrap();
        let protos: Vec<Vec<f32>> = ep
            .support_groups()
            .iter()
            .map(|g| {
                (0..s.cols())
                    .map(|j| (g.iter().map(|&i| s.row(i)[j] as f64).sum::<f64>() / g.len() as f64) as f32)
                    .collect()
            })
            .collect();
        let protos = Tensor::from_rows(&protos).unwrap();
        let pred = predict(&model, ep).unwrap();
        for (i, p) in pred.iter().enumerate() {
            let probs = proto_classify(&protos, q.row(i)).unwrap();
            let best = probs.iter().cloned().fold(f64::MIN, f64::max);
            assert!((probs[*p] - best).abs() < 1e-9);
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, kind) in [LearnerKind::Proto, LearnerKind::Relation].into_iter().enumerate() {
        let model = small_model(kind, 7, 11);
        let dir = tmp.path().join(i.to_string());
        model.save(&dir).unwrap();
        let back = Model::load(&dir).unwrap();
        assert!(back.bit_eq(&model));
        assert_eq!(back.kind, kind);
    }
}

#[test]
fn same_seed_same_weights() {
    let cfg = LearnerConfig::default();
    assert!(Model::new(&cfg, 3).unwrap().bit_eq(&Model::new(&cfg, 3).unwrap()));
    assert!(!Model::new(&cfg, 3).unwrap().bit_eq(&Model::new(&cfg, 4).unwrap()));
}

#[test]
fn bad_architecture_is_rejected() {
    let cfg = LearnerConfig {
        layer_widths: vec![4],
        ..LearnerConfig::default()
    };
    assert!(Model::new(&cfg, 0).is_err());
}
