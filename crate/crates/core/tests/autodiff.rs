use erd::autodiff::{gradient_check, Tape, Tensor, Var};
use erd::rng::Rng;
use proptest::prelude::*;

mod common;
use common::random_tensor;

fn softmax_oracle(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

// a small network touching every op the learners use
fn composite(tape: &Tape, v: &[Var], groups: &[Vec<usize>], targets: &[usize]) -> erd::Result<Var> {
    let h = tape.sigmoid(tape.linear(v[0], v[1], v[2])?);
    let protos = tape.group_mean(h, groups.to_vec())?;
    let d = tape.sq_dist(h, protos)?;
    let logp = tape.log_softmax(tape.scale(d, -1.0));
    let nll = tape.nll_sum(logp, targets.to_vec())?;
    let pairs = tape.pair_concat(protos, h);
    let s = tape.sum(tape.sigmoid(pairs));
    tape.add(nll, tape.scale(s, 0.1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), rows in 2usize..6, din in 1usize..5, dout in 1usize..5) {
        let mut rng = Rng::new(seed);
        let params = vec![
            random_tensor(&mut rng, rows, din, 1.0),
            random_tensor(&mut rng, din, dout, 0.7),
            Tensor::vector((0..dout).map(|_| rng.normal() as f32 * 0.3).collect()),
        ];
        let groups = vec![(0..rows / 2).collect::<Vec<_>>(), (rows / 2..rows).collect()];
        let groups: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        let targets: Vec<usize> = (0..rows).map(|i| i % groups.len()).collect();
        let err = gradient_check(|t, v| composite(t, v, &groups, &targets), &params, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(seed in any::<u64>(), cols in 1usize..10, shift in -50.0f64..50.0) {
        let mut rng = Rng::new(seed);
        let x: Vec<f64> = (0..3 * cols).map(|_| rng.normal() * 5.0).collect();
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let tape = Tape::new();
        let a = tape.softmax(tape.leaf_f64(vec![3, cols], x.clone(), false).unwrap());
        let b = tape.softmax(tape.leaf_f64(vec![3, cols], shifted, false).unwrap());
        let (a, b) = (tape.value(a).to_vec(), tape.value(b).to_vec());
        for r in 0..3 {
            let row = &a[r * cols..(r + 1) * cols];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (p, o) in row.iter().zip(softmax_oracle(&x[r * cols..(r + 1) * cols])) {
                prop_assert!((p - o).abs() < 1e-12);
            }
        }
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_is_non_negative_and_zero_on_itself(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = Rng::new(seed);
        let p = softmax_oracle(&(0..n).map(|_| rng.normal() * 3.0).collect::<Vec<_>>());
        let q = softmax_oracle(&(0..n).map(|_| rng.normal() * 3.0).collect::<Vec<_>>());
        let tape = Tape::new();
        let qv = tape.leaf_f64(vec![n], q.clone(), false).unwrap();
        let pv = tape.leaf_f64(vec![n], p.clone(), false).unwrap();
        let kl = tape.scalar(tape.kl_divergence(p.clone(), qv).unwrap());
        let oracle: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        prop_assert!(kl >= -1e-12);
        prop_assert!((kl - oracle).abs() < 1e-9);
        prop_assert!(tape.scalar(tape.kl_divergence(p, pv).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn log_softmax_matches_log_of_softmax() {
    let tape = Tape::new();
    let x = tape.leaf_f64(vec![2, 3], vec![1.0, 2.0, 3.0, -700.0, 0.0, 700.0], false).unwrap();
    let a = tape.value(tape.log_softmax(x)).to_vec();
    let b: Vec<f64> = tape.value(tape.softmax(x)).iter().map(|v| v.ln()).collect();
    for (u, v) in a.iter().zip(&b) {
        if v.is_finite() {
            assert!((u - v).abs() < 1e-9);
        }
    }
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn gradient_of_constant_leaf_is_absent() {
    let tape = Tape::new();
    let c = tape.constant(&Tensor::vector(vec![1.0, 2.0]));
    let p = tape.param(&Tensor::vector(vec![3.0, 4.0]));
    let loss = tape.mse(c, p).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(c).is_none());
    // d/dp mean((c-p)^2) = (p-c)
    assert_eq!(g.get(p).unwrap(), &[2.0, 2.0]);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let tape = Tape::new();
    let a = tape.param(&Tensor::zeros(vec![2, 3]));
    let b = tape.param(&Tensor::zeros(vec![2, 4]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.sq_dist(a, b).is_err());
    assert!(tape.matmul(a, a).is_err());
}
