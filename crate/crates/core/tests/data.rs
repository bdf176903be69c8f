use std::fs;
use std::path::Path;

use erd::data::{build_task_stream, format, generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use erd::experiment::commands::gen_synth;
use erd::rng::Rng;
use erd::Error;
use proptest::prelude::*;

mod common;
use common::{classes, random_tensor};

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

proptest! {
    #[test]
    fn emlt_round_trip(seed in any::<u64>(), rows in 0usize..20, cols in 1usize..12) {
        let mut rng = Rng::new(seed);
        let t = random_tensor(&mut rng, rows, cols, 10.0);
        let bytes = format::encode(&t);
        prop_assert_eq!(bytes.len(), 16 + 4 * rows * cols);
        let back = format::decode(&bytes, Path::new("mem")).unwrap();
        prop_assert!(back.bit_eq(&t));
    }

    #[test]
    fn truncated_emlt_is_an_io_error(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, cut in 1usize..8) {
        let mut rng = Rng::new(seed);
        let bytes = format::encode(&random_tensor(&mut rng, rows, cols, 1.0));
        let short = &bytes[..bytes.len() - cut.min(bytes.len())];
        let err = format::decode(short, Path::new("mem")).unwrap_err();
        prop_assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}

#[test]
fn bad_magic_is_a_format_error() {
    let mut bytes = format::encode(&erd::autodiff::Tensor::zeros(vec![2, 2]));
    bytes[0] = b'X';
    assert!(matches!(format::decode(&bytes, Path::new("mem")), Err(Error::Format { .. })));
}

#[test]
fn gen_synth_is_byte_identical_on_rerun() {
    let spec = SyntheticSpec {
        n_classes: 6,
        dim: 4,
        per_class_train: 5,
        per_class_test: 3,
        ..SyntheticSpec::default()
    };
    let tmp = tempfile::tempdir().unwrap();
    gen_synth(&spec, &tmp.path().join("a")).unwrap();
    gen_synth(&spec, &tmp.path().join("b")).unwrap();
    assert_eq!(dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
    let loaded = load_dataset(&tmp.path().join("a")).unwrap();
    assert_eq!(loaded, generate_synthetic(&spec).unwrap());
}

#[test]
fn invalid_spec_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let spec = SyntheticSpec {
        n_classes: 1,
        ..SyntheticSpec::default()
    };
    assert!(matches!(gen_synth(&spec, &out), Err(Error::Validation(_))));
    assert!(!out.exists());
}

#[test]
fn vanishing_noise_gives_the_class_means() {
    let spec = SyntheticSpec {
        n_classes: 5,
        dim: 7,
        per_class_train: 4,
        per_class_test: 2,
        noise_sigma: 1e-9,
        ..SyntheticSpec::default()
    };
    let means = spec.class_means();
    for (c, mean) in generate_synthetic(&spec).unwrap().iter().zip(&means) {
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - spec.mean_radius).abs() < 1e-9);
        for t in [&c.train, &c.test] {
            for i in 0..t.rows() {
                for (v, m) in t.row(i).iter().zip(mean) {
                    assert!((*v as f64 - m).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn nearest_mean_is_nearly_perfect_on_separated_clusters() {
    let spec = SyntheticSpec {
        n_classes: 40,
        dim: 32,
        per_class_train: 10,
        per_class_test: 50,
        mean_radius: 3.0,
        noise_sigma: 0.5,
        seed: 9,
    };
    let means = spec.class_means();
    let data = generate_synthetic(&spec).unwrap();
    let (mut right, mut total) = (0, 0);
    for (c, class) in data.iter().enumerate() {
        for i in 0..class.test.rows() {
            let row = class.test.row(i);
            let best = (0..means.len())
                .min_by(|&a, &b| {
                    let d = |k: usize| row.iter().zip(&means[k]).map(|(x, m)| (*x as f64 - m).powi(2)).sum::<f64>();
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            right += usize::from(best == c);
            total += 1;
        }
    }
    assert!(right as f64 / total as f64 > 0.99, "{right}/{total}");
}

#[test]
fn stream_is_a_partition() {
    for seed in 0..20 {
        let all = classes(23, 3, 2, seed);
        let s = build_task_stream(all, 4, 4, 7, seed).unwrap();
        s.validate().unwrap();
        assert_eq!(s.n_tasks(), 4);
        assert_eq!(s.meta_test.len(), 7);
        let mut ids: Vec<u32> = s.layout().tasks.concat();
        ids.extend(s.layout().meta_test);
        ids.sort_unstable();
        assert_eq!(ids, (0..23).collect::<Vec<_>>());
        for (i, t) in s.tasks.iter().enumerate() {
            assert_eq!(t.number, i + 1);
        }
    }
}

#[test]
fn stream_rejects_wrong_class_count() {
    assert!(build_task_stream(classes(10, 3, 2, 0), 2, 4, 3, 0).is_err());
}

#[test]
fn dataset_round_trip_and_missing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = classes(3, 4, 5, 1);
    save_dataset(tmp.path(), &data).unwrap();
    assert_eq!(load_dataset(tmp.path()).unwrap(), data);
    assert!(matches!(load_dataset(&tmp.path().join("nope")), Err(Error::Io { .. })));
}
