use std::collections::BTreeMap;

use erd::data::Task;
use erd::memory::{BufferPolicy, ExemplarBuffer, Selection};
use erd::rng::Rng;
use proptest::prelude::*;

mod common;
use common::{classes, small_model, tasks_of};

fn stream(seed: u64, n_tasks: usize, per_task: usize, rows: usize) -> Vec<Task> {
    tasks_of(&classes(n_tasks * per_task, 4, rows, seed), per_task)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_class_budget(seed in any::<u64>(), n_ex in 1usize..12, n_tasks in 1usize..5) {
        let tasks = stream(seed, n_tasks, 3, 7);
        let mut b = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex }, Selection::Random);
        let mut rng = Rng::new(seed);
        for (i, t) in tasks.iter().enumerate() {
            b.commit_task(t, None, &mut rng).unwrap();
            let s = b.stats();
            prop_assert_eq!(s.n_classes, 3 * (i + 1));
            prop_assert!(s.per_class_counts.values().all(|&c| c == n_ex.min(7)));
        }
    }

    #[test]
    fn bounded_budget(seed in any::<u64>(), bf in 1usize..60, n_tasks in 1usize..5) {
        let tasks = stream(seed, n_tasks, 3, 9);
        let model = small_model(erd::learners::LearnerKind::Proto, 4, seed);
        let mut b = ExemplarBuffer::new(BufferPolicy::Bounded { bf }, Selection::Ntc);
        let mut rng = Rng::new(seed);
        let mut before: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for t in &tasks {
            b.commit_task(t, Some(&model), &mut rng).unwrap();
            let s = b.stats();
            prop_assert!(s.total_rows <= bf);
            let (lo, hi) = (s.per_class_counts.values().min().unwrap(), s.per_class_counts.values().max().unwrap());
            // equal shares, except where a class runs out of rows
            prop_assert!(hi - lo <= 1 || *hi == 9.min(bf));
            for c in b.classes() {
                if let Some(old) = before.get(&c.class_id) {
                    prop_assert!(old.starts_with(&c.train_rows), "shrinking must drop a suffix");
                }
            }
            before = b.classes().map(|c| (c.class_id, c.train_rows.clone())).collect();
        }
    }
}

#[test]
fn ntc_needs_a_model() {
    let tasks = stream(0, 1, 2, 4);
    let mut b = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 2 }, Selection::Ntc);
    assert!(b.commit_task(&tasks[0], None, &mut Rng::new(0)).is_err());
}

#[test]
fn recommitting_a_class_is_rejected() {
    let tasks = stream(0, 1, 2, 4);
    let mut b = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 2 }, Selection::Random);
    b.commit_task(&tasks[0], None, &mut Rng::new(0)).unwrap();
    assert!(b.commit_task(&tasks[0], None, &mut Rng::new(0)).is_err());
}

#[test]
fn stored_rows_are_copies_of_train_rows() {
    let tasks = stream(3, 2, 3, 6);
    let mut b = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 4 }, Selection::Random);
    let mut rng = Rng::new(3);
    for t in &tasks {
        b.commit_task(t, None, &mut rng).unwrap();
    }
    for stored in b.classes() {
        let class = tasks.iter().flat_map(|t| &t.classes).find(|c| c.class_id == stored.class_id).unwrap();
        for (k, &i) in stored.train_rows.iter().enumerate() {
            assert_eq!(stored.rows.row(k), class.train.row(i));
        }
    }
}

#[test]
fn save_load_round_trip() {
    let tasks = stream(5, 2, 3, 6);
    let mut b = ExemplarBuffer::new(BufferPolicy::Bounded { bf: 10 }, Selection::Random);
    let mut rng = Rng::new(5);
    for t in &tasks {
        b.commit_task(t, None, &mut rng).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    b.save(tmp.path()).unwrap();
    assert!(ExemplarBuffer::load(tmp.path()).unwrap().bit_eq(&b));
}
