use std::collections::HashSet;

use erd::data::Split;
use erd::memory::{BufferPolicy, ExemplarBuffer, Selection};
use erd::rng::Rng;
use erd::sampler::{
    sample_cross_task, sample_exemplar, sample_standard, Episode, EpisodeKind, EpisodeSpec, RowSource, SamplerConfig,
    Strategy,
};
use proptest::prelude::*;

mod common;
use common::{classes, tasks_of};

fn check_shape(ep: &Episode) {
    let s = ep.spec;
    assert_eq!(ep.n_way(), s.n_way);
    assert_eq!(ep.support.rows(), s.n_way * s.k_shot);
    assert_eq!(ep.query.rows(), s.n_way * s.k_query);
    assert_eq!(ep.support_rows.len(), ep.support.rows());
    assert_eq!(ep.query_rows.len(), ep.query.rows());
    let ids: HashSet<u32> = ep.classes.iter().map(|c| c.class_id).collect();
    assert_eq!(ids.len(), s.n_way, "classes must be distinct");
    for (k, c) in ep.classes.iter().enumerate() {
        let mine = ep.support_rows[k * s.k_shot..(k + 1) * s.k_shot]
            .iter()
            .chain(&ep.query_rows[k * s.k_query..(k + 1) * s.k_query]);
        let mut seen = HashSet::new();
        for r in mine {
            assert_eq!(r.class_id, c.class_id);
            assert!(seen.insert((r.source, r.index)), "row reused within a class");
        }
    }
    assert_eq!(ep.support_labels().len(), ep.support.rows());
    assert_eq!(*ep.query_labels().last().unwrap(), s.n_way - 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_well_formed(seed in any::<u64>(), n_way in 1usize..5, k_shot in 1usize..3, k_query in 1usize..4, p in 0.0f64..=1.0) {
        let all = classes(10, 3, 6, seed);
        let tasks = tasks_of(&all, 5);
        let mut rng = Rng::new(seed);
        let mut buffer = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 6 }, Selection::Random);
        buffer.commit_task(&tasks[0], None, &mut rng).unwrap();
        let spec = EpisodeSpec { n_way, k_shot, k_query };

        let st = sample_standard(&tasks[1], Split::Train, &spec, &mut rng).unwrap();
        check_shape(&st);
        prop_assert!(st.support_rows.iter().chain(&st.query_rows).all(|r| r.source == RowSource::Split(Split::Train)));
        prop_assert_eq!(st.n_previous_classes(), 0);

        for strategy in [Strategy::FixedCount, Strategy::Binomial, Strategy::RandPool] {
            let cfg = SamplerConfig { p_prev: p, strategy };
            let ep = sample_cross_task(&tasks[1], &buffer, &spec, &cfg, &mut rng).unwrap();
            check_shape(&ep);
            prop_assert_eq!(ep.kind, EpisodeKind::CrossTask);
            for (k, c) in ep.classes.iter().enumerate() {
                let want = if c.from_buffer { RowSource::Buffer } else { RowSource::Split(Split::Train) };
                prop_assert_eq!(c.origin_task, if c.from_buffer { 1 } else { 2 });
                prop_assert!(ep.support_rows[k * k_shot..(k + 1) * k_shot].iter().all(|r| r.source == want));
            }
            if strategy == Strategy::FixedCount {
                prop_assert_eq!(ep.n_previous_classes(), (n_way as f64 * p).round() as usize);
            }
        }

        let ex = sample_exemplar(&buffer, &spec, &mut rng).unwrap();
        check_shape(&ex);
        prop_assert!(ex.classes.iter().all(|c| c.from_buffer && c.origin_task == 1));
    }
}

#[test]
fn rand_pool_only_uses_seen_classes() {
    let all = classes(15, 3, 5, 4);
    let tasks = tasks_of(&all, 5);
    let mut rng = Rng::new(4);
    let mut buffer = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 5 }, Selection::Random);
    buffer.commit_task(&tasks[0], None, &mut rng).unwrap();
    let seen: HashSet<u32> = tasks[0].class_ids().into_iter().chain(tasks[1].class_ids()).collect();
    let unseen: HashSet<u32> = tasks[2].class_ids().into_iter().collect();
    let spec = EpisodeSpec { n_way: 5, k_shot: 1, k_query: 2 };
    let cfg = SamplerConfig { p_prev: 0.0, strategy: Strategy::RandPool };
    let mut any_prev = false;
    for _ in 0..200 {
        let ep = sample_cross_task(&tasks[1], &buffer, &spec, &cfg, &mut rng).unwrap();
        for c in &ep.classes {
            assert!(seen.contains(&c.class_id) && !unseen.contains(&c.class_id));
        }
        any_prev |= ep.n_previous_classes() > 0;
    }
    assert!(any_prev, "rand_pool ignores p_prev and should reach the buffer");
}

#[test]
fn empty_buffer_gives_current_classes_only() {
    let all = classes(5, 3, 5, 2);
    let tasks = tasks_of(&all, 5);
    let buffer = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: 5 }, Selection::Random);
    let spec = EpisodeSpec { n_way: 5, k_shot: 1, k_query: 2 };
    let cfg = SamplerConfig { p_prev: 1.0, strategy: Strategy::FixedCount };
    let ep = sample_cross_task(&tasks[0], &buffer, &spec, &cfg, &mut Rng::new(0)).unwrap();
    assert_eq!(ep.n_previous_classes(), 0);
    assert!(sample_exemplar(&buffer, &spec, &mut Rng::new(0)).is_err());
}

#[test]
fn too_few_rows_or_classes_is_an_error() {
    let all = classes(5, 3, 3, 2);
    let tasks = tasks_of(&all, 5);
    let mut rng = Rng::new(0);
    assert!(sample_standard(&tasks[0], Split::Train, &EpisodeSpec { n_way: 6, k_shot: 1, k_query: 1 }, &mut rng).is_err());
    assert!(sample_standard(&tasks[0], Split::Train, &EpisodeSpec { n_way: 2, k_shot: 2, k_query: 2 }, &mut rng).is_err());
    assert!(sample_standard(&tasks[0], Split::Train, &EpisodeSpec { n_way: 2, k_shot: 0, k_query: 2 }, &mut rng).is_err());
}

#[test]
fn same_seed_same_episode() {
    let all = classes(5, 3, 8, 1);
    let tasks = tasks_of(&all, 5);
    let spec = EpisodeSpec { n_way: 3, k_shot: 2, k_query: 3 };
    let a = sample_standard(&tasks[0], Split::Test, &spec, &mut Rng::new(77)).unwrap();
    let b = sample_standard(&tasks[0], Split::Test, &spec, &mut Rng::new(77)).unwrap();
    assert_eq!(a.support_rows, b.support_rows);
    assert_eq!(a.query_rows, b.query_rows);
    assert!(a.support.bit_eq(&b.support));
}
