#![allow(dead_code)]

use erd::autodiff::Tensor;
use erd::data::{generate_synthetic, ClassDataset, SyntheticSpec, Task};
use erd::learners::{LearnerConfig, LearnerKind, Model};
use erd::memory::{BufferPolicy, ExemplarBuffer, Selection};
use erd::rng::Rng;
use erd::sampler::{sample_cross_task, sample_exemplar, sample_standard, Episode, EpisodeSpec, SamplerConfig, Strategy};

pub fn classes(n_classes: usize, dim: usize, rows: usize, seed: u64) -> Vec<ClassDataset> {
    generate_synthetic(&SyntheticSpec {
        n_classes,
        dim,
        per_class_train: rows,
        per_class_test: rows,
        mean_radius: 2.0,
        noise_sigma: 0.5,
        seed,
    })
    .unwrap()
}

pub fn tasks_of(classes: &[ClassDataset], per_task: usize) -> Vec<Task> {
    classes
        .chunks(per_task)
        .enumerate()
        .map(|(i, c)| Task {
            number: i + 1,
            classes: c.to_vec(),
        })
        .collect()
}

pub fn small_model(kind: LearnerKind, dim: usize, seed: u64) -> Model {
    let config = LearnerConfig {
        kind,
        layer_widths: vec![dim, 6, 3],
        relation_hidden: vec![5],
    };
    Model::new(&config, seed).unwrap()
}

/// A standard, a cross-task and an exemplar episode from a two-task toy
/// stream whose first task is already in the buffer.
pub struct ToyEpisodes {
    pub standard: Episode,
    pub cross: Episode,
    pub exemplar: Episode,
}

pub fn toy_episodes(n_way: usize, k_shot: usize, k_query: usize, dim: usize, seed: u64) -> ToyEpisodes {
    let all = classes(2 * n_way, dim, k_shot + k_query + 4, seed);
    let tasks = tasks_of(&all, n_way);
    let mut buffer = ExemplarBuffer::new(BufferPolicy::PerClass { n_ex: k_shot + k_query + 2 }, Selection::Random);
    let mut rng = Rng::new(seed ^ 0x55);
    buffer.commit_task(&tasks[0], None, &mut rng).unwrap();
    let spec = EpisodeSpec {
        n_way,
        k_shot,
        k_query,
    };
    let sampler = SamplerConfig {
        p_prev: 0.5,
        strategy: Strategy::FixedCount,
    };
    ToyEpisodes {
        standard: sample_standard(&tasks[1], erd::data::Split::Train, &spec, &mut rng).unwrap(),
        cross: sample_cross_task(&tasks[1], &buffer, &spec, &sampler, &mut rng).unwrap(),
        exemplar: sample_exemplar(&buffer, &spec, &mut rng).unwrap(),
    }
}

/// Row-major `f64` copy of a tensor's rows.
pub fn rows_f64(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect()
}

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| (rng.normal() * scale) as f32).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// A stream of `n_tasks` x `per_task` classes plus `n_meta` meta-test
/// classes, 8 features, 12 rows per split.
pub fn tiny_stream(n_tasks: usize, per_task: usize, n_meta: usize, seed: u64) -> erd::data::TaskStream {
    let all = classes(n_tasks * per_task + n_meta, 8, 12, seed);
    erd::data::build_task_stream(all, n_tasks, per_task, n_meta, seed).unwrap()
}

/// A few-step trainer sized for [`tiny_stream`].
pub fn tiny_trainer(kind: LearnerKind, method: erd::trainer::Method, seed: u64) -> erd::trainer::Trainer {
    let mut t = erd::trainer::Trainer::default();
    t.train.method = method;
    t.train.epochs_per_task = 2;
    t.train.episodes_per_epoch = 5;
    t.train.seed = seed;
    t.learner = LearnerConfig {
        kind,
        layer_widths: vec![8, 6, 4],
        relation_hidden: vec![4],
    };
    t.episode = EpisodeSpec {
        n_way: 3,
        k_shot: 1,
        k_query: 3,
    };
    t.buffer.policy = BufferPolicy::PerClass { n_ex: 5 };
    t.eval.n_episodes = 20;
    t.exec = erd::exec::Exec::Sequential;
    t
}
