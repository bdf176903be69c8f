//! Episode construction: standard episodes, cross-task sub-episodes that mix
//! current classes with remembered ones, and exemplar-only sub-episodes.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{ClassDataset, ClassId, Split, Task};
use crate::error::{Error, Result};
use crate::memory::ExemplarBuffer;
use crate::rng::Rng;

/// `n_way` classes, `k_shot` support and `k_query` query rows per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub k_query: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            k_query: 15,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.k_query == 0 {
            return Err(Error::Validation(format!("episode spec must be all >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn rows_per_class(&self) -> usize {
        self.k_shot + self.k_query
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Exactly `round(n_way * p_prev)` remembered classes per episode.
    #[default]
    FixedCount,
    /// Each class slot is a remembered class with probability `p_prev`.
    Binomial,
    /// Classes drawn uniformly from everything seen so far; ignores `p_prev`.
    RandPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub p_prev: f64,
    #[serde(default)]
    pub strategy: Strategy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            p_prev: 0.2,
            strategy: Strategy::FixedCount,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_prev) {
            return Err(Error::Validation(format!("p_prev {} outside [0, 1]", self.p_prev)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Standard,
    CrossTask,
    Exemplar,
}

/// Where a row came from: a dataset split, or a slot in the exemplar buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowSource {
    Split(Split),
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowRef {
    pub class_id: ClassId,
    pub source: RowSource,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeClass {
    pub class_id: ClassId,
    /// 1-based task that introduced the class.
    pub origin_task: usize,
    pub from_buffer: bool,
}

/// One few-shot problem. Rows are grouped by episode class: rows
/// `k*K..(k+1)*K` of `support` belong to class `k`, likewise for `query`.
#[derive(Debug, Clone)]
pub struct Episode {
    pub kind: EpisodeKind,
    pub spec: EpisodeSpec,
    pub classes: Vec<EpisodeClass>,
    pub support: Tensor,
    pub query: Tensor,
    pub support_rows: Vec<RowRef>,
    pub query_rows: Vec<RowRef>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        (0..self.n_way())
            .flat_map(|k| std::iter::repeat_n(k, self.spec.k_shot))
            .collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        (0..self.n_way())
            .flat_map(|k| std::iter::repeat_n(k, self.spec.k_query))
            .collect()
    }

    /// Support row indices of each episode class.
    pub fn support_groups(&self) -> Vec<Vec<usize>> {
        let k = self.spec.k_shot;
        (0..self.n_way()).map(|c| (c * k..(c + 1) * k).collect()).collect()
    }

    pub fn n_previous_classes(&self) -> usize {
        self.classes.iter().filter(|c| c.from_buffer).count()
    }
}

/// A class as seen by the sampler: its candidate rows and where they live.
#[derive(Debug, Clone, Copy)]
pub struct PoolClass<'a> {
    pub class_id: ClassId,
    pub origin_task: usize,
    pub rows: &'a Tensor,
    pub source: RowSource,
}

impl<'a> PoolClass<'a> {
    pub fn from_split(class: &'a ClassDataset, origin_task: usize, split: Split) -> Self {
        Self {
            class_id: class.class_id,
            origin_task,
            rows: class.split(split),
            source: RowSource::Split(split),
        }
    }
}

pub fn task_pool(task: &Task, split: Split) -> Vec<PoolClass<'_>> {
    task.classes
        .iter()
        .map(|c| PoolClass::from_split(c, task.number, split))
        .collect()
}

/// Draws support and query row indices for one class.
///
/// Buffer classes shorter than `K + K^Q` take support without replacement
/// and fill the query with replacement from the rows left over.
fn draw_rows(class: &PoolClass<'_>, spec: &EpisodeSpec, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let count = class.rows.rows();
    let need = spec.rows_per_class();
    if count >= need {
        let mut idx = rng.choose_indices(count, need);
        let query = idx.split_off(spec.k_shot);
        return Ok((idx, query));
    }
    if class.source == RowSource::Buffer && count > spec.k_shot {
        let order = rng.choose_indices(count, count);
        let (support, rest) = order.split_at(spec.k_shot);
        let query = (0..spec.k_query).map(|_| rest[rng.below(rest.len())]).collect();
        return Ok((support.to_vec(), query));
    }
    Err(Error::Sampling(format!(
        "class {} has {count} rows, episode needs {need}",
        class.class_id
    )))
}

fn assemble(
    kind: EpisodeKind,
    spec: &EpisodeSpec,
    chosen: &[&PoolClass<'_>],
    rng: &mut Rng,
) -> Result<Episode> {
    let dim = chosen[0].rows.cols();
    let mut support = Vec::with_capacity(chosen.len() * spec.k_shot * dim);
    let mut query = Vec::with_capacity(chosen.len() * spec.k_query * dim);
    let mut support_rows = Vec::new();
    let mut query_rows = Vec::new();
    let mut classes = Vec::with_capacity(chosen.len());
    for class in chosen {
        if class.rows.cols() != dim {
            return Err(Error::Dimension(format!(
                "class {} has width {}, episode width is {dim}",
                class.class_id,
                class.rows.cols()
            )));
        }
        let (s, q) = draw_rows(class, spec, rng)?;
        for (idx, data, refs) in [(&s, &mut support, &mut support_rows), (&q, &mut query, &mut query_rows)] {
            for &i in idx {
                data.extend_from_slice(class.rows.row(i));
                refs.push(RowRef {
                    class_id: class.class_id,
                    source: class.source,
                    index: i,
                });
            }
        }
        classes.push(EpisodeClass {
            class_id: class.class_id,
            origin_task: class.origin_task,
            from_buffer: class.source == RowSource::Buffer,
        });
    }
    Ok(Episode {
        kind,
        spec: *spec,
        support: Tensor::matrix(support_rows.len(), dim, support)?,
        query: Tensor::matrix(query_rows.len(), dim, query)?,
        support_rows,
        query_rows,
        classes,
    })
}

/// `n_way` classes uniformly without replacement from `pool`.
pub fn sample_from_pool(
    pool: &[PoolClass<'_>],
    spec: &EpisodeSpec,
    kind: EpisodeKind,
    rng: &mut Rng,
) -> Result<Episode> {
    spec.validate()?;
    if pool.len() < spec.n_way {
        return Err(Error::Sampling(format!(
            "{}-way episode from {} classes",
            spec.n_way,
            pool.len()
        )));
    }
    let picks = rng.choose_indices(pool.len(), spec.n_way);
    let chosen: Vec<&PoolClass<'_>> = picks.iter().map(|&i| &pool[i]).collect();
    assemble(kind, spec, &chosen, rng)
}

/// A standard episode from one task's split.
pub fn sample_standard(task: &Task, split: Split, spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
    sample_from_pool(&task_pool(task, split), spec, EpisodeKind::Standard, rng)
}

/// A cross-task sub-episode: remembered classes come from the buffer only,
/// current classes from the current task's train split.
pub fn sample_cross_task(
    current: &Task,
    buffer: &ExemplarBuffer,
    spec: &EpisodeSpec,
    config: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Episode> {
    spec.validate()?;
    let now = task_pool(current, Split::Train);
    let prev = buffer.pool();
    let n = spec.n_way;

    if config.strategy == Strategy::RandPool && !prev.is_empty() {
        let all: Vec<PoolClass<'_>> = prev.iter().chain(&now).copied().collect();
        return sample_from_pool(&all, spec, EpisodeKind::CrossTask, rng);
    }

    let n_prev = if prev.is_empty() {
        0
    } else {
        match config.strategy {
            Strategy::FixedCount => (n as f64 * config.p_prev).round() as usize,
            Strategy::Binomial => (0..n).filter(|_| rng.bernoulli(config.p_prev)).count(),
            Strategy::RandPool => unreachable!(),
        }
    };
    if n_prev > prev.len() {
        return Err(Error::Sampling(format!(
            "{n_prev} previous classes requested, buffer holds {}",
            prev.len()
        )));
    }
    if n - n_prev > now.len() {
        return Err(Error::Sampling(format!(
            "{} current classes requested, task {} has {}",
            n - n_prev,
            current.number,
            now.len()
        )));
    }
    // picking distinct indices is the same as redrawing duplicate classes
    let mut chosen: Vec<&PoolClass<'_>> = rng
        .choose_indices(prev.len(), n_prev)
        .into_iter()
        .map(|i| &prev[i])
        .chain(rng.choose_indices(now.len(), n - n_prev).into_iter().map(|i| &now[i]))
        .collect();
    rng.shuffle(&mut chosen);
    assemble(EpisodeKind::CrossTask, spec, &chosen, rng)
}

/// An exemplar sub-episode drawn entirely from buffer contents.
pub fn sample_exemplar(buffer: &ExemplarBuffer, spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
    let pool = buffer.pool();
    if pool.is_empty() {
        return Err(Error::Sampling("exemplar buffer is empty".into()));
    }
    sample_from_pool(&pool, spec, EpisodeKind::Exemplar, rng)
}
