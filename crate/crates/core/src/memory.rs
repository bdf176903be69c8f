//! Exemplar memory of past tasks.
//!
//! Two budgets are supported: a fixed number of exemplars per class (the
//! memory grows with every task) and a bounded total shared equally by all
//! stored classes. Under NTC selection a class's rows are kept sorted by
//! embedding distance to the class mean, so shrinking a class to its quota
//! drops the farthest rows first.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{format, ClassId, Task};
use crate::error::{Error, Result};
use crate::learners::Embedder;
use crate::rng::Rng;
use crate::sampler::{PoolClass, RowSource};

pub const BUFFER_MANIFEST: &str = "buffer.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BufferPolicy {
    PerClass { n_ex: usize },
    Bounded { bf: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Nearest to the class-mean embedding.
    Ntc,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredClass {
    pub class_id: ClassId,
    pub origin_task: usize,
    /// Copies of the selected train rows, in selection order.
    pub rows: Tensor,
    /// Train-split index of each stored row.
    pub train_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferStats {
    pub n_classes: usize,
    pub total_rows: usize,
    pub per_class_counts: BTreeMap<ClassId, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarBuffer {
    policy: BufferPolicy,
    selection: Selection,
    classes: BTreeMap<ClassId, StoredClass>,
}

/// Orders rows for storage and returns the first `n` (all rows if `n` is
/// larger than the class).
///
/// NTC sorts by squared embedding distance to the mean embedding, ties to
/// the lower row index. Random returns a uniform subset in draw order.
pub fn select_exemplars(
    rows: &Tensor,
    embedder: Option<&dyn Embedder>,
    n: usize,
    selection: Selection,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let count = rows.rows();
    let n = n.min(count);
    match selection {
        Selection::Random => Ok(rng.choose_indices(count, n)),
        Selection::Ntc => {
            let embedder = embedder
                .ok_or_else(|| Error::Precondition("NTC selection needs an embedding model".into()))?;
            let emb = embedder.embed(rows)?;
            let order = ntc_order(&emb);
            Ok(order[..n].to_vec())
        }
    }
}

/// Row indices sorted by squared distance to the mean row.
fn ntc_order(emb: &Tensor) -> Vec<usize> {
    let (count, e) = emb.matrix_dims();
    let mut mean = vec![0.0f64; e];
    for i in 0..count {
        for (m, v) in mean.iter_mut().zip(emb.row(i)) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let dist: Vec<f64> = (0..count)
        .map(|i| {
            emb.row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| (*v as f64 - m).powi(2))
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    order
}

impl ExemplarBuffer {
    pub fn new(policy: BufferPolicy, selection: Selection) -> Self {
        Self {
            policy,
            selection,
            classes: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> BufferPolicy {
        self.policy
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = &StoredClass> {
        self.classes.values()
    }

    pub fn class(&self, id: ClassId) -> Option<&StoredClass> {
        self.classes.get(&id)
    }

    /// Stored classes with at least one row, by ascending class id.
    pub fn pool(&self) -> Vec<PoolClass<'_>> {
        self.classes
            .values()
            .filter(|c| c.rows.rows() > 0)
            .map(|c| PoolClass {
                class_id: c.class_id,
                origin_task: c.origin_task,
                rows: &c.rows,
                source: RowSource::Buffer,
            })
            .collect()
    }

    pub fn stats(&self) -> BufferStats {
        let per_class_counts: BTreeMap<ClassId, usize> =
            self.classes.values().map(|c| (c.class_id, c.rows.rows())).collect();
        BufferStats {
            n_classes: per_class_counts.len(),
            total_rows: per_class_counts.values().sum(),
            per_class_counts,
        }
    }

    /// Per-class row quota once `ids` are all stored.
    fn bounded_quotas(bf: usize, ids: &[ClassId]) -> BTreeMap<ClassId, usize> {
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let n = sorted.len().max(1);
        let base = bf / n;
        let extra = bf - base * n;
        sorted
            .iter()
            .enumerate()
            .map(|(rank, &id)| (id, base + usize::from(rank < extra)))
            .collect()
    }

    /// Stores exemplars of every class in `task`, then enforces the budget.
    ///
    /// `embedder` is the model at the end of `task` and is required for NTC.
    pub fn commit_task(&mut self, task: &Task, embedder: Option<&dyn Embedder>, rng: &mut Rng) -> Result<()> {
        for c in &task.classes {
            if self.classes.contains_key(&c.class_id) {
                return Err(Error::Validation(format!(
                    "class {} is already in the buffer",
                    c.class_id
                )));
            }
        }
        let quotas = match self.policy {
            BufferPolicy::PerClass { .. } => None,
            BufferPolicy::Bounded { bf } => {
                let ids: Vec<ClassId> = self
                    .classes
                    .keys()
                    .copied()
                    .chain(task.classes.iter().map(|c| c.class_id))
                    .collect();
                Some(Self::bounded_quotas(bf, &ids))
            }
        };
        for c in &task.classes {
            let n = match (&self.policy, &quotas) {
                (BufferPolicy::PerClass { n_ex }, _) => *n_ex,
                (_, Some(q)) => q[&c.class_id],
                _ => unreachable!(),
            };
            let picked = select_exemplars(&c.train, embedder, n, self.selection, rng)?;
            let rows: Vec<&[f32]> = picked.iter().map(|&i| c.train.row(i)).collect();
            let rows = if rows.is_empty() {
                Tensor::matrix(0, c.dim(), Vec::new())?
            } else {
                Tensor::from_rows(&rows)?
            };
            self.classes.insert(
                c.class_id,
                StoredClass {
                    class_id: c.class_id,
                    origin_task: task.number,
                    rows,
                    train_rows: picked,
                },
            );
        }
        if let Some(quotas) = quotas {
            for (id, stored) in self.classes.iter_mut() {
                let keep = quotas[id].min(stored.rows.rows());
                if keep < stored.rows.rows() {
                    let dim = stored.rows.cols();
                    let data = stored.rows.data()[..keep * dim].to_vec();
                    stored.rows = Tensor::matrix(keep, dim, data)?;
                    stored.train_rows.truncate(keep);
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut classes = Vec::with_capacity(self.classes.len());
        for c in self.classes.values() {
            let file = format!("class_{:05}.emlt", c.class_id);
            format::write(&dir.join(&file), &c.rows)?;
            classes.push(ManifestClass {
                id: c.class_id,
                origin_task: c.origin_task,
                file,
                train_rows: c.train_rows.clone(),
            });
        }
        let manifest = BufferManifest {
            policy: self.policy,
            selection: self.selection,
            classes,
        };
        let path = dir.join(BUFFER_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(BUFFER_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: BufferManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        let mut classes = BTreeMap::new();
        for entry in m.classes {
            let rows = format::read(&dir.join(&entry.file))?;
            if rows.rows() != entry.train_rows.len() {
                return Err(Error::format(
                    &path,
                    format!("class {}: {} rows but {} train indices", entry.id, rows.rows(), entry.train_rows.len()),
                ));
            }
            classes.insert(
                entry.id,
                StoredClass {
                    class_id: entry.id,
                    origin_task: entry.origin_task,
                    rows,
                    train_rows: entry.train_rows,
                },
            );
        }
        Ok(Self {
            policy: m.policy,
            selection: m.selection,
            classes,
        })
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.policy == other.policy
            && self.selection == other.selection
            && self.classes.len() == other.classes.len()
            && self.classes.values().zip(other.classes.values()).all(|(a, b)| {
                a.class_id == b.class_id
                    && a.origin_task == b.origin_task
                    && a.train_rows == b.train_rows
                    && a.rows.bit_eq(&b.rows)
            })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferManifest {
    policy: BufferPolicy,
    selection: Selection,
    classes: Vec<ManifestClass>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestClass {
    id: ClassId,
    origin_task: usize,
    file: String,
    train_rows: Vec<usize>,
}
