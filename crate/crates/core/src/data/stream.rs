use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dataset::{validate_classes, ClassDataset, ClassId};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One group of new classes. `number` is 1-based.
#[derive(Debug, Clone)]
pub struct Task {
    pub number: usize,
    pub classes: Vec<ClassDataset>,
}

impl Task {
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.class_id).collect()
    }
}

/// Disjoint training tasks plus held-out meta-test classes.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub meta_test: Vec<ClassDataset>,
}

/// Class-id assignment of a stream, as written by the `split` command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamLayout {
    pub tasks: Vec<Vec<ClassId>>,
    pub meta_test: Vec<ClassId>,
}

impl TaskStream {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task by 1-based number.
    pub fn task(&self, number: usize) -> &Task {
        &self.tasks[number - 1]
    }

    pub fn dim(&self) -> usize {
        self.tasks
            .first()
            .and_then(|t| t.classes.first())
            .or(self.meta_test.first())
            .map_or(0, ClassDataset::dim)
    }

    pub fn layout(&self) -> StreamLayout {
        StreamLayout {
            tasks: self.tasks.iter().map(Task::class_ids).collect(),
            meta_test: self.meta_test.iter().map(|c| c.class_id).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let per_task = self.tasks.first().map_or(0, |t| t.classes.len());
        for (i, task) in self.tasks.iter().enumerate() {
            if task.number != i + 1 {
                return Err(Error::Validation(format!(
                    "task at position {i} is numbered {}",
                    task.number
                )));
            }
            if task.classes.len() != per_task {
                return Err(Error::Validation(format!(
                    "task {} has {} classes, expected {per_task}",
                    task.number,
                    task.classes.len()
                )));
            }
        }
        for c in self.tasks.iter().flat_map(|t| &t.classes).chain(&self.meta_test) {
            if !seen.insert(c.class_id) {
                return Err(Error::Validation(format!(
                    "class {} appears more than once",
                    c.class_id
                )));
            }
        }
        Ok(())
    }
}

/// Shuffles classes with `seed`; the first `n_meta_test` become the meta-test
/// pool and the rest fill `n_tasks` tasks of `classes_per_task` in order.
pub fn build_task_stream(
    mut classes: Vec<ClassDataset>,
    n_tasks: usize,
    classes_per_task: usize,
    n_meta_test: usize,
    seed: u64,
) -> Result<TaskStream> {
    let needed = n_tasks * classes_per_task + n_meta_test;
    if classes.len() != needed {
        return Err(Error::Validation(format!(
            "{} classes cannot form {n_tasks} tasks x {classes_per_task} + {n_meta_test} meta-test",
            classes.len()
        )));
    }
    if n_tasks == 0 || classes_per_task == 0 {
        return Err(Error::Validation("need at least one task with one class".into()));
    }
    validate_classes(&classes)?;
    classes.sort_by_key(|c| c.class_id);
    Rng::new(seed).shuffle(&mut classes);
    let mut rest = classes.split_off(n_meta_test);
    let meta_test = classes;
    let mut tasks = Vec::with_capacity(n_tasks);
    for number in 1..=n_tasks {
        let tail = rest.split_off(classes_per_task);
        tasks.push(Task {
            number,
            classes: rest,
        });
        rest = tail;
    }
    let stream = TaskStream { tasks, meta_test };
    stream.validate()?;
    Ok(stream)
}
