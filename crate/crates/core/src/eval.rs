//! Episodic evaluation: mean few-shot accuracy with a 95% confidence
//! half-width, on the meta-test pool and on every task seen so far.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{ClassDataset, Split, TaskStream};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::learners::{predict_embedded, Embedder, Model};
use crate::rng::{derive_seed, Rng};
use crate::sampler::{sample_from_pool, Episode, EpisodeKind, EpisodeSpec, PoolClass, RowSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MetaTestAcc,
    SeenMeanAcc,
    PerTaskAcc,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::MetaTestAcc => "meta_test_acc",
            MetricKind::SeenMeanAcc => "seen_mean_acc",
            MetricKind::PerTaskAcc => "per_task_acc",
        }
    }
}

/// One evaluation result; one JSON line in `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub session: usize,
    pub metric: MetricKind,
    /// Set for `per_task_acc` only.
    pub task_id: Option<usize>,
    pub mean: f64,
    pub ci95: f64,
    pub n_episodes: usize,
    pub shots: usize,
    pub ways: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Episodes for the meta-test pool and for each seen task.
    pub n_episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_episodes: 1000,
            seed: 2024,
        }
    }
}

/// Per-episode accuracies and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

impl EvalSummary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci95(&accuracies);
        Self {
            accuracies,
            mean,
            ci95,
        }
    }
}

/// Mean and `1.96 · s / √n`, with `s` the Bessel-corrected standard
/// deviation (zero for fewer than two values).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

fn check_pool(classes: &[ClassDataset], spec: &EpisodeSpec) -> Result<()> {
    if classes.len() < spec.n_way {
        return Err(Error::Evaluation(format!(
            "{}-way evaluation over {} classes",
            spec.n_way,
            classes.len()
        )));
    }
    for c in classes {
        if c.test.rows() < spec.rows_per_class() {
            return Err(Error::Evaluation(format!(
                "class {} has {} test rows, episodes need {}",
                c.class_id,
                c.test.rows(),
                spec.rows_per_class()
            )));
        }
    }
    Ok(())
}

fn test_pool<'a>(classes: &'a [ClassDataset], rows: &'a [Tensor]) -> Vec<PoolClass<'a>> {
    classes
        .iter()
        .zip(rows)
        .map(|(c, r)| PoolClass {
            class_id: c.class_id,
            origin_task: 0,
            rows: r,
            source: RowSource::Split(Split::Test),
        })
        .collect()
}

/// The `index`-th evaluation episode over the raw test rows of `classes`.
///
/// [`eval_episodic`] draws exactly these episodes (on embedded rows).
pub fn eval_episode(classes: &[ClassDataset], spec: &EpisodeSpec, seed: u64, index: usize) -> Result<Episode> {
    check_pool(classes, spec)?;
    let rows: Vec<Tensor> = classes.iter().map(|c| c.test.clone()).collect();
    let pool = test_pool(classes, &rows);
    sample_from_pool(&pool, spec, EpisodeKind::Standard, &mut Rng::stream(seed, index as u64))
}

/// Accuracy over `n_ep` standard episodes drawn from the test rows of
/// `classes`. Episode `i` uses its own seed, so the result does not depend
/// on execution order.
pub fn eval_episodic(
    model: &Model,
    classes: &[ClassDataset],
    spec: &EpisodeSpec,
    n_ep: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalSummary> {
    spec.validate()?;
    check_pool(classes, spec)?;
    // the model is fixed, so every test row is embedded once up front
    let embedded = classes
        .iter()
        .map(|c| model.embed(&c.test))
        .collect::<Result<Vec<_>>>()?;
    let pool = test_pool(classes, &embedded);
    let accuracies = exec
        .map(n_ep, |i| -> Result<f64> {
            let mut rng = Rng::stream(seed, i as u64);
            let ep = sample_from_pool(&pool, spec, EpisodeKind::Standard, &mut rng)
                .map_err(|e| Error::Evaluation(e.to_string()))?;
            let pred = predict_embedded(model, &ep.support, &ep.query, ep.n_way(), spec.k_shot)?;
            let correct = pred.iter().zip(ep.query_labels()).filter(|(p, y)| **p == *y).count();
            Ok(correct as f64 / pred.len() as f64)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_accuracies(accuracies))
}

fn record(session: usize, metric: MetricKind, task_id: Option<usize>, s: &EvalSummary, spec: &EpisodeSpec, seed: u64) -> MetricRecord {
    MetricRecord {
        session,
        metric,
        task_id,
        mean: s.mean,
        ci95: s.ci95,
        n_episodes: s.accuracies.len(),
        shots: spec.k_shot,
        ways: spec.n_way,
        seed,
    }
}

/// Accuracy on the meta-test classes, which no training task contains.
pub fn eval_meta_test(
    model: &Model,
    stream: &TaskStream,
    session: usize,
    spec: &EpisodeSpec,
    config: &EvalConfig,
    exec: Exec,
) -> Result<MetricRecord> {
    if stream.meta_test.is_empty() {
        return Err(Error::Evaluation("meta-test pool is empty".into()));
    }
    let seed = derive_seed(config.seed, 0);
    let s = eval_episodic(model, &stream.meta_test, spec, config.n_episodes, seed, exec)?;
    Ok(record(session, MetricKind::MetaTestAcc, None, &s, spec, config.seed))
}

/// Per-task accuracy on tasks `1..=current`, then their unweighted mean.
///
/// Returns `current` per-task records followed by the seen-mean record,
/// whose interval is computed over the pooled per-episode accuracies.
pub fn eval_seen(
    model: &Model,
    stream: &TaskStream,
    current: usize,
    spec: &EpisodeSpec,
    config: &EvalConfig,
    exec: Exec,
) -> Result<Vec<MetricRecord>> {
    if current == 0 || current > stream.n_tasks() {
        return Err(Error::Evaluation(format!(
            "task {current} outside 1..={}",
            stream.n_tasks()
        )));
    }
    let mut records = Vec::with_capacity(current + 1);
    let mut pooled = Vec::with_capacity(current * config.n_episodes);
    let mut means = Vec::with_capacity(current);
    for u in 1..=current {
        let seed = derive_seed(config.seed, u as u64);
        let s = eval_episodic(model, &stream.task(u).classes, spec, config.n_episodes, seed, exec)?;
        records.push(record(current, MetricKind::PerTaskAcc, Some(u), &s, spec, config.seed));
        means.push(s.mean);
        pooled.extend_from_slice(&s.accuracies);
    }
    let (_, ci95) = mean_ci95(&pooled);
    records.push(MetricRecord {
        session: current,
        metric: MetricKind::SeenMeanAcc,
        task_id: None,
        mean: means.iter().sum::<f64>() / means.len() as f64,
        ci95,
        n_episodes: pooled.len(),
        shots: spec.k_shot,
        ways: spec.n_way,
        seed: config.seed,
    });
    Ok(records)
}

pub fn append_jsonl(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

pub const CSV_HEADER: &str = "session,metric,task_id,mean,ci95,n_episodes";

pub fn csv_row(r: &MetricRecord) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.session,
        r.metric.as_str(),
        r.task_id.map(|t| t.to_string()).unwrap_or_default(),
        r.mean,
        r.ci95,
        r.n_episodes
    )
}

pub fn write_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_population_has_zero_interval() {
        let (m, ci) = mean_ci95(&[1.0; 50]);
        assert_eq!((m, ci), (1.0, 0.0));
    }

    #[test]
    fn ci_by_hand() {
        // mean 0.5, sample variance 1/3 · (0.25+0.25+0.25+0.25)·... computed directly
        let v = [0.0, 1.0, 0.0, 1.0];
        let (m, ci) = mean_ci95(&v);
        let s = (1.0f64 / 3.0).sqrt();
        assert_eq!(m, 0.5);
        assert!((ci - 1.96 * s / 2.0).abs() < 1e-15);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![
            MetricRecord {
                session: 3,
                metric: MetricKind::PerTaskAcc,
                task_id: Some(2),
                mean: 0.1 + 0.2,
                ci95: 1.0 / 3.0,
                n_episodes: 1000,
                shots: 1,
                ways: 5,
                seed: u64::MAX,
            },
            MetricRecord {
                session: 3,
                metric: MetricKind::SeenMeanAcc,
                task_id: None,
                mean: 0.123_456_789_012_345_67,
                ci95: 0.0,
                n_episodes: 3000,
                shots: 1,
                ways: 5,
                seed: 0,
            },
        ];
        append_jsonl(&p, &recs).unwrap();
        let back = read_jsonl(&p).unwrap();
        assert_eq!(back, recs);
        assert!(back.iter().zip(&recs).all(|(a, b)| a.mean.to_bits() == b.mean.to_bits()));
    }

    #[test]
    fn csv_layout() {
        let r = MetricRecord {
            session: 2,
            metric: MetricKind::PerTaskAcc,
            task_id: Some(1),
            mean: 0.5,
            ci95: 0.25,
            n_episodes: 10,
            shots: 1,
            ways: 5,
            seed: 0,
        };
        assert_eq!(csv_row(&r), "2,per_task_acc,1,0.5,0.25,10");
    }
}
