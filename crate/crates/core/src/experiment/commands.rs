use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::config::{set_path, ExperimentConfig};
use crate::data::{generate_synthetic, save_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{append_jsonl, eval_meta_test, eval_seen, write_csv, MetricKind, MetricRecord};
use crate::exec::Exec;
use crate::learners::Model;
use crate::trainer::SessionResult;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const SWEEP_CSV: &str = "sweep.csv";

pub fn session_dir(out: &Path, session: usize) -> PathBuf {
    out.join(format!("session_{session:03}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

/// Generates a synthetic dataset into `out`. Nothing is written when the
/// spec is invalid.
pub fn gen_synth(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let classes = generate_synthetic(spec)?;
    save_dataset(out, &classes)
}

/// Writes the task/meta-test class assignment to `out/split.json`.
pub fn split(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let stream = config.build_stream()?;
    create_dir(out)?;
    write_json(&out.join(SPLIT_FILE), &stream.layout())
}

/// Trains as configured, writing the resolved config, per-session
/// checkpoints and metrics as each session finishes. Returns every metric
/// record in emission order.
pub fn train(config: &ExperimentConfig, out: &Path, exec: Exec) -> Result<Vec<MetricRecord>> {
    let stream = config.build_stream()?;
    let trainer = config.trainer(exec);
    trainer.validate(&stream)?;
    create_dir(out)?;
    write_json(&out.join(RESOLVED_CONFIG), &config.resolved())?;
    let jsonl = out.join(METRICS_JSONL);
    if jsonl.exists() {
        fs::remove_file(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
    }
    let mut all = Vec::new();
    let mut flush = |s: &SessionResult| -> Result<()> {
        let dir = session_dir(out, s.session);
        s.model.save(&dir.join("model"))?;
        if let Some(b) = &s.buffer {
            b.save(&dir.join("buffer"))?;
        }
        append_jsonl(&jsonl, &s.metrics)?;
        all.extend(s.metrics.iter().cloned());
        Ok(())
    };
    trainer.run(&stream, &mut flush)?;
    write_csv(&out.join(METRICS_CSV), &all)?;
    Ok(all)
}

/// Evaluates a saved model on the meta-test pool and on tasks
/// `1..=session` (all tasks when `session` is `None`).
pub fn eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    session: Option<usize>,
    out: &Path,
    exec: Exec,
) -> Result<Vec<MetricRecord>> {
    let stream = config.build_stream()?;
    let model = Model::load(checkpoint)?;
    if model.kind != config.learner.kind {
        return Err(Error::Config(format!(
            "checkpoint holds a {:?} model, config says {:?}",
            model.kind, config.learner.kind
        )));
    }
    let session = session.unwrap_or(stream.n_tasks());
    let mut records = Vec::new();
    if !stream.meta_test.is_empty() {
        records.push(eval_meta_test(&model, &stream, session, &config.episode, &config.eval, exec)?);
    }
    records.extend(eval_seen(&model, &stream, session, &config.episode, &config.eval, exec)?);
    create_dir(out)?;
    let jsonl = out.join(METRICS_JSONL);
    if jsonl.exists() {
        fs::remove_file(&jsonl).map_err(|e| Error::io(&jsonl, e))?;
    }
    append_jsonl(&jsonl, &records)?;
    write_csv(&out.join(METRICS_CSV), &records)?;
    Ok(records)
}

/// Config key for a sweep axis. Short names are accepted for the common
/// axes; anything else is taken as a dotted config path.
pub fn axis_key(axis: &str) -> &str {
    match axis {
        "p" | "p_prev" => "sampler.p_prev",
        "lambda_m" => "weights.lambda_m",
        "lambda_e" => "weights.lambda_e",
        other => other,
    }
}

/// `config` with one sweep value applied.
pub fn sweep_point(config: &ExperimentConfig, axis: &str, value: &str) -> Result<ExperimentConfig> {
    let mut v = serde_json::to_value(config)?;
    let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    match axis {
        "n_ex" => set_path(&mut v, "buffer.policy", serde_json::json!({"kind": "per_class", "n_ex": parsed}))?,
        "bf" => set_path(&mut v, "buffer.policy", serde_json::json!({"kind": "bounded", "bf": parsed}))?,
        _ => set_path(&mut v, axis_key(axis), parsed)?,
    }
    ExperimentConfig::from_value(v)
}

/// Outcome of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    /// Every metric record of the run, or the error message.
    pub outcome: std::result::Result<Vec<MetricRecord>, String>,
}

impl SweepRow {
    /// Seen-mean record of the last session.
    pub fn final_seen(&self) -> Option<&MetricRecord> {
        let records = self.outcome.as_ref().ok()?;
        let last = records.iter().map(|r| r.session).max()?;
        records
            .iter()
            .find(|r| r.session == last && r.metric == MetricKind::SeenMeanAcc)
    }
}

pub const SWEEP_HEADER: &str = "axis,value,session,status,seen_mean,seen_ci95,meta_test,meta_test_ci95";

/// One training run per value, each in its own directory under `out`, all
/// with the base config's seed. A failing value is recorded and does not
/// stop the others. `sweep.csv` holds one line per value and session.
pub fn sweep(config: &ExperimentConfig, axis: &str, values: &[String], out: &Path, exec: Exec) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let points = values
        .iter()
        .map(|v| sweep_point(config, axis, v))
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let safe_axis = axis.replace('.', "_");
    let rows = exec.map(values.len(), |i| {
        let dir = out.join(format!("{safe_axis}_{}", values[i]));
        let outcome = train(&points[i], &dir, exec).map_err(|e| e.to_string());
        SweepRow {
            value: values[i].clone(),
            dir,
            outcome,
        }
    });
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        match &r.outcome {
            Ok(records) => {
                let mut sessions: Vec<usize> = records.iter().map(|x| x.session).collect();
                sessions.dedup();
                for s in sessions {
                    let pick = |k: MetricKind| {
                        records
                            .iter()
                            .find(|x| x.session == s && x.metric == k)
                            .map_or((String::new(), String::new()), |x| (x.mean.to_string(), x.ci95.to_string()))
                    };
                    let (sm, sc) = pick(MetricKind::SeenMeanAcc);
                    let (mm, mc) = pick(MetricKind::MetaTestAcc);
                    let _ = writeln!(csv, "{axis},{},{s},ok,{sm},{sc},{mm},{mc}", r.value);
                }
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                let _ = writeln!(csv, "{axis},{},,failed: {msg},,,,", r.value);
            }
        }
    }
    let path = out.join(SWEEP_CSV);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
