//! Incremental training over a task stream, plus the two reference regimes:
//! plain fine-tuning and joint training on every task at once.

mod adam;

pub use adam::{Adam, AdamConfig};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Split, Task, TaskStream};
use crate::distill::{combined_loss_var, proto_distill_on, relation_distill_on, DistillHead, LossWeights, TeacherSnapshot};
use crate::error::{Error, Result};
use crate::eval::{eval_meta_test, eval_seen, EvalConfig, MetricRecord};
use crate::exec::Exec;
use crate::learners::proto::proto_logits;
use crate::learners::relation::{embed_episode, relation_scores_on, relation_targets};
use crate::learners::{BoundModel, LearnerConfig, LearnerKind, Model};
use crate::memory::{BufferPolicy, ExemplarBuffer, Selection};
use crate::rng::{derive_seed, Rng};
use crate::sampler::{sample_cross_task, sample_exemplar, sample_standard, Episode, EpisodeSpec, SamplerConfig};

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const BUFFER_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Replay episodes from the exemplar memory and distil the previous model.
    #[default]
    Erd,
    /// Standard episodes from the current task only.
    Ft,
    /// Standard episodes over the union of all tasks; an upper reference.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs_per_task: usize,
    pub episodes_per_epoch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fresh optimizer moments at the start of every task.
    pub reset_optimizer: bool,
    /// Divide each loss term by its episode's query count.
    pub normalize_by_queries: bool,
    pub distill_head: DistillHead,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erd,
            epochs_per_task: 20,
            episodes_per_epoch: 50,
            learning_rate: 1e-3,
            seed: 0,
            reset_optimizer: true,
            normalize_by_queries: true,
            distill_head: DistillHead::Old,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 || self.episodes_per_epoch == 0 {
            return Err(Error::Validation("epochs and episodes per epoch must be >= 1".into()));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn steps_per_task(&self) -> usize {
        self.epochs_per_task * self.episodes_per_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionChoice {
    /// NTC for ProtoNet, random for RelationNet.
    #[default]
    Auto,
    Ntc,
    Random,
}

impl SelectionChoice {
    pub fn resolve(self, kind: LearnerKind) -> Selection {
        match (self, kind) {
            (SelectionChoice::Ntc, _) => Selection::Ntc,
            (SelectionChoice::Random, _) => Selection::Random,
            (SelectionChoice::Auto, LearnerKind::Proto) => Selection::Ntc,
            (SelectionChoice::Auto, LearnerKind::Relation) => Selection::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    pub policy: BufferPolicy,
    #[serde(default)]
    pub selection: SelectionChoice,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            policy: BufferPolicy::PerClass { n_ex: 20 },
            selection: SelectionChoice::Auto,
        }
    }
}

/// State after one session (one task, or the single joint session).
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub session: usize,
    pub model: Model,
    /// Memory after this session's commit (ERD only).
    pub buffer: Option<ExemplarBuffer>,
    pub metrics: Vec<MetricRecord>,
    /// Optimizer steps taken in this session.
    pub steps: usize,
    pub mean_loss: f64,
    /// Teacher snapshots taken so far in the run.
    pub teacher_snapshots: usize,
    pub wall_seconds: f64,
}

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trainer {
    pub train: TrainConfig,
    pub learner: LearnerConfig,
    pub weights: LossWeights,
    pub sampler: SamplerConfig,
    pub episode: EpisodeSpec,
    pub buffer: BufferConfig,
    pub eval: EvalConfig,
    pub exec: Exec,
}


/// Student-side tensors of one episode, shared by the meta and distillation
/// terms so the student forward pass runs once.
enum Forward {
    Proto { logits: Var },
    Relation { support: Var, query: Var },
}

fn forward(tape: &Tape, kind: LearnerKind, student: &BoundModel, ep: &Episode) -> Result<Forward> {
    Ok(match kind {
        LearnerKind::Proto => Forward::Proto {
            logits: proto_logits(tape, &student.embed, ep)?,
        },
        LearnerKind::Relation => {
            let (support, query) = embed_episode(tape, &student.embed, ep)?;
            Forward::Relation { support, query }
        }
    })
}

fn meta_term(tape: &Tape, student: &BoundModel, f: &Forward, ep: &Episode) -> Result<Var> {
    match *f {
        Forward::Proto { logits } => {
            let logp = tape.log_softmax(logits);
            tape.nll_sum(logp, ep.query_labels())
        }
        Forward::Relation { support, query } => {
            let scores = relation_scores_on(tape, student.relation()?, support, query)?;
            let targets = relation_targets(ep);
            let n_pairs = targets.len() as f64;
            let t = tape.leaf_f64(tape.shape(scores), targets, false)?;
            let mse = tape.mse(scores, t)?;
            Ok(tape.scale(mse, n_pairs))
        }
    }
}

fn distill_term(
    tape: &Tape,
    teacher: &TeacherSnapshot,
    student: &BoundModel,
    f: &Forward,
    ep: &Episode,
    head: DistillHead,
) -> Result<Var> {
    match *f {
        Forward::Proto { logits } => proto_distill_on(tape, Some(teacher), logits, ep),
        Forward::Relation { support, query } => {
            relation_distill_on(tape, Some(teacher), student, support, query, ep, head)
        }
    }
}

/// Adds a step's loss to the tape and returns it. With a teacher, `replay`
/// must hold the exemplar episode and `ep` is the cross-task episode.
pub(crate) fn step_loss(
    tape: &Tape,
    trainer: &Trainer,
    student: &BoundModel,
    ep: &Episode,
    replay: Option<(&TeacherSnapshot, &Episode)>,
) -> Result<Var> {
    let kind = trainer.learner.kind;
    let norm = |v: Var, e: &Episode| {
        if trainer.train.normalize_by_queries {
            tape.scale(v, 1.0 / e.query.rows() as f64)
        } else {
            v
        }
    };
    let f = forward(tape, kind, student, ep)?;
    let meta = norm(meta_term(tape, student, &f, ep)?, ep);
    let Some((teacher, ex)) = replay else {
        return Ok(meta);
    };
    let head = trainer.train.distill_head;
    let w = &trainer.weights;
    let dm = if w.lambda_m != 0.0 {
        Some(norm(distill_term(tape, teacher, student, &f, ep, head)?, ep))
    } else {
        None
    };
    let de = if w.lambda_e != 0.0 {
        let fe = forward(tape, kind, student, ex)?;
        Some(norm(distill_term(tape, teacher, student, &fe, ex, head)?, ex))
    } else {
        None
    };
    combined_loss_var(tape, meta, dm, de, w)
}

/// One optimizer step on `model`; returns the loss value.
fn apply_step(
    model: &mut Model,
    opt: &mut Adam,
    trainer: &Trainer,
    ep: &Episode,
    replay: Option<(&TeacherSnapshot, &Episode)>,
) -> Result<f64> {
    let tape = Tape::new();
    let student = model.bind(&tape, true);
    let loss = step_loss(&tape, trainer, &student, ep, replay)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Evaluation(format!("loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let vars = student.vars();
    let gs: Vec<Option<&[f64]>> = vars.iter().map(|v| grads.get(*v)).collect();
    if gs.iter().flatten().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::Evaluation("non-finite gradient".into()));
    }
    opt.step(&mut model.params_mut(), &gs)?;
    Ok(value)
}

fn training_error(task: usize, step: usize, per_epoch: usize, e: Error) -> Error {
    Error::Training {
        task,
        epoch: step / per_epoch + 1,
        step: step % per_epoch + 1,
        reason: e.to_string(),
    }
}

fn param_lens(model: &Model) -> Vec<usize> {
    model.params().iter().map(|p| p.len()).collect()
}

impl Trainer {
    pub fn validate(&self, stream: &TaskStream) -> Result<()> {
        self.train.validate()?;
        self.weights.validate()?;
        self.sampler.validate()?;
        self.episode.validate()?;
        stream.validate()?;
        if self.eval.n_episodes == 0 {
            return Err(Error::Validation("eval.n_episodes must be >= 1".into()));
        }
        let input = *self.learner.layer_widths.first().unwrap_or(&0);
        if input != stream.dim() {
            return Err(Error::Dimension(format!(
                "learner input width {input} but data has {} features",
                stream.dim()
            )));
        }
        match self.buffer.policy {
            BufferPolicy::PerClass { n_ex: 0 } => Err(Error::Validation("n_ex must be >= 1".into())),
            BufferPolicy::Bounded { bf: 0 } => Err(Error::Validation("bf must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn selection(&self) -> Selection {
        self.buffer.selection.resolve(self.learner.kind)
    }

    pub fn init_model(&self) -> Result<Model> {
        Model::new(&self.learner, derive_seed(self.train.seed, INIT_STREAM))
    }

    fn evaluate(&self, model: &Model, stream: &TaskStream, session: usize) -> Result<Vec<MetricRecord>> {
        let mut out = eval_seen(model, stream, session, &self.episode, &self.eval, self.exec)?;
        if !stream.meta_test.is_empty() {
            out.insert(0, eval_meta_test(model, stream, session, &self.episode, &self.eval, self.exec)?);
        }
        Ok(out)
    }

    /// Runs `train.method` over `stream` and returns one result per session.
    /// `on_session` sees every session as soon as it is evaluated.
    pub fn run(
        &self,
        stream: &TaskStream,
        on_session: &mut dyn FnMut(&SessionResult) -> Result<()>,
    ) -> Result<Vec<SessionResult>> {
        match self.train.method {
            Method::Joint => Ok(vec![self.run_joint(stream, on_session)?]),
            _ => self.run_incremental(stream, on_session),
        }
    }

    /// Sequential training over tasks `1..=M` with ERD or fine-tuning.
    pub fn run_incremental(
        &self,
        stream: &TaskStream,
        on_session: &mut dyn FnMut(&SessionResult) -> Result<()>,
    ) -> Result<Vec<SessionResult>> {
        self.validate(stream)?;
        let erd = match self.train.method {
            Method::Erd => true,
            Method::Ft => false,
            Method::Joint => {
                return Err(Error::Precondition("joint training is not incremental".into()));
            }
        };
        let mut model = self.init_model()?;
        let mut buffer = ExemplarBuffer::new(self.buffer.policy, self.selection());
        let mut opt = Adam::new(self.train.adam(), &param_lens(&model));
        let mut snapshots = 0;
        let per_epoch = self.train.episodes_per_epoch;
        let steps = self.train.steps_per_task();
        let train_seed = derive_seed(self.train.seed, TRAIN_STREAM);
        let buffer_seed = derive_seed(self.train.seed, BUFFER_STREAM);
        let mut results = Vec::with_capacity(stream.n_tasks());

        for task in &stream.tasks {
            let t = task.number;
            let started = Instant::now();
            let replaying = erd && t >= 2;
            let teacher = if replaying {
                snapshots += 1;
                Some(TeacherSnapshot::new(&model))
            } else {
                None
            };
            if self.train.reset_optimizer {
                opt = Adam::new(self.train.adam(), &param_lens(&model));
            }
            let mut rng = Rng::stream(train_seed, t as u64);
            let mut loss_sum = 0.0;
            for step in 0..steps {
                let value = (|| {
                    if let Some(teacher) = &teacher {
                        let ep = sample_cross_task(task, &buffer, &self.episode, &self.sampler, &mut rng)?;
                        let ex = sample_exemplar(&buffer, &self.episode, &mut rng)?;
                        apply_step(&mut model, &mut opt, self, &ep, Some((teacher, &ex)))
                    } else {
                        let ep = sample_standard(task, Split::Train, &self.episode, &mut rng)?;
                        apply_step(&mut model, &mut opt, self, &ep, None)
                    }
                })()
                .map_err(|e| training_error(t, step, per_epoch, e))?;
                loss_sum += value;
            }
            if erd {
                let mut brng = Rng::stream(buffer_seed, t as u64);
                buffer.commit_task(task, Some(&model), &mut brng)?;
            }
            let metrics = self.evaluate(&model, stream, t)?;
            let result = SessionResult {
                session: t,
                model: model.clone(),
                buffer: erd.then(|| buffer.clone()),
                metrics,
                steps,
                mean_loss: loss_sum / steps as f64,
                teacher_snapshots: snapshots,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            on_session(&result)?;
            results.push(result);
        }
        Ok(results)
    }

    /// Standard episodes over the union of every task's classes, for as many
    /// steps as the whole incremental run takes.
    pub fn run_joint(
        &self,
        stream: &TaskStream,
        on_session: &mut dyn FnMut(&SessionResult) -> Result<()>,
    ) -> Result<SessionResult> {
        self.validate(stream)?;
        let started = Instant::now();
        let m = stream.n_tasks();
        let union = Task {
            number: m,
            classes: stream.tasks.iter().flat_map(|t| t.classes.iter().cloned()).collect(),
        };
        let mut model = self.init_model()?;
        let mut opt = Adam::new(self.train.adam(), &param_lens(&model));
        let per_epoch = self.train.episodes_per_epoch;
        let steps = m * self.train.steps_per_task();
        let mut rng = Rng::stream(derive_seed(self.train.seed, TRAIN_STREAM), 0);
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let value = sample_standard(&union, Split::Train, &self.episode, &mut rng)
                .and_then(|ep| apply_step(&mut model, &mut opt, self, &ep, None))
                .map_err(|e| training_error(m, step, per_epoch, e))?;
            loss_sum += value;
        }
        let metrics = self.evaluate(&model, stream, m)?;
        let result = SessionResult {
            session: m,
            model,
            buffer: None,
            metrics,
            steps,
            mean_loss: loss_sum / steps as f64,
            teacher_snapshots: 0,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_session(&result)?;
        Ok(result)
    }
}
