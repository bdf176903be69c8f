//! Distillation from the frozen previous-task model and the combined
//! training objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::learners::proto::{proto_logits, proto_probabilities};
use crate::learners::relation::{embed_episode, relation_scores_on};
use crate::learners::{BoundModel, LearnerKind, Model};
use crate::sampler::{Episode, EpisodeKind};

/// Frozen copy of the model as it stood at the end of the previous task.
///
/// Only shared references are handed out, and its parameters only ever
/// enter a tape as constants.
#[derive(Debug, Clone)]
pub struct TeacherSnapshot {
    model: Model,
}

impl TeacherSnapshot {
    pub fn new(model: &Model) -> Self {
        Self { model: model.clone() }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_e: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_m: 0.5,
            lambda_e: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_m", self.lambda_m), ("lambda_e", self.lambda_e)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which relation head scores the student's embeddings in the cross-task
/// relation distillation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillHead {
    /// The frozen previous head.
    #[default]
    Old,
    /// The head being trained.
    New,
}

fn teacher_of(teacher: Option<&TeacherSnapshot>) -> Result<&TeacherSnapshot> {
    teacher.ok_or_else(|| Error::Precondition("distillation needs a teacher snapshot".into()))
}

/// Teacher class probabilities for every query row, `[Q, N]` flattened.
pub fn proto_teacher_probabilities(teacher: &TeacherSnapshot, episode: &Episode) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let frozen = teacher.model.embed.bind(&tape, false);
    let p = proto_probabilities(&tape, &frozen, episode)?;
    let v = tape.value(p).to_vec();
    Ok(v)
}

/// `Σ_q KL[teacher(q) ‖ student(q)]` where each side classifies the query
/// rows against prototypes built from its own embedding of the support set.
pub fn proto_distill(
    tape: &Tape,
    teacher: Option<&TeacherSnapshot>,
    student: &BoundModel,
    episode: &Episode,
) -> Result<Var> {
    let logits = proto_logits(tape, &student.embed, episode)?;
    proto_distill_on(tape, teacher, logits, episode)
}

/// [`proto_distill`] on student logits already on the tape.
pub fn proto_distill_on(tape: &Tape, teacher: Option<&TeacherSnapshot>, student_logits: Var, episode: &Episode) -> Result<Var> {
    let target = proto_teacher_probabilities(teacher_of(teacher)?, episode)?;
    let q = tape.softmax(student_logits);
    tape.kl_divergence(target, q)
}

/// Teacher relation scores in pair order.
pub fn relation_teacher_scores(teacher: &TeacherSnapshot, episode: &Episode) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let frozen = teacher.model.bind(&tape, false);
    let (s, q) = embed_episode(&tape, &frozen.embed, episode)?;
    let scores = relation_scores_on(&tape, frozen.relation()?, s, q)?;
    let v = tape.value(scores).to_vec();
    Ok(v)
}

/// `Σ_pairs (teacher score - student score)²`.
///
/// The teacher score is always the frozen head on frozen embeddings. The
/// student score uses the student head for exemplar episodes; for cross-task
/// episodes `head` picks which head scores the student embeddings.
pub fn relation_distill(
    tape: &Tape,
    teacher: Option<&TeacherSnapshot>,
    student: &BoundModel,
    episode: &Episode,
    head: DistillHead,
) -> Result<Var> {
    let (s, q) = embed_episode(tape, &student.embed, episode)?;
    relation_distill_on(tape, teacher, student, s, q, episode, head)
}

/// [`relation_distill`] on student embeddings already on the tape.
pub fn relation_distill_on(
    tape: &Tape,
    teacher: Option<&TeacherSnapshot>,
    student: &BoundModel,
    support: Var,
    query: Var,
    episode: &Episode,
    head: DistillHead,
) -> Result<Var> {
    let teacher = teacher_of(teacher)?;
    let target = relation_teacher_scores(teacher, episode)?;
    let use_old = episode.kind == EpisodeKind::CrossTask && head == DistillHead::Old;
    let scores = if use_old {
        let old_head = teacher.model.relation_head()?.bind(tape, false);
        relation_scores_on(tape, &old_head, support, query)?
    } else {
        relation_scores_on(tape, student.relation()?, support, query)?
    };
    let n_pairs = target.len() as f64;
    let t = tape.leaf_f64(tape.shape(scores), target, false)?;
    let mse = tape.mse(scores, t)?;
    Ok(tape.scale(mse, n_pairs))
}

/// Dispatches to the distillation loss of `kind`.
pub fn distill_loss(
    tape: &Tape,
    kind: LearnerKind,
    teacher: Option<&TeacherSnapshot>,
    student: &BoundModel,
    episode: &Episode,
    head: DistillHead,
) -> Result<Var> {
    match kind {
        LearnerKind::Proto => proto_distill(tape, teacher, student, episode),
        LearnerKind::Relation => relation_distill(tape, teacher, student, episode, head),
    }
}

/// `meta + λ_m · dist_m + λ_e · dist_e` on plain numbers.
pub fn combined_loss(meta: f64, dist_m: f64, dist_e: f64, w: &LossWeights) -> Result<f64> {
    if ![meta, dist_m, dist_e].iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite loss term: meta {meta}, dist_m {dist_m}, dist_e {dist_e}"
        )));
    }
    Ok(meta + w.lambda_m * dist_m + w.lambda_e * dist_e)
}

/// Tape version of [`combined_loss`]; absent terms count as zero.
pub fn combined_loss_var(tape: &Tape, meta: Var, dist_m: Option<Var>, dist_e: Option<Var>, w: &LossWeights) -> Result<Var> {
    let mut total = meta;
    if let Some(d) = dist_m {
        total = tape.add(total, tape.scale(d, w.lambda_m))?;
    }
    if let Some(d) = dist_e {
        total = tape.add(total, tape.scale(d, w.lambda_e))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_leave_meta() {
        let w = LossWeights {
            lambda_m: 0.0,
            lambda_e: 0.0,
        };
        assert_eq!(combined_loss(1.25, 7.0, 9.0, &w).unwrap(), 1.25);
    }

    #[test]
    fn default_weights_by_hand() {
        assert_eq!(combined_loss(1.0, 2.0, 4.0, &LossWeights::default()).unwrap(), 4.0);
    }

    #[test]
    fn linear_in_each_weight() {
        for lm in [0.0, 0.5, 1.0] {
            let w = LossWeights {
                lambda_m: lm,
                lambda_e: 0.3,
            };
            assert!((combined_loss(1.0, 2.0, 4.0, &w).unwrap() - (1.0 + 2.0 * lm + 1.2)).abs() < 1e-12);
        }
        for le in [0.0, 0.5, 1.0] {
            let w = LossWeights {
                lambda_m: 0.3,
                lambda_e: le,
            };
            assert!((combined_loss(1.0, 2.0, 4.0, &w).unwrap() - (1.6 + 4.0 * le)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_terms_rejected() {
        assert!(combined_loss(f64::NAN, 0.0, 0.0, &LossWeights::default()).is_err());
    }

    #[test]
    fn negative_weight_invalid() {
        assert!(LossWeights {
            lambda_m: -1.0,
            lambda_e: 0.0
        }
        .validate()
        .is_err());
    }
}
