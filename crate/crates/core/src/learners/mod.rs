//! Episodic learners: ProtoNet and RelationNet over MLP embeddings.

mod mlp;
mod model;
pub mod proto;
pub mod relation;

pub use mlp::{BoundMlp, Layer, Mlp, OutputActivation};
pub use model::{BoundModel, Embedder, LearnerConfig, LearnerKind, Model, MODEL_MANIFEST};
pub use proto::{compute_prototypes, proto_classify, proto_meta_loss, proto_probabilities};
pub use relation::{relation_meta_loss, relation_scores, relation_targets};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::sampler::Episode;

/// The episode meta loss of whichever learner `model` is.
pub fn meta_loss(tape: &Tape, kind: LearnerKind, model: &BoundModel, episode: &Episode) -> Result<Var> {
    match kind {
        LearnerKind::Proto => proto_meta_loss(tape, model, episode),
        LearnerKind::Relation => relation_meta_loss(tape, model, episode),
    }
}

/// Predicted episode class per query row from precomputed embeddings.
///
/// ProtoNet picks the nearest prototype. RelationNet averages each class's
/// relation scores over its support rows and picks the highest.
pub fn predict_embedded(
    model: &Model,
    support: &Tensor,
    query: &Tensor,
    n_way: usize,
    k_shot: usize,
) -> Result<Vec<usize>> {
    let groups: Vec<Vec<usize>> = (0..n_way).map(|c| (c * k_shot..(c + 1) * k_shot).collect()).collect();
    match model.kind {
        LearnerKind::Proto => {
            let protos = proto::prototypes_of(support, &groups)?;
            Ok((0..query.rows())
                .map(|i| {
                    let neg: Vec<f64> = (0..n_way)
                        .map(|k| -proto::sq_dist(protos.row(k), query.row(i)))
                        .collect();
                    proto::argmax(&neg)
                })
                .collect())
        }
        LearnerKind::Relation => {
            let tape = Tape::new();
            let head = model.relation_head()?.bind(&tape, false);
            let s = tape.constant(support);
            let q = tape.constant(query);
            let scores = relation::relation_scores_on(&tape, &head, s, q)?;
            let scores = tape.value(scores);
            let nq = query.rows();
            Ok((0..nq)
                .map(|j| {
                    let per_class: Vec<f64> = groups
                        .iter()
                        .map(|g| g.iter().map(|&i| scores[i * nq + j]).sum::<f64>() / g.len() as f64)
                        .collect();
                    proto::argmax(&per_class)
                })
                .collect())
        }
    }
}

pub fn predict(model: &Model, episode: &Episode) -> Result<Vec<usize>> {
    let s = model.embed(&episode.support)?;
    let q = model.embed(&episode.query)?;
    predict_embedded(model, &s, &q, episode.n_way(), episode.spec.k_shot)
}
