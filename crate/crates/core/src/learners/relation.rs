//! Relation-network episode computations: a learned head scores every
//! concatenated (support, query) embedding pair.

use super::mlp::BoundMlp;
use super::model::BoundModel;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::sampler::Episode;

/// Embeddings of the episode's support and query rows.
pub fn embed_episode(tape: &Tape, embed: &BoundMlp, episode: &Episode) -> Result<(Var, Var)> {
    let s = tape.constant(&episode.support);
    let q = tape.constant(&episode.query);
    Ok((embed.forward(tape, s)?, embed.forward(tape, q)?))
}

/// Head scores on given embeddings; pair `(i, j)` is row `i * Q + j`.
pub fn relation_scores_on(tape: &Tape, head: &BoundMlp, support: Var, query: Var) -> Result<Var> {
    let pairs = tape.pair_concat(support, query);
    head.forward(tape, pairs)
}

/// Relation score for every (support, query) pair, `[S * Q, 1]`.
pub fn relation_scores(tape: &Tape, model: &BoundModel, episode: &Episode) -> Result<Var> {
    let (s, q) = embed_episode(tape, &model.embed, episode)?;
    relation_scores_on(tape, model.relation()?, s, q)
}

/// 1 where the support and query rows share a class, in pair order.
pub fn relation_targets(episode: &Episode) -> Vec<f64> {
    let sl = episode.support_labels();
    let ql = episode.query_labels();
    sl.iter()
        .flat_map(|a| ql.iter().map(move |b| if a == b { 1.0 } else { 0.0 }))
        .collect()
}

/// `Σ_pairs (score - 1[y = ŷ])²`.
pub fn relation_meta_loss(tape: &Tape, model: &BoundModel, episode: &Episode) -> Result<Var> {
    let scores = relation_scores(tape, model, episode)?;
    let targets = relation_targets(episode);
    let n_pairs = targets.len() as f64;
    let shape = tape.shape(scores);
    let t = tape.leaf_f64(shape, targets, false)?;
    let mse = tape.mse(scores, t)?;
    Ok(tape.scale(mse, n_pairs))
}
