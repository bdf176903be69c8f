//! Prototypical-network episode computations.
//!
//! A class prototype is the mean support embedding of that class; a query's
//! class probabilities are a softmax over negative squared Euclidean
//! distances to the prototypes.

use super::mlp::BoundMlp;
use super::model::BoundModel;
use crate::autodiff::{softmax_in_place, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::sampler::Episode;

/// Per-group mean of embedding rows, `[groups, E]`.
pub fn compute_prototypes(tape: &Tape, embeddings: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
    tape.group_mean(embeddings, groups)
}

/// Negative squared distances from every query to every prototype, `[Q, N]`.
pub fn proto_logits(tape: &Tape, embed: &BoundMlp, episode: &Episode) -> Result<Var> {
    let s = tape.constant(&episode.support);
    let q = tape.constant(&episode.query);
    let s = embed.forward(tape, s)?;
    let q = embed.forward(tape, q)?;
    let c = compute_prototypes(tape, s, episode.support_groups())?;
    let d = tape.sq_dist(q, c)?;
    Ok(tape.scale(d, -1.0))
}

/// Class probabilities for every query row, `[Q, N]`.
pub fn proto_probabilities(tape: &Tape, embed: &BoundMlp, episode: &Episode) -> Result<Var> {
    let logits = proto_logits(tape, embed, episode)?;
    Ok(tape.softmax(logits))
}

/// `-Σ_q log p(y_q | x_q)` summed (not averaged) over the query set.
pub fn proto_meta_loss(tape: &Tape, model: &BoundModel, episode: &Episode) -> Result<Var> {
    let logits = proto_logits(tape, &model.embed, episode)?;
    let logp = tape.log_softmax(logits);
    tape.nll_sum(logp, episode.query_labels())
}

/// Class probabilities of one query embedding against fixed prototypes.
pub fn proto_classify(prototypes: &Tensor, query: &[f32]) -> Result<Vec<f64>> {
    if prototypes.rows() == 0 {
        return Err(Error::Validation("no prototypes".into()));
    }
    if prototypes.cols() != query.len() {
        return Err(Error::Dimension(format!(
            "query width {} vs prototype width {}",
            query.len(),
            prototypes.cols()
        )));
    }
    let mut logits: Vec<f64> = (0..prototypes.rows())
        .map(|k| -sq_dist(prototypes.row(k), query))
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean embedding per group of rows, computed directly.
pub(crate) fn prototypes_of(embeddings: &Tensor, groups: &[Vec<usize>]) -> Result<Tensor> {
    let e = embeddings.cols();
    let mut out = Vec::with_capacity(groups.len() * e);
    for (g, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Validation(format!("group {g} is empty")));
        }
        let mut acc = vec![0.0f64; e];
        for &r in members {
            for (a, v) in acc.iter_mut().zip(embeddings.row(r)) {
                *a += *v as f64;
            }
        }
        out.extend(acc.iter().map(|a| (a / members.len() as f64) as f32));
    }
    Tensor::matrix(groups.len(), e, out)
}
