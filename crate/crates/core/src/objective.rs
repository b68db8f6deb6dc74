//! Minibatch glue: encode both objects of every pair, score the joint
//! objective and backpropagate into the encoder parameters.

use crate::encoder::{backward, forward, DualEmbedding, DualEmbeddingGrad, ForwardCache, ParamSet};
use crate::error::Result;
use crate::losses::{
    loss_joint, loss_joint_with_grad, BatchLoss, Margins, Objective, PairEmbeddings,
};
use crate::rng::StreamRng;
use crate::tensor::Matrix;

/// The raw views of one sampled pair.
#[derive(Debug, Clone)]
pub struct PairInput {
    pub x_object: u32,
    pub y_object: u32,
    pub x_category: u32,
    pub y_category: u32,
    pub x_features: Matrix,
    pub y_features: Matrix,
}

fn encode_pairs(
    params: &ParamSet,
    pairs: &[PairInput],
    mut train_rng: Option<&mut StreamRng>,
) -> Result<Vec<((DualEmbedding, ForwardCache), (DualEmbedding, ForwardCache))>> {
    pairs
        .iter()
        .map(|p| {
            let x = forward(params, &p.x_features, train_rng.as_deref_mut())?;
            let y = forward(params, &p.y_features, train_rng.as_deref_mut())?;
            Ok((x, y))
        })
        .collect()
}

fn pair_views<'a>(
    pairs: &[PairInput],
    encoded: &'a [((DualEmbedding, ForwardCache), (DualEmbedding, ForwardCache))],
) -> Vec<PairEmbeddings<'a>> {
    pairs
        .iter()
        .zip(encoded)
        .map(|(p, ((x, _), (y, _)))| PairEmbeddings {
            x,
            y,
            x_object: p.x_object,
            y_object: p.y_object,
            x_category: p.x_category,
            y_category: p.y_category,
        })
        .collect()
}

/// Joint loss of a minibatch without gradients.
pub fn minibatch_loss(
    params: &ParamSet,
    pairs: &[PairInput],
    objective: Objective,
    margins: &Margins,
    train_rng: Option<&mut StreamRng>,
) -> Result<BatchLoss> {
    let encoded = encode_pairs(params, pairs, train_rng)?;
    loss_joint(&pair_views(pairs, &encoded), objective, margins)
}

/// Joint loss of a minibatch and the parameter gradient of the *sum* of
/// per-pair losses (divide by the pair count for the mean objective).
pub fn minibatch_loss_and_grad(
    params: &ParamSet,
    pairs: &[PairInput],
    objective: Objective,
    margins: &Margins,
    train_rng: Option<&mut StreamRng>,
) -> Result<(BatchLoss, ParamSet)> {
    let encoded = encode_pairs(params, pairs, train_rng)?;
    let views = pair_views(pairs, &encoded);
    let mut emb_grads: Vec<(DualEmbeddingGrad, DualEmbeddingGrad)> = encoded
        .iter()
        .map(|((x, _), (y, _))| {
            (
                DualEmbeddingGrad::zeros_for(x),
                DualEmbeddingGrad::zeros_for(y),
            )
        })
        .collect();
    let loss = loss_joint_with_grad(&views, objective, margins, &mut emb_grads)?;
    let mut grads = params.zeros_like();
    for (((_, cx), (_, cy)), (gx, gy)) in encoded.iter().zip(&emb_grads) {
        if !gx.is_zero() {
            backward(params, cx, gx, &mut grads);
        }
        if !gy.is_zero() {
            backward(params, cy, gy, &mut grads);
        }
    }
    Ok((loss, grads))
}
