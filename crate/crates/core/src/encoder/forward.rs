use rand::Rng;

use super::{AttentionBlock, DualEmbedding, LayerNorm, ParamSet, Space, SpaceHead, LAYER_NORM_EPS};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Matrix;

/// Stacks the feature vectors of `records` into a `V × F` matrix.
pub fn feature_matrix(dataset: &Dataset, records: &[usize]) -> Matrix {
    let f = dataset.feature_dim();
    let mut m = Matrix::zeros(records.len(), f);
    for (row, &i) in records.iter().enumerate() {
        for (dst, &src) in m.row_mut(row).iter_mut().zip(&dataset.record(i).feature) {
            *dst = src as f64;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub(super) struct NormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(super) struct BlockCache {
    pub input: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Softmax probabilities per attention head, before dropout.
    pub probs: Vec<Matrix>,
    /// Scaled keep-masks (0 or 1/(1-p)) per attention head in train mode.
    pub masks: Option<Vec<Matrix>>,
    pub attended: Matrix,
    pub norm1: NormCache,
    pub y1: Matrix,
    pub ff_pre: Matrix,
    pub norm2: NormCache,
}

#[derive(Debug, Clone)]
pub(super) struct HeadCache {
    pub blocks: Vec<BlockCache>,
    pub views: usize,
}

/// Intermediate activations needed by [`super::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(super) input: Matrix,
    pub(super) trunk_pre: Matrix,
    pub(super) trunk_out: Matrix,
    pub(super) object: HeadCache,
    pub(super) category: HeadCache,
}

impl ForwardCache {
    pub(super) fn head(&self, space: Space) -> &HeadCache {
        match space {
            Space::Object => &self.object,
            Space::Category => &self.category,
        }
    }
}

fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = x.matmul(w);
    out.add_row_vector(b);
    out
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn layer_norm(x: &Matrix, ln: &LayerNorm) -> (Matrix, NormCache) {
    let d = x.cols();
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(s);
        for c in 0..d {
            let xh = (row[c] - mean) * s;
            normalized.set(r, c, xh);
            out.set(r, c, ln.gain[c] * xh + ln.bias[c]);
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn block_forward(
    block: &AttentionBlock,
    z: &Matrix,
    heads: usize,
    dropout: Option<(f64, &mut StreamRng)>,
) -> (Matrix, BlockCache) {
    let views = z.rows();
    let d = z.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = z.matmul(&block.query);
    let k = z.matmul(&block.key);
    let v = z.matmul(&block.value);
    let mut probs = Vec::with_capacity(heads);
    let mut masks = dropout.as_ref().map(|_| Vec::with_capacity(heads));
    let mut concat = Matrix::zeros(views, d);
    let mut dropout = dropout;
    for h in 0..heads {
        let qh = q.column_block(h * dh, dh);
        let kh = k.column_block(h * dh, dh);
        let vh = v.column_block(h * dh, dh);
        let mut p = qh.matmul_nt(&kh);
        p.as_mut_slice().iter_mut().for_each(|s| *s *= scale);
        softmax_rows(&mut p);
        let used = match dropout.as_mut() {
            Some((rate, rng)) => {
                let keep = 1.0 / (1.0 - *rate);
                let mut mask = Matrix::zeros(views, views);
                for m in mask.as_mut_slice() {
                    *m = if rng.random::<f64>() < *rate {
                        0.0
                    } else {
                        keep
                    };
                }
                let mut dropped = p.clone();
                for (x, m) in dropped.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *x *= m;
                }
                masks.as_mut().unwrap().push(mask);
                dropped
            }
            None => p.clone(),
        };
        concat.set_column_block(h * dh, &used.matmul(&vh));
        probs.push(p);
    }
    let mut r1 = concat.matmul(&block.output);
    r1.add_assign(z);
    let (y1, norm1) = layer_norm(&r1, &block.norm1);
    let ff_pre = linear(&y1, &block.feed_forward.weight, &block.feed_forward.bias);
    let mut r2 = relu(&ff_pre);
    r2.add_assign(&y1);
    let (out, norm2) = layer_norm(&r2, &block.norm2);
    let cache = BlockCache {
        input: z.clone(),
        q,
        k,
        v,
        probs,
        masks,
        attended: concat,
        norm1,
        y1,
        ff_pre,
        norm2,
    };
    (out, cache)
}

fn head_forward(
    head: &SpaceHead,
    trunk_out: &Matrix,
    heads: usize,
    dropout_rate: f64,
    mut rng: Option<&mut StreamRng>,
) -> (Matrix, HeadCache) {
    let mut z = linear(trunk_out, &head.input.weight, &head.input.bias);
    let mut blocks = Vec::with_capacity(head.blocks.len());
    for block in &head.blocks {
        let dropout = match rng.as_deref_mut() {
            Some(r) if dropout_rate > 0.0 => Some((dropout_rate, r)),
            _ => None,
        };
        let (next, cache) = block_forward(block, &z, heads, dropout);
        blocks.push(cache);
        z = next;
    }
    let views = z.rows();
    (z, HeadCache { blocks, views })
}

/// Full forward pass. Dropout on attention weights is applied only when a
/// random stream is supplied (train mode).
pub fn forward(
    params: &ParamSet,
    features: &Matrix,
    mut train_rng: Option<&mut StreamRng>,
) -> Result<(DualEmbedding, ForwardCache)> {
    let cfg = &params.config;
    if features.rows() == 0 {
        return Err(Error::InvalidInput(
            "encoder needs at least one view".into(),
        ));
    }
    if features.cols() != cfg.input_dim {
        return Err(Error::InvalidInput(format!(
            "encoder expects {} features per view, got {}",
            cfg.input_dim,
            features.cols()
        )));
    }
    let trunk_pre = linear(features, &params.trunk.weight, &params.trunk.bias);
    let trunk_out = relu(&trunk_pre);
    let (obj, object) = head_forward(
        &params.object,
        &trunk_out,
        cfg.n_heads,
        cfg.dropout_rate,
        train_rng.as_deref_mut(),
    );
    let (cat, category) = head_forward(
        &params.category,
        &trunk_out,
        cfg.n_heads,
        cfg.dropout_rate,
        train_rng,
    );
    let emb = DualEmbedding {
        obj_aggregate: obj.mean_row(),
        obj_per_view: obj,
        cat_aggregate: cat.mean_row(),
        cat_per_view: cat,
    };
    let cache = ForwardCache {
        input: features.clone(),
        trunk_pre,
        trunk_out,
        object,
        category,
    };
    Ok((emb, cache))
}

pub fn encode(
    params: &ParamSet,
    features: &Matrix,
    train_mode: bool,
    rng: &mut StreamRng,
) -> Result<DualEmbedding> {
    let rng = if train_mode { Some(rng) } else { None };
    forward(params, features, rng).map(|(e, _)| e)
}

/// Deterministic eval-mode encoding.
pub fn encode_eval(params: &ParamSet, features: &Matrix) -> Result<DualEmbedding> {
    forward(params, features, None).map(|(e, _)| e)
}

/// Single-image embeddings: the full head run over a set of one view.
pub fn encode_single(params: &ParamSet, feature: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = Matrix::from_vec(1, feature.len(), feature.to_vec());
    let e = encode_eval(params, &x)?;
    Ok((
        e.obj_per_view.row(0).to_vec(),
        e.cat_per_view.row(0).to_vec(),
    ))
}
