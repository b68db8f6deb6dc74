use super::forward::{BlockCache, ForwardCache, HeadCache, NormCache};
use super::{AttentionBlock, DualEmbeddingGrad, LayerNorm, ParamSet, Space, SpaceHead};
use crate::tensor::Matrix;

fn norm_backward(dy: &Matrix, ln: &LayerNorm, cache: &NormCache, grad: &mut LayerNorm) -> Matrix {
    let d = dy.cols();
    let mut dx = Matrix::zeros(dy.rows(), d);
    let mut dxh = vec![0.0; d];
    for r in 0..dy.rows() {
        let xh = cache.normalized.row(r);
        let g = dy.row(r);
        for c in 0..d {
            grad.gain[c] += g[c] * xh[c];
            grad.bias[c] += g[c];
            dxh[c] = g[c] * ln.gain[c];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let s = cache.inv_std[r];
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = s * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

fn block_backward(
    block: &AttentionBlock,
    cache: &BlockCache,
    heads: usize,
    d_out: &Matrix,
    grad: &mut AttentionBlock,
) -> Matrix {
    let d = d_out.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Z' = LN2(Y1 + ReLU(Y1·Wf + bf))
    let d_r2 = norm_backward(d_out, &block.norm2, &cache.norm2, &mut grad.norm2);
    let mut d_ff = d_r2.clone();
    for (g, &pre) in d_ff.as_mut_slice().iter_mut().zip(cache.ff_pre.as_slice()) {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    cache
        .y1
        .matmul_tn_into(&d_ff, &mut grad.feed_forward.weight);
    d_ff.sum_rows_into(&mut grad.feed_forward.bias);
    let mut d_y1 = d_r2;
    d_y1.add_assign(&d_ff.matmul_nt(&block.feed_forward.weight));

    // Y1 = LN1(Z + O·Wo)
    let d_r1 = norm_backward(&d_y1, &block.norm1, &cache.norm1, &mut grad.norm1);
    cache.attended.matmul_tn_into(&d_r1, &mut grad.output);
    let d_attended = d_r1.matmul_nt(&block.output);
    let mut d_z = d_r1;

    let views = d_out.rows();
    let mut d_q = Matrix::zeros(views, d);
    let mut d_k = Matrix::zeros(views, d);
    let mut d_v = Matrix::zeros(views, d);
    for h in 0..heads {
        let qh = cache.q.column_block(h * dh, dh);
        let kh = cache.k.column_block(h * dh, dh);
        let vh = cache.v.column_block(h * dh, dh);
        let d_oh = d_attended.column_block(h * dh, dh);
        let p = &cache.probs[h];
        let used = match &cache.masks {
            Some(masks) => {
                let mut u = p.clone();
                for (x, m) in u.as_mut_slice().iter_mut().zip(masks[h].as_slice()) {
                    *x *= m;
                }
                u
            }
            None => p.clone(),
        };
        let mut d_vh = Matrix::zeros(views, dh);
        used.matmul_tn_into(&d_oh, &mut d_vh);
        let mut d_p = d_oh.matmul_nt(&vh);
        if let Some(masks) = &cache.masks {
            for (x, m) in d_p.as_mut_slice().iter_mut().zip(masks[h].as_slice()) {
                *x *= m;
            }
        }
        // softmax backward, then the 1/sqrt(dh) scaling
        let mut d_s = Matrix::zeros(views, views);
        for r in 0..views {
            let pr = p.row(r);
            let gr = d_p.row(r);
            let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for (c, out) in d_s.row_mut(r).iter_mut().enumerate() {
                *out = scale * pr[c] * (gr[c] - inner);
            }
        }
        let d_qh = d_s.matmul(&kh);
        let mut d_kh = Matrix::zeros(views, dh);
        d_s.matmul_tn_into(&qh, &mut d_kh);
        d_q.set_column_block(h * dh, &d_qh);
        d_k.set_column_block(h * dh, &d_kh);
        d_v.set_column_block(h * dh, &d_vh);
    }
    let z = &cache.input;
    z.matmul_tn_into(&d_q, &mut grad.query);
    z.matmul_tn_into(&d_k, &mut grad.key);
    z.matmul_tn_into(&d_v, &mut grad.value);
    d_z.add_assign(&d_q.matmul_nt(&block.query));
    d_z.add_assign(&d_k.matmul_nt(&block.key));
    d_z.add_assign(&d_v.matmul_nt(&block.value));
    d_z
}

/// Returns the gradient with respect to the trunk output.
fn head_backward(
    head: &SpaceHead,
    cache: &HeadCache,
    heads: usize,
    trunk_out: &Matrix,
    d_per_view: &Matrix,
    d_aggregate: &[f64],
    grad: &mut SpaceHead,
) -> Matrix {
    let inv_views = 1.0 / cache.views as f64;
    let mut d = d_per_view.clone();
    for r in 0..d.rows() {
        for (g, a) in d.row_mut(r).iter_mut().zip(d_aggregate) {
            *g += a * inv_views;
        }
    }
    for (l, block) in head.blocks.iter().enumerate().rev() {
        d = block_backward(block, &cache.blocks[l], heads, &d, &mut grad.blocks[l]);
    }
    trunk_out.matmul_tn_into(&d, &mut grad.input.weight);
    d.sum_rows_into(&mut grad.input.bias);
    d.matmul_nt(&head.input.weight)
}

/// Accumulates into `grads` the parameter gradient of a scalar whose
/// gradient with respect to the embeddings produced by `cache` is `d_emb`.
pub fn backward(
    params: &ParamSet,
    cache: &ForwardCache,
    d_emb: &DualEmbeddingGrad,
    grads: &mut ParamSet,
) {
    let heads = params.config.n_heads;
    let mut d_trunk = Matrix::zeros(cache.trunk_out.rows(), cache.trunk_out.cols());
    for space in [Space::Object, Space::Category] {
        let (d_pv, d_agg) = match space {
            Space::Object => (&d_emb.obj_per_view, &d_emb.obj_aggregate),
            Space::Category => (&d_emb.cat_per_view, &d_emb.cat_aggregate),
        };
        let d = head_backward(
            params.head(space),
            cache.head(space),
            heads,
            &cache.trunk_out,
            d_pv,
            d_agg,
            grads.head_mut(space),
        );
        d_trunk.add_assign(&d);
    }
    for (g, &pre) in d_trunk
        .as_mut_slice()
        .iter_mut()
        .zip(cache.trunk_pre.as_slice())
    {
        if pre <= 0.0 {
            *g = 0.0;
        }
    }
    cache
        .input
        .matmul_tn_into(&d_trunk, &mut grads.trunk.weight);
    d_trunk.sum_rows_into(&mut grads.trunk.bias);
}
