//! Dual-head set encoder.
//!
//! A shared trunk (`ReLU(x·W + b)`) feeds two independent heads, one for the
//! object-identity space and one for the category space. Each head projects
//! the trunk output to `D` dimensions and applies a stack of attention
//! blocks over the set of views:
//!
//! ```text
//! Y = LayerNorm(Z + MultiHeadSelfAttention(Z))
//! Z' = LayerNorm(Y + ReLU(Y·W_ff + b_ff))
//! ```
//!
//! The per-view embeddings are the rows of the final block output and the
//! aggregated embedding is their mean, so the head is permutation
//! equivariant per view and invariant in aggregate. Gradients are computed
//! by hand in [`backward`].

mod backward;
mod checkpoint;
mod forward;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Matrix;

pub use backward::backward;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{encode, encode_eval, encode_single, feature_matrix, forward, ForwardCache};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub n_attention_layers: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 64,
            embed_dim: 64,
            n_attention_layers: 2,
            n_heads: 1,
            dropout_rate: 0.25,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("input_dim and embed_dim must be >= 1".into()));
        }
        if self.n_attention_layers == 0 {
            return Err(Error::Config("n_attention_layers must be >= 1".into()));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
    pub norm1: LayerNorm,
    pub feed_forward: Linear,
    pub norm2: LayerNorm,
}

impl AttentionBlock {
    fn zeros(d: usize) -> Self {
        AttentionBlock {
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
            output: Matrix::zeros(d, d),
            norm1: LayerNorm::identity(d),
            feed_forward: Linear::zeros(d, d),
            norm2: LayerNorm::identity(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceHead {
    pub input: Linear,
    pub blocks: Vec<AttentionBlock>,
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub config: EncoderConfig,
    pub trunk: Linear,
    pub object: SpaceHead,
    pub category: SpaceHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Object,
    Category,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Object => "object",
            Space::Category => "category",
        }
    }
}

impl ParamSet {
    /// Same shapes as `config` describes, every tensor zero except
    /// layer-norm gains (one).
    pub fn zeros(config: &EncoderConfig) -> ParamSet {
        let d = config.embed_dim;
        let head = || SpaceHead {
            input: Linear::zeros(d, d),
            blocks: (0..config.n_attention_layers)
                .map(|_| AttentionBlock::zeros(d))
                .collect(),
        };
        ParamSet {
            config: config.clone(),
            trunk: Linear::zeros(config.input_dim, d),
            object: head(),
            category: head(),
        }
    }

    /// A zero-filled container with the same shapes, for gradients.
    pub fn zeros_like(&self) -> ParamSet {
        let mut g = ParamSet::zeros(&self.config);
        g.fill(0.0);
        g
    }

    pub fn head(&self, space: Space) -> &SpaceHead {
        match space {
            Space::Object => &self.object,
            Space::Category => &self.category,
        }
    }

    pub fn head_mut(&mut self, space: Space) -> &mut SpaceHead {
        match space {
            Space::Object => &mut self.object,
            Space::Category => &mut self.category,
        }
    }

    /// Tensors in the fixed serialization order, with their names.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("trunk.weight".into(), self.trunk.weight.as_slice()),
            ("trunk.bias".into(), &self.trunk.bias),
        ];
        for (space, head) in [("object", &self.object), ("category", &self.category)] {
            out.push((
                format!("{space}.input.weight"),
                head.input.weight.as_slice(),
            ));
            out.push((format!("{space}.input.bias"), &head.input.bias));
            for (l, b) in head.blocks.iter().enumerate() {
                let p = format!("{space}.block{l}");
                out.push((format!("{p}.query"), b.query.as_slice()));
                out.push((format!("{p}.key"), b.key.as_slice()));
                out.push((format!("{p}.value"), b.value.as_slice()));
                out.push((format!("{p}.output"), b.output.as_slice()));
                out.push((format!("{p}.norm1.gain"), &b.norm1.gain));
                out.push((format!("{p}.norm1.bias"), &b.norm1.bias));
                out.push((
                    format!("{p}.feed_forward.weight"),
                    b.feed_forward.weight.as_slice(),
                ));
                out.push((format!("{p}.feed_forward.bias"), &b.feed_forward.bias));
                out.push((format!("{p}.norm2.gain"), &b.norm2.gain));
                out.push((format!("{p}.norm2.bias"), &b.norm2.bias));
            }
        }
        out
    }

    /// Mutable tensors in the same order as [`ParamSet::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.trunk.weight.as_mut_slice(), &mut self.trunk.bias];
        for head in [&mut self.object, &mut self.category] {
            out.push(head.input.weight.as_mut_slice());
            out.push(&mut head.input.bias);
            for b in head.blocks.iter_mut() {
                out.push(b.query.as_mut_slice());
                out.push(b.key.as_mut_slice());
                out.push(b.value.as_mut_slice());
                out.push(b.output.as_mut_slice());
                out.push(&mut b.norm1.gain);
                out.push(&mut b.norm1.bias);
                out.push(b.feed_forward.weight.as_mut_slice());
                out.push(&mut b.feed_forward.bias);
                out.push(&mut b.norm2.gain);
                out.push(&mut b.norm2.bias);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut pos = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[pos..pos + t.len()]);
            pos += t.len();
        }
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = v);
        }
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        let src = other.flatten();
        let mut pos = 0;
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x += scale * src[pos];
                pos += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Seeded initialization: linear weights ~ N(0, 1/fan_in), biases 0,
/// layer-norm gains 1 and biases 0. Each tensor draws from its own
/// stream so adding layers does not perturb earlier tensors.
pub fn init_params(config: &EncoderConfig) -> Result<ParamSet> {
    config.validate()?;
    let mut params = ParamSet::zeros(config);
    let mut stream = 0u64;
    let mut fill = |m: &mut Matrix| {
        let mut rng = seeded(derive_seed(config.seed, 0x1A17, stream));
        stream += 1;
        let std = 1.0 / (m.rows() as f64).sqrt();
        for v in m.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = std * z;
        }
    };
    fill(&mut params.trunk.weight);
    for head in [&mut params.object, &mut params.category] {
        fill(&mut head.input.weight);
        for b in head.blocks.iter_mut() {
            fill(&mut b.query);
            fill(&mut b.key);
            fill(&mut b.value);
            fill(&mut b.output);
            fill(&mut b.feed_forward.weight);
        }
    }
    Ok(params)
}

/// Per-view and aggregated embeddings in both spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbedding {
    pub obj_per_view: Matrix,
    pub obj_aggregate: Vec<f64>,
    pub cat_per_view: Matrix,
    pub cat_aggregate: Vec<f64>,
}

impl DualEmbedding {
    pub fn views(&self) -> usize {
        self.obj_per_view.rows()
    }

    pub fn per_view(&self, space: Space) -> &Matrix {
        match space {
            Space::Object => &self.obj_per_view,
            Space::Category => &self.cat_per_view,
        }
    }

    pub fn aggregate(&self, space: Space) -> &[f64] {
        match space {
            Space::Object => &self.obj_aggregate,
            Space::Category => &self.cat_aggregate,
        }
    }
}

/// Gradient of a scalar with respect to every entry of a [`DualEmbedding`].
/// Aggregate gradients are kept separate and folded into the per-view rows
/// by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddingGrad {
    pub obj_per_view: Matrix,
    pub obj_aggregate: Vec<f64>,
    pub cat_per_view: Matrix,
    pub cat_aggregate: Vec<f64>,
}

impl DualEmbeddingGrad {
    pub fn zeros(views: usize, dim: usize) -> Self {
        DualEmbeddingGrad {
            obj_per_view: Matrix::zeros(views, dim),
            obj_aggregate: vec![0.0; dim],
            cat_per_view: Matrix::zeros(views, dim),
            cat_aggregate: vec![0.0; dim],
        }
    }

    pub fn zeros_for(e: &DualEmbedding) -> Self {
        Self::zeros(e.views(), e.obj_aggregate.len())
    }

    pub fn per_view_mut(&mut self, space: Space) -> &mut Matrix {
        match space {
            Space::Object => &mut self.obj_per_view,
            Space::Category => &mut self.cat_per_view,
        }
    }

    pub fn aggregate_mut(&mut self, space: Space) -> &mut [f64] {
        match space {
            Space::Object => &mut self.obj_aggregate,
            Space::Category => &mut self.cat_aggregate,
        }
    }

    pub fn is_zero(&self) -> bool {
        [
            self.obj_per_view.as_slice(),
            &self.obj_aggregate,
            self.cat_per_view.as_slice(),
            &self.cat_aggregate,
        ]
        .iter()
        .all(|t| t.iter().all(|&v| v == 0.0))
    }
}
