//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use owsc_core::annindex::ObjectEmbeddings;
use owsc_core::dataset::synthetic_object_embeddings;
use owsc_core::encoder::{init_params, EncoderConfig, ParamSet};
use owsc_core::tensor::Matrix;

pub const CATEGORIES: usize = 4;
pub const DIM: usize = 64;

/// Object to category map plus one aggregate per object.
pub struct Objects {
    pub manifest: BTreeMap<u32, u32>,
    pub aggregates: ObjectEmbeddings,
}

pub fn objects(per_category: usize, seed: u64) -> Objects {
    let (manifest, aggregates) = synthetic_object_embeddings(CATEGORIES, per_category, DIM, seed);
    Objects {
        manifest,
        aggregates,
    }
}

pub fn encoder(layers: usize, heads: usize) -> ParamSet {
    let config = EncoderConfig {
        n_attention_layers: layers,
        n_heads: heads,
        ..EncoderConfig::default()
    };
    init_params(&config).expect("valid encoder config")
}

/// A deterministic `views × input_dim` feature block.
pub fn views(views: usize, input_dim: usize) -> Matrix {
    let data = (0..views * input_dim)
        .map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0)
        .collect();
    Matrix::from_vec(views, input_dim, data)
}
