//! Synthetic "objects with state changes".
//!
//! Every object owns a latent identity vector drawn around its category
//! prototype. Each state applies a smooth nonlinear warp, seeded per
//! (category, state), blended with the identity latent; each view adds a
//! low-rank pose jitter before the warp and Gaussian sensor noise after it.
//! A fraction of objects is planted in cross-category near-duplicate groups
//! whose latents sit within `confuser_epsilon` of each other.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord, Split};
use crate::error::{Error, Result};
use crate::rng::{seeded, shuffle, StreamRng};
use crate::tensor::l2;

const PROTOTYPE_SCALE: f64 = 1.0;
const OBJECT_SPREAD: f64 = 0.5;
const JITTER_RANK: usize = 2;
const JITTER_SCALE: f64 = 0.3;
const WARP_BIAS_SCALE: f64 = 0.5;

fn default_confuser_epsilon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_categories: usize,
    pub objects_per_category: usize,
    pub states_per_object: usize,
    pub views_per_state: usize,
    pub feature_dim: usize,
    pub confuser_fraction: f64,
    pub state_warp_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Upper bound on the latent distance between members of a planted
    /// near-duplicate group.
    #[serde(default = "default_confuser_epsilon")]
    pub confuser_epsilon: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_categories: 4,
            objects_per_category: 10,
            states_per_object: 4,
            views_per_state: 4,
            feature_dim: 64,
            confuser_fraction: 0.4,
            state_warp_strength: 0.5,
            noise_sigma: 0.05,
            seed: 7,
            confuser_epsilon: default_confuser_epsilon(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_categories", self.n_categories),
            ("objects_per_category", self.objects_per_category),
            ("states_per_object", self.states_per_object),
            ("views_per_state", self.views_per_state),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.confuser_fraction) {
            return Err(Error::Config("confuser_fraction must lie in [0, 1]".into()));
        }
        if !(self.state_warp_strength >= 0.0) {
            return Err(Error::Config("state_warp_strength must be >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.confuser_epsilon > 0.0) {
            return Err(Error::Config("confuser_epsilon must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_objects(&self) -> usize {
        self.n_categories * self.objects_per_category
    }
}

/// Generator internals exposed for verification.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// Identity latent per object id (ids are dense, `0..n_objects`).
    pub latents: Vec<Vec<f64>>,
    /// Planted near-duplicate groups; the first member is the anchor.
    pub confuser_groups: Vec<Vec<u32>>,
}

impl SynthTruth {
    pub fn is_confuser(&self, object_id: u32) -> bool {
        self.confuser_groups.iter().any(|g| g.contains(&object_id))
    }
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    generate_with_truth(config).map(|(ds, _)| ds)
}

fn normal_vec(rng: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn generate_with_truth(config: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    config.validate()?;
    let f = config.feature_dim;
    let n_objects = config.n_objects();
    let category_of = |o: usize| (o / config.objects_per_category) as u32;
    let mut rng = seeded(config.seed);

    let prototypes: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| normal_vec(&mut rng, f, PROTOTYPE_SCALE))
        .collect();

    let mut latents: Vec<Vec<f64>> = (0..n_objects)
        .map(|o| {
            let offset = normal_vec(&mut rng, f, OBJECT_SPREAD);
            prototypes[category_of(o) as usize]
                .iter()
                .zip(offset)
                .map(|(p, d)| p + d)
                .collect()
        })
        .collect();

    let confuser_groups = plant_confusers(config, &mut latents, &mut rng, category_of);

    // Per-(category, state) warp and per-category pose basis.
    let w_scale = 1.0 / (f as f64).sqrt();
    let warps: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..config.n_categories)
        .map(|_| {
            (0..config.states_per_object)
                .map(|_| {
                    (
                        normal_vec(&mut rng, f * f, w_scale),
                        normal_vec(&mut rng, f, WARP_BIAS_SCALE),
                    )
                })
                .collect()
        })
        .collect();
    let pose_bases: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| normal_vec(&mut rng, f * JITTER_RANK, JITTER_SCALE))
        .collect();

    let strength = config.state_warp_strength;
    let mut records =
        Vec::with_capacity(n_objects * config.states_per_object * config.views_per_state);
    let mut jittered = vec![0.0; f];
    for (o, latent) in latents.iter().enumerate() {
        let c = category_of(o) as usize;
        let basis = &pose_bases[c];
        for s in 0..config.states_per_object {
            let (w, b) = &warps[c][s];
            for _ in 0..config.views_per_state {
                let coef = normal_vec(&mut rng, JITTER_RANK, 1.0);
                let noise = normal_vec(&mut rng, f, config.noise_sigma);
                for (d, j) in jittered.iter_mut().enumerate() {
                    let pose: f64 = (0..JITTER_RANK)
                        .map(|r| basis[d * JITTER_RANK + r] * coef[r])
                        .sum();
                    *j = latent[d] + pose;
                }
                let feature = (0..f)
                    .map(|d| {
                        let pre: f64 = b[d]
                            + w[d * f..(d + 1) * f]
                                .iter()
                                .zip(&jittered)
                                .map(|(a, x)| a * x)
                                .sum::<f64>();
                        let warped = pre.tanh();
                        let value = latent[d] + strength * (warped - latent[d]) + noise[d];
                        value as f32
                    })
                    .collect();
                records.push(FeatureRecord {
                    object_id: o as u32,
                    category_id: c as u32,
                    state_id: s as u32,
                    split: Split::Train,
                    feature,
                });
            }
        }
    }
    let dataset = Dataset::new(records, f)?;
    Ok((
        dataset,
        SynthTruth {
            latents,
            confuser_groups,
        },
    ))
}

/// Groups objects into cross-category pairs (a trailing triple when the
/// target count is odd) and moves every non-anchor member to within
/// `confuser_epsilon / 2` of its anchor.
fn plant_confusers(
    config: &SynthConfig,
    latents: &mut [Vec<f64>],
    rng: &mut StreamRng,
    category_of: impl Fn(usize) -> u32,
) -> Vec<Vec<u32>> {
    let n = latents.len();
    let target = (config.confuser_fraction * n as f64).round() as usize;
    if target < 2 || config.n_categories < 2 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, rng);
    let mut used = vec![false; n];
    let mut groups: Vec<Vec<u32>> = Vec::new();
    let mut planted = 0;
    for i in 0..n {
        if planted + 2 > target {
            break;
        }
        let anchor = order[i];
        if used[anchor] {
            continue;
        }
        let partner = order[i + 1..]
            .iter()
            .copied()
            .find(|&o| !used[o] && category_of(o) != category_of(anchor));
        if let Some(p) = partner {
            used[anchor] = true;
            used[p] = true;
            groups.push(vec![anchor as u32, p as u32]);
            planted += 2;
        }
    }
    if planted < target {
        if let Some(g) = groups.last_mut() {
            let anchor_cat = category_of(g[0] as usize);
            if let Some(extra) = order
                .iter()
                .copied()
                .find(|&o| !used[o] && category_of(o) != anchor_cat)
            {
                used[extra] = true;
                g.push(extra as u32);
            }
        }
    }
    let radius = 0.5 * config.confuser_epsilon;
    for g in &groups {
        let anchor = latents[g[0] as usize].clone();
        for &m in &g[1..] {
            let dir = normal_vec(rng, anchor.len(), 1.0);
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            latents[m as usize] = anchor
                .iter()
                .zip(&dir)
                .map(|(a, d)| a + radius * d / norm)
                .collect();
            debug_assert!(l2(&latents[m as usize], &anchor) < config.confuser_epsilon);
        }
    }
    groups
}

/// Object embeddings drawn directly in embedding space: one Gaussian
/// centre per category and an isotropic offset per object. Used to time
/// the samplers without running the encoder.
pub fn synthetic_object_embeddings(
    n_categories: usize,
    objects_per_category: usize,
    dim: usize,
    seed: u64,
) -> (BTreeMap<u32, u32>, BTreeMap<u32, Vec<f64>>) {
    let mut rng = seeded(seed);
    let mut manifest = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    for c in 0..n_categories {
        let centre = normal_vec(&mut rng, dim, PROTOTYPE_SCALE);
        for k in 0..objects_per_category {
            let o = (c * objects_per_category + k) as u32;
            let e = centre
                .iter()
                .zip(normal_vec(&mut rng, dim, OBJECT_SPREAD))
                .map(|(a, b)| a + b)
                .collect();
            manifest.insert(o, c as u32);
            embeddings.insert(o, e);
        }
    }
    (manifest, embeddings)
}
