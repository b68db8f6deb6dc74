//! Pair sampling strategies and the epoch schedule that switches among
//! them.
//!
//! * S1 pairs every object with a random other object of its category.
//! * S2 pairs it with one of its `top_k` nearest same-category objects in
//!   the current object embedding space.
//! * S3 partitions all objects into `f(N_e)` k-means cells and pairs each
//!   object with a random cell mate of any category.
//!
//! Partner choice is kept apart from image sampling so that the partner
//! searches can be timed on their own.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annindex::{
    all_nn_within_category_with, build_ivf, sample_within_cell, AllNnSearch, ObjectEmbeddings,
};
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::Objective;
use crate::rng::sample_items;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyId {
    #[serde(rename = "s1_random_same_cat", alias = "S1", alias = "s1")]
    S1,
    #[serde(rename = "s2_neighbors_same_cat", alias = "S2", alias = "s2")]
    S2,
    #[serde(rename = "s3_neighbors_any_cat", alias = "S3", alias = "s3")]
    S3,
}

impl StrategyId {
    /// S1 and S2 pairs share a category and feed the same-category
    /// objective; S3 pairs may cross categories.
    pub fn objective(self) -> Objective {
        match self {
            StrategyId::S1 | StrategyId::S2 => Objective::SameCategory,
            StrategyId::S3 => Objective::Partition,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::S1 => "S1",
            StrategyId::S2 => "S2",
            StrategyId::S3 => "S3",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        self != StrategyId::S1
    }
}

impl std::fmt::Display for StrategyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// `c` in `f(N_e) = clamp(c·N_e, n_min, n_max)`.
    pub slope: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub top_k: usize,
    /// Images sampled per object of each pair.
    pub views: usize,
    /// Strategies applied cyclically from epoch 2 on.
    pub schedule: Vec<StrategyId>,
    pub kmeans_iters: usize,
    pub neighbor_search: AllNnSearch,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            slope: 2,
            n_min: 8,
            n_max: 100,
            top_k: 5,
            views: 4,
            schedule: vec![StrategyId::S1, StrategyId::S2, StrategyId::S3],
            kmeans_iters: crate::annindex::DEFAULT_KMEANS_ITERS,
            neighbor_search: AllNnSearch::default(),
        }
    }
}

impl CurriculumConfig {
    /// S1 every epoch: the random-sampling baseline.
    pub fn baseline() -> Self {
        CurriculumConfig {
            schedule: vec![StrategyId::S1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.slope < 1 {
            return bad("curriculum slope must be >= 1");
        }
        if self.n_min < 1 || self.n_min > self.n_max {
            return bad("curriculum needs 1 <= n_min <= n_max");
        }
        if self.top_k < 1 {
            return bad("top_k must be >= 1");
        }
        if self.views < 1 {
            return bad("views per object must be >= 1");
        }
        if self.schedule.is_empty() {
            return bad("strategy schedule is empty");
        }
        if self.kmeans_iters < 1 {
            return bad("kmeans_iters must be >= 1");
        }
        Ok(())
    }
}

/// `clamp(c·N_e, n_min, n_max)`, then capped at the number of objects so
/// that k-means always has at least one point per cell.
pub fn partitions_for_epoch(epoch: usize, config: &CurriculumConfig, n_objects: usize) -> usize {
    let raw = config.slope.saturating_mul(epoch.max(1));
    raw.clamp(config.n_min, config.n_max).min(n_objects).max(1)
}

/// Epoch 1 is always S1; later epochs cycle through the schedule.
pub fn select_strategy(epoch: usize, config: &CurriculumConfig) -> StrategyId {
    if epoch <= 1 {
        return StrategyId::S1;
    }
    config.schedule[(epoch - 2) % config.schedule.len()]
}

/// Category member lists plus each object's slot in its list.
struct Groups {
    members: BTreeMap<u32, Vec<u32>>,
    slot: BTreeMap<u32, usize>,
}

fn by_category(manifest: &BTreeMap<u32, u32>) -> Groups {
    let mut members: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut slot = BTreeMap::new();
    for (&o, &c) in manifest {
        let list = members.entry(c).or_default();
        slot.insert(o, list.len());
        list.push(o);
    }
    Groups { members, slot }
}

impl Groups {
    fn uniform_other<R: Rng + ?Sized>(&self, x: u32, c: u32, rng: &mut R) -> Result<u32> {
        let pos = *self.slot.get(&x).ok_or(Error::UnknownObject(x))?;
        let members = &self.members[&c];
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "object {x} has no same-category partner"
            )));
        }
        let mut r = rng.random_range(0..members.len() - 1);
        if r >= pos {
            r += 1;
        }
        Ok(members[r])
    }
}

/// S1 partners: for every object (ascending id) a uniformly random other
/// object of its category.
pub fn partners_s1<R: Rng + ?Sized>(
    manifest: &BTreeMap<u32, u32>,
    rng: &mut R,
) -> Result<Vec<(u32, u32)>> {
    let groups = by_category(manifest);
    manifest
        .iter()
        .map(|(&x, c)| groups.uniform_other(x, *c, rng).map(|y| (x, y)))
        .collect()
}

/// S2 partners: uniform over each object's `top_k` nearest same-category
/// objects (all others when the category is smaller than that).
pub fn partners_s2<R: Rng + ?Sized>(
    manifest: &BTreeMap<u32, u32>,
    aggregates: &ObjectEmbeddings,
    top_k: usize,
    search: AllNnSearch,
    rng: &mut R,
) -> Result<Vec<(u32, u32)>> {
    check_coverage(manifest, aggregates)?;
    let lists = all_nn_within_category_with(aggregates, manifest, top_k, search)?;
    manifest
        .keys()
        .map(|&x| {
            let list = lists.get(x).unwrap_or(&[]);
            if list.is_empty() {
                return Err(Error::Dataset(format!(
                    "object {x} has no same-category neighbour"
                )));
            }
            Ok((x, list[rng.random_range(0..list.len())].0))
        })
        .collect()
}

/// S3 partners: a random cell mate in a `cells`-way IVF partition of all
/// objects; objects alone in their cell fall back to an S1 partner.
/// Returns the pairs and the number of fallbacks.
pub fn partners_s3<R: Rng + ?Sized>(
    manifest: &BTreeMap<u32, u32>,
    aggregates: &ObjectEmbeddings,
    cells: usize,
    kmeans_iters: usize,
    rng: &mut R,
) -> Result<(Vec<(u32, u32)>, usize)> {
    check_coverage(manifest, aggregates)?;
    let index = build_ivf(
        aggregates,
        cells.min(aggregates.len()),
        kmeans_iters,
        rng.random(),
    )?;
    let groups = by_category(manifest);
    let mut fallbacks = 0;
    let mut pairs = Vec::with_capacity(manifest.len());
    for (&x, c) in manifest {
        let y = match sample_within_cell(&index, x, rng)? {
            Some(y) => y,
            None => {
                fallbacks += 1;
                groups.uniform_other(x, *c, rng)?
            }
        };
        pairs.push((x, y));
    }
    Ok((pairs, fallbacks))
}

fn check_coverage(manifest: &BTreeMap<u32, u32>, aggregates: &ObjectEmbeddings) -> Result<()> {
    if let Some(o) = manifest.keys().find(|o| !aggregates.contains_key(o)) {
        return Err(Error::InvalidInput(format!(
            "no aggregate embedding for object {o}"
        )));
    }
    if aggregates.len() != manifest.len() {
        return Err(Error::InvalidInput(
            "aggregates cover objects outside the manifest".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPair {
    pub x: u32,
    pub y: u32,
    /// Record indices of the train images drawn for each object.
    pub x_images: Vec<usize>,
    pub y_images: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<SampledPair>,
    pub strategy: StrategyId,
    pub epoch: usize,
    /// S3 objects whose cell was a singleton and were paired as in S1.
    pub fallbacks: usize,
}

impl PairBatch {
    pub fn objective(&self) -> Objective {
        self.strategy.objective()
    }

    /// Errors when the batch is scored with an objective its strategy is
    /// not bound to.
    pub fn require_objective(&self, objective: Objective) -> Result<()> {
        if self.objective() != objective {
            return Err(Error::ObjectiveMismatch {
                strategy: self.strategy.as_str(),
                objective: objective.as_str(),
            });
        }
        Ok(())
    }
}

/// Samples one epoch's pairs: a partner for every object in the x role,
/// then `views` train images per object (without replacement when the
/// object has enough). S2 and S3 need the current object aggregates.
pub fn sample_pairs<R: Rng + ?Sized>(
    dataset: &Dataset,
    strategy: StrategyId,
    epoch: usize,
    aggregates: Option<&ObjectEmbeddings>,
    config: &CurriculumConfig,
    rng: &mut R,
) -> Result<PairBatch> {
    let manifest = dataset.manifest();
    let need = || {
        aggregates.ok_or_else(|| {
            Error::InvalidInput(format!("strategy {strategy} needs object aggregates"))
        })
    };
    let (partners, fallbacks) = match strategy {
        StrategyId::S1 => (partners_s1(manifest, rng)?, 0),
        StrategyId::S2 => (
            partners_s2(manifest, need()?, config.top_k, config.neighbor_search, rng)?,
            0,
        ),
        StrategyId::S3 => {
            let cells = partitions_for_epoch(epoch, config, manifest.len());
            partners_s3(manifest, need()?, cells, config.kmeans_iters, rng)?
        }
    };
    let mut pairs = Vec::with_capacity(partners.len());
    for (x, y) in partners {
        let mut draw = |o: u32| -> Result<Vec<usize>> {
            let imgs = dataset.images_of(o, Split::Train);
            if imgs.is_empty() {
                return Err(Error::Dataset(format!("object {o} has no train images")));
            }
            Ok(sample_items(imgs, config.views, rng))
        };
        let x_images = draw(x)?;
        let y_images = draw(y)?;
        pairs.push(SampledPair {
            x,
            y,
            x_images,
            y_images,
        });
    }
    Ok(PairBatch {
        pairs,
        strategy,
        epoch,
        fallbacks,
    })
}
