//! Feature-vector datasets of objects photographed across state changes.
//!
//! A [`Dataset`] is a flat list of [`FeatureRecord`]s (one per image) plus
//! derived per-object indices. Construction validates the invariants every
//! other module relies on: a shared feature dimension, one category per
//! object, and disjoint train/test states for every object.

mod io;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_features, encode_features, read_companion_manifest, read_features,
    read_features_expecting, write_companion_manifest, write_features, CompanionManifest,
    FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION, FEATURE_HEADER_BYTES,
};
pub use split::split_by_state;
pub use synth::{
    generate, generate_with_truth, synthetic_object_embeddings, SynthConfig, SynthTruth,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_u8(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Split> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One image, reduced to a raw feature vector plus its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub object_id: u32,
    pub category_id: u32,
    pub state_id: u32,
    pub split: Split,
    pub feature: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ObjectImages {
    train: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<FeatureRecord>,
    feature_dim: usize,
    manifest: BTreeMap<u32, u32>,
    categories: BTreeSet<u32>,
    images: BTreeMap<u32, ObjectImages>,
}

impl Dataset {
    /// Validates `records` and builds the per-object indices.
    pub fn new(records: Vec<FeatureRecord>, feature_dim: usize) -> Result<Dataset> {
        if feature_dim == 0 {
            return Err(Error::Dataset(
                "feature dimension must be at least 1".into(),
            ));
        }
        let mut manifest = BTreeMap::new();
        let mut images: BTreeMap<u32, ObjectImages> = BTreeMap::new();
        let mut state_split: BTreeMap<(u32, u32), Split> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.feature.len() != feature_dim {
                return Err(Error::Dataset(format!(
                    "record {i} has {} features, expected {feature_dim}",
                    r.feature.len()
                )));
            }
            match manifest.insert(r.object_id, r.category_id) {
                Some(c) if c != r.category_id => {
                    return Err(Error::Dataset(format!(
                        "object {} labelled with categories {c} and {}",
                        r.object_id, r.category_id
                    )))
                }
                _ => {}
            }
            match state_split.insert((r.object_id, r.state_id), r.split) {
                Some(s) if s != r.split => {
                    return Err(Error::Dataset(format!(
                        "object {} state {} appears in both train and test",
                        r.object_id, r.state_id
                    )))
                }
                _ => {}
            }
            let entry = images.entry(r.object_id).or_default();
            match r.split {
                Split::Train => entry.train.push(i),
                Split::Test => entry.test.push(i),
            }
        }
        let categories = manifest.values().copied().collect();
        Ok(Dataset {
            records,
            feature_dim,
            manifest,
            categories,
            images,
        })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &FeatureRecord {
        &self.records[index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_objects(&self) -> usize {
        self.manifest.len()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    /// object_id → category_id
    pub fn manifest(&self) -> &BTreeMap<u32, u32> {
        &self.manifest
    }

    /// Object ids in ascending order.
    pub fn objects(&self) -> Vec<u32> {
        self.manifest.keys().copied().collect()
    }

    pub fn category_of(&self, object_id: u32) -> Option<u32> {
        self.manifest.get(&object_id).copied()
    }

    /// Record indices of `object_id` in `split`, in file order.
    pub fn images_of(&self, object_id: u32, split: Split) -> &[usize] {
        match self.images.get(&object_id) {
            Some(imgs) => match split {
                Split::Train => &imgs.train,
                Split::Test => &imgs.test,
            },
            None => &[],
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// States present for each object, ascending.
    pub fn states_of(&self, object_id: u32) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .records
            .iter()
            .filter(|r| r.object_id == object_id)
            .map(|r| r.state_id)
            .collect();
        set.into_iter().collect()
    }

    /// Category → member objects (ascending ids).
    pub fn objects_by_category(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (&o, &c) in &self.manifest {
            out.entry(c).or_default().push(o);
        }
        out
    }

    /// Checks the extra preconditions of pair-based training: every object
    /// has a train image and every category holds at least two objects.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.manifest.is_empty() {
            return Err(Error::Dataset("dataset has no objects".into()));
        }
        for &o in self.manifest.keys() {
            if self.images_of(o, Split::Train).is_empty() {
                return Err(Error::Dataset(format!("object {o} has no train images")));
            }
        }
        for (c, members) in self.objects_by_category() {
            if members.len() < 2 {
                return Err(Error::Dataset(format!(
                    "category {c} has a single object; same-category pairs need at least two"
                )));
            }
        }
        Ok(())
    }

    /// Returns the same records with new split labels.
    pub(crate) fn with_splits(&self, splits: Vec<Split>) -> Result<Dataset> {
        assert_eq!(splits.len(), self.records.len());
        let records = self
            .records
            .iter()
            .zip(splits)
            .map(|(r, split)| FeatureRecord { split, ..r.clone() })
            .collect();
        Dataset::new(records, self.feature_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(object_id: u32, category_id: u32, state_id: u32, split: Split) -> FeatureRecord {
        FeatureRecord {
            object_id,
            category_id,
            state_id,
            split,
            feature: vec![0.0, 1.0],
        }
    }

    #[test]
    fn rejects_object_with_two_categories() {
        let err = Dataset::new(
            vec![rec(0, 0, 0, Split::Train), rec(0, 1, 1, Split::Train)],
            2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("categories"));
    }

    #[test]
    fn rejects_state_in_both_splits() {
        let err = Dataset::new(
            vec![rec(0, 0, 0, Split::Train), rec(0, 0, 0, Split::Test)],
            2,
        )
        .unwrap_err();
        assert!(err.to_string().contains("both train and test"));
    }

    #[test]
    fn rejects_ragged_features() {
        let mut bad = rec(1, 0, 0, Split::Train);
        bad.feature.push(3.0);
        assert!(Dataset::new(vec![rec(0, 0, 0, Split::Train), bad], 2).is_err());
    }

    #[test]
    fn singleton_category_fails_training_validation() {
        let ds = Dataset::new(
            vec![
                rec(0, 0, 0, Split::Train),
                rec(1, 0, 0, Split::Train),
                rec(2, 1, 0, Split::Train),
            ],
            2,
        )
        .unwrap();
        assert_eq!(ds.n_objects(), 3);
        assert_eq!(ds.n_categories(), 2);
        assert!(ds.validate_for_training().is_err());
    }
}
