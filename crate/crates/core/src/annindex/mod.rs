//! Nearest-neighbour machinery behind the curriculum samplers: k-means,
//! an inverted-file partition index, exact kNN and within-category
//! all-nearest-neighbours.
//!
//! All distances are squared L2 and every tie resolves to the lowest index
//! or id.

mod kmeans;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{squared_l2, Matrix};

pub use kmeans::{kmeans_fit, nearest_centroid, KMeans};

/// One vector per object id, iterated in ascending id order.
pub type ObjectEmbeddings = BTreeMap<u32, Vec<f64>>;

pub const DEFAULT_KMEANS_ITERS: usize = 20;

/// k-means centroids plus inverted lists over object ids.
#[derive(Debug, Clone)]
pub struct PartitionIndex {
    centroids: Matrix,
    inverted_lists: Vec<Vec<u32>>,
    assignment: BTreeMap<u32, usize>,
    slot: BTreeMap<u32, usize>,
}

impl PartitionIndex {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn inverted_lists(&self) -> &[Vec<u32>] {
        &self.inverted_lists
    }

    pub fn cell_of(&self, object_id: u32) -> Option<usize> {
        self.assignment.get(&object_id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<u32, usize> {
        &self.assignment
    }
}

fn to_matrix(embeddings: &ObjectEmbeddings) -> (Vec<u32>, Matrix) {
    let ids: Vec<u32> = embeddings.keys().copied().collect();
    let rows: Vec<&[f64]> = embeddings.values().map(Vec::as_slice).collect();
    (ids, Matrix::from_rows(&rows))
}

pub fn build_ivf(
    embeddings: &ObjectEmbeddings,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<PartitionIndex> {
    let (ids, points) = to_matrix(embeddings);
    let km = kmeans_fit(&points, k, iters, seed)?;
    let mut inverted_lists = vec![Vec::new(); k];
    let mut assignment = BTreeMap::new();
    let mut slot = BTreeMap::new();
    for (&id, &cell) in ids.iter().zip(&km.assignment) {
        slot.insert(id, inverted_lists[cell].len());
        inverted_lists[cell].push(id);
        assignment.insert(id, cell);
    }
    Ok(PartitionIndex {
        centroids: km.centroids,
        inverted_lists,
        assignment,
        slot,
    })
}

/// Orders candidates by (distance, id) and keeps the first `k`.
fn top_k(mut candidates: Vec<(u32, f64)>, k: usize) -> Vec<(u32, f64)> {
    let by_rank = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k, by_rank);
        candidates.truncate(k);
    }
    candidates.sort_by(by_rank);
    candidates
}

/// Exact k nearest neighbours of `query` among `gallery ∖ exclude`, as
/// (id, squared distance) ascending.
pub fn knn_exact(
    query: &[f64],
    gallery: &ObjectEmbeddings,
    k: usize,
    exclude: &BTreeSet<u32>,
) -> Vec<(u32, f64)> {
    let candidates = gallery
        .iter()
        .filter(|(id, _)| !exclude.contains(id))
        .map(|(&id, v)| (id, squared_l2(query, v)))
        .collect();
    top_k(candidates, k)
}

/// Per-object ordered neighbour lists (id, squared distance).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborLists {
    lists: BTreeMap<u32, Vec<(u32, f64)>>,
}

impl NeighborLists {
    pub fn get(&self, object_id: u32) -> Option<&[(u32, f64)]> {
        self.lists.get(&object_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[(u32, f64)])> {
        self.lists.iter().map(|(&o, l)| (o, l.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// How within-category neighbours are searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllNnSearch {
    /// Brute force inside each category.
    Exact,
    /// Per-category IVF with `ceil(sqrt(n))` cells, scanning the `nprobe`
    /// nearest cells per query.
    Ivf {
        nprobe: usize,
        iters: usize,
        seed: u64,
    },
    /// Exact for categories of at most `exact_up_to` objects, IVF above.
    Auto {
        exact_up_to: usize,
        nprobe: usize,
        iters: usize,
        seed: u64,
    },
}

impl Default for AllNnSearch {
    fn default() -> Self {
        AllNnSearch::Auto {
            exact_up_to: 64,
            nprobe: 4,
            iters: 5,
            seed: 0,
        }
    }
}

/// Exact within-category all-nearest-neighbours.
pub fn all_nn_within_category(
    embeddings: &ObjectEmbeddings,
    categories: &BTreeMap<u32, u32>,
    k: usize,
) -> Result<NeighborLists> {
    all_nn_within_category_with(embeddings, categories, k, AllNnSearch::Exact)
}

pub fn all_nn_within_category_with(
    embeddings: &ObjectEmbeddings,
    categories: &BTreeMap<u32, u32>,
    k: usize,
    search: AllNnSearch,
) -> Result<NeighborLists> {
    if k == 0 {
        return Err(Error::InvalidInput("neighbour count k must be >= 1".into()));
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &id in embeddings.keys() {
        let c = categories.get(&id).ok_or(Error::UnknownObject(id))?;
        groups.entry(*c).or_default().push(id);
    }
    let mut lists = BTreeMap::new();
    for members in groups.values() {
        let rows: Vec<&[f64]> = members.iter().map(|id| embeddings[id].as_slice()).collect();
        let points = Matrix::from_rows(&rows);
        let found = match search {
            AllNnSearch::Exact => exact_group(&points, k),
            AllNnSearch::Ivf {
                nprobe,
                iters,
                seed,
            } => ivf_group(&points, k, nprobe, iters, seed)?,
            AllNnSearch::Auto {
                exact_up_to,
                nprobe,
                iters,
                seed,
            } => {
                if members.len() <= exact_up_to {
                    exact_group(&points, k)
                } else {
                    ivf_group(&points, k, nprobe, iters, seed)?
                }
            }
        };
        for (row, neigh) in found.into_iter().enumerate() {
            let neigh = neigh.into_iter().map(|(j, d)| (members[j], d)).collect();
            lists.insert(members[row], neigh);
        }
    }
    Ok(NeighborLists { lists })
}

/// Local-index neighbour lists for every row of `points`.
fn exact_group(points: &Matrix, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = points.rows();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_l2(points.row(i), points.row(j));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    (0..n)
        .map(|i| {
            let cand = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j as u32, dist[i * n + j]))
                .collect();
            top_k(cand, k)
                .into_iter()
                .map(|(j, d)| (j as usize, d))
                .collect()
        })
        .collect()
}

fn ivf_group(
    points: &Matrix,
    k: usize,
    nprobe: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = points.rows();
    if n <= 1 {
        return Ok(vec![Vec::new(); n]);
    }
    let cells = ((n as f64).sqrt().ceil() as usize).clamp(1, n);
    let km = kmeans_fit(points, cells, iters.max(1), seed)?;
    let mut lists = vec![Vec::new(); cells];
    for (i, &c) in km.assignment.iter().enumerate() {
        lists[c].push(i);
    }
    let nprobe = nprobe.clamp(1, cells);
    let mut out = Vec::with_capacity(n);
    let mut order: Vec<(usize, f64)> = Vec::with_capacity(cells);
    for i in 0..n {
        let q = points.row(i);
        order.clear();
        order.extend((0..cells).map(|c| (c, squared_l2(q, km.centroids.row(c)))));
        let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if nprobe < cells {
            order.select_nth_unstable_by(nprobe, by);
        }
        let cand: Vec<(u32, f64)> = order[..nprobe]
            .iter()
            .flat_map(|&(c, _)| lists[c].iter())
            .filter(|&&j| j != i)
            .map(|&j| (j as u32, squared_l2(q, points.row(j))))
            .collect();
        out.push(
            top_k(cand, k)
                .into_iter()
                .map(|(j, d)| (j as usize, d))
                .collect(),
        );
    }
    Ok(out)
}

/// Uniformly random other member of `object_id`'s cell, or `None` when the
/// cell is a singleton.
pub fn sample_within_cell<R: Rng + ?Sized>(
    index: &PartitionIndex,
    object_id: u32,
    rng: &mut R,
) -> Result<Option<u32>> {
    let cell = index
        .cell_of(object_id)
        .ok_or(Error::UnknownObject(object_id))?;
    let list = &index.inverted_lists[cell];
    if list.len() < 2 {
        return Ok(None);
    }
    let pos = index.slot[&object_id];
    let mut r = rng.random_range(0..list.len() - 1);
    if r >= pos {
        r += 1;
    }
    Ok(Some(list[r]))
}
