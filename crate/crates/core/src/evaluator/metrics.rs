use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{squared_l2, Matrix};

/// Label of the nearest row of `points`; equal distances resolve to the
/// lowest label.
pub fn nearest_label(query: &[f64], points: &Matrix, labels: &[u32]) -> Result<u32> {
    if points.rows() == 0 {
        return Err(Error::InvalidInput("empty gallery".into()));
    }
    let mut best = (f64::INFINITY, u32::MAX);
    for (r, &label) in labels.iter().enumerate() {
        let d = squared_l2(query, points.row(r));
        if d < best.0 || (d == best.0 && label < best.1) {
            best = (d, label);
        }
    }
    Ok(best.1)
}

/// Per-label mean of `points`, ordered by label.
pub fn centroids(points: &Matrix, labels: &[u32]) -> (Vec<u32>, Matrix) {
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, &label) in labels.iter().enumerate() {
        let e = sums
            .entry(label)
            .or_insert_with(|| (vec![0.0; points.cols()], 0));
        e.0.iter_mut().zip(points.row(r)).for_each(|(s, v)| *s += v);
        e.1 += 1;
    }
    let ids: Vec<u32> = sums.keys().copied().collect();
    let rows: Vec<Vec<f64>> = sums
        .into_values()
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    (ids, Matrix::from_rows(&rows))
}

/// Average precision of one ranked list of relevance flags, or `None` when
/// nothing is relevant.
pub fn average_precision(relevant_in_rank_order: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, rel) in relevant_in_rank_order.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalScore {
    /// Mean average precision over evaluated queries, in percent.
    pub map: f64,
    pub evaluated: usize,
    /// Queries without any relevant gallery item.
    pub skipped: usize,
}

/// Ranks `gallery` by ascending L2 distance to every query (ties by
/// gallery position) and averages AP over queries that have at least one
/// relevant item. With `exclude_self`, query `i` is gallery row `i` and is
/// left out of its own list.
pub fn retrieval_map(
    queries: &Matrix,
    query_labels: &[u32],
    gallery: &Matrix,
    gallery_labels: &[u32],
    exclude_self: bool,
) -> Result<RetrievalScore> {
    let (mut total, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(gallery.rows());
    for (q, &label) in query_labels.iter().enumerate() {
        ranked.clear();
        ranked.extend(
            (0..gallery.rows())
                .filter(|&g| !(exclude_self && g == q))
                .map(|g| (squared_l2(queries.row(q), gallery.row(g)), g)),
        );
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match average_precision(ranked.iter().map(|&(_, g)| gallery_labels[g] == label)) {
            Some(ap) => {
                total += ap;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::NoRelevantQueries { skipped });
    }
    Ok(RetrievalScore {
        map: 100.0 * total / evaluated as f64,
        evaluated,
        skipped,
    })
}
