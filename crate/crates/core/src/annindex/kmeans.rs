//! Lloyd's k-means with seeded distinct-point initialization and
//! farthest-point repair of empty clusters.

use crate::error::{Error, Result};
use crate::rng::{sample_items, seeded};
use crate::tensor::{squared_l2, Matrix};

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Matrix,
    /// Cluster of every input point under the final centroids.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_history: Vec<f64>,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

/// Nearest centroid by squared L2; ties resolve to the lowest index.
pub fn nearest_centroid(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.rows() {
        let d = squared_l2(point, centroids.row(k));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix, assignment: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (i, slot) in assignment.iter_mut().enumerate() {
        let (k, d) = nearest_centroid(points.row(i), centroids);
        *slot = k;
        total += d;
    }
    total
}

/// Runs exactly `iters` Lloyd steps with no convergence exit, so the cost
/// depends only on the input size.
pub fn kmeans_fit(points: &Matrix, k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::InvalidInput("k-means needs K >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs at least K={k} points, got {n}"
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidInput(
            "k-means needs at least one iteration".into(),
        ));
    }
    let dim = points.cols();
    let mut rng = seeded(seed);
    let indices: Vec<usize> = (0..n).collect();
    let init = sample_items(&indices, k, &mut rng);
    let mut centroids = Matrix::from_rows(&init.iter().map(|&i| points.row(i)).collect::<Vec<_>>());

    let mut assignment = vec![0usize; n];
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        history.push(assign(points, &centroids, &mut assignment));

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / inv;
                }
            }
        }
        if counts.contains(&0) {
            repair_empty(points, &mut centroids, &assignment, &counts);
        }
    }
    let objective = assign(points, &centroids, &mut assignment);
    if history.last() != Some(&objective) {
        history.push(objective);
    }
    Ok(KMeans {
        centroids,
        assignment,
        objective_history: history,
    })
}

/// Moves every empty centroid onto the point currently farthest from its
/// own centroid, taking distinct points in descending distance order.
fn repair_empty(points: &Matrix, centroids: &mut Matrix, assignment: &[usize], counts: &[usize]) {
    let mut far: Vec<(f64, usize)> = assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| (squared_l2(points.row(i), centroids.row(c)), i))
        .collect();
    // descending distance, ascending index on ties
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut donors = far.into_iter().map(|(_, i)| i);
    for c in 0..counts.len() {
        if counts[c] == 0 {
            if let Some(i) = donors.next() {
                centroids.row_mut(c).copy_from_slice(points.row(i));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = random_points(17, 3, 1);
        let km = kmeans_fit(&pts, 1, 5, 9).unwrap();
        let mean = pts.mean_row();
        for (a, b) in km.centroids.row(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(km.assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn one_cluster_per_point_has_zero_objective() {
        let pts = random_points(9, 4, 2);
        let km = kmeans_fit(&pts, 9, 3, 5).unwrap();
        assert_eq!(km.objective(), 0.0);
        let mut seen = km.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_points_rejected() {
        let pts = random_points(3, 2, 3);
        assert!(kmeans_fit(&pts, 4, 10, 0).is_err());
        assert!(kmeans_fit(&pts, 0, 10, 0).is_err());
        assert!(kmeans_fit(&pts, 2, 0, 0).is_err());
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..20 {
            let pts = random_points(60, 5, seed);
            let km = kmeans_fit(&pts, 7, 20, seed).unwrap();
            for w in km.objective_history.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12) + 1e-12,
                    "{:?}",
                    km.objective_history
                );
            }
        }
    }

    #[test]
    fn duplicate_points_force_empty_cluster_repair() {
        // Five copies of one point and one outlier: any empty centroid must
        // be moved onto the outlier.
        let mut rows = vec![[0.0, 0.0]; 5];
        rows.push([10.0, 0.0]);
        rows.push([0.0, 0.0]);
        let pts = Matrix::from_rows(&rows);
        for seed in 0..10 {
            let km = kmeans_fit(&pts, 2, 10, seed).unwrap();
            assert_eq!(km.objective(), 0.0, "seed {seed}");
        }
    }
}
