use crate::tensor::l2;

/// Identity-cluster geometry of per-image object embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// Largest distance between two images of the same object.
    pub d_max_intra: f64,
    /// Smallest distance between images of two different objects
    /// (infinite with fewer than two objects).
    pub d_min_inter: f64,
    /// `d_min_inter / d_max_intra`; `None` when `d_max_intra` is zero.
    pub rho: Option<f64>,
}

/// Exhaustive pairwise scan over `(object_id, embedding)` items.
pub fn diagnostics(items: &[(u32, &[f64])]) -> Diagnostics {
    let mut d_max_intra: f64 = 0.0;
    let mut d_min_inter = f64::INFINITY;
    for (i, (oi, ei)) in items.iter().enumerate() {
        for (oj, ej) in &items[i + 1..] {
            let d = l2(ei, ej);
            if oi == oj {
                d_max_intra = d_max_intra.max(d);
            } else {
                d_min_inter = d_min_inter.min(d);
            }
        }
    }
    let rho = (d_max_intra > 0.0).then(|| d_min_inter / d_max_intra);
    Diagnostics {
        d_max_intra,
        d_min_inter,
        rho,
    }
}
