//! Margin losses over dual embeddings.
//!
//! * `L_piobj` (object space) pulls each object's confuser view towards its
//!   own aggregate and pushes the confusers and aggregates of the two
//!   objects apart. The confuser of `x` with respect to `y` is the per-view
//!   embedding of `x` nearest to `y`'s aggregate (lowest view index on
//!   ties).
//! * `L_picat` (category space) keeps two same-category objects within
//!   margin `θ` of each other, aggregate to aggregate and view to aggregate.
//! * `L_cat` (category space) pushes an object's aggregate at least `γ` away
//!   from the nearest other-category aggregate in the current batch. This is
//!   a batch-negative variant: there is no persistent proxy bank.
//!
//! Hinges use a strict test, so the derivative is exactly zero at a kink,
//! and the gradient of `‖a − b‖` at `a = b` is taken to be zero.

use serde::{Deserialize, Serialize};

use crate::encoder::{DualEmbedding, DualEmbeddingGrad, Space};
use crate::error::{Error, Result};
use crate::tensor::{l2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Margins {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            alpha: 0.25,
            beta: 1.0,
            theta: 0.25,
            gamma: 4.0,
        }
    }
}

impl Margins {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.theta, self.gamma];
        if all.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("margins must be positive and finite".into()));
        }
        if self.beta <= self.alpha {
            return Err(Error::Config("object margins need beta > alpha".into()));
        }
        if self.gamma <= self.theta {
            return Err(Error::Config("category margins need gamma > theta".into()));
        }
        Ok(())
    }
}

/// Which joint objective scores a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Same-category pairs: `L_cat^x + L_cat^y + L_picat + L_piobj`.
    SameCategory,
    /// Partition neighbours of any category: `L_cat^x + L_cat^y + L_piobj`.
    Partition,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::SameCategory => "same-category",
            Objective::Partition => "partition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_piobj: f64,
    pub l_picat: f64,
    /// `L_cat^x + L_cat^y`
    pub l_cat: f64,
    pub l_joint: f64,
    /// `l_piobj > 0`
    pub informative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub per_pair: Vec<LossBreakdown>,
    /// Arithmetic mean of every term over pairs; `informative` reports
    /// whether the mean object loss is non-zero.
    pub mean: LossBreakdown,
    /// Fraction of pairs with a non-zero object loss.
    pub informative_fraction: f64,
}

/// A scored pair: both objects' embeddings plus their labels.
#[derive(Debug, Clone, Copy)]
pub struct PairEmbeddings<'a> {
    pub x: &'a DualEmbedding,
    pub y: &'a DualEmbedding,
    pub x_object: u32,
    pub y_object: u32,
    pub x_category: u32,
    pub y_category: u32,
}

#[derive(Clone, Copy)]
enum Owner {
    X,
    Y,
}

#[derive(Clone, Copy)]
enum Part {
    View(usize),
    Aggregate,
}

type Slot = (Owner, Part);

struct PairGrads<'g> {
    x: &'g mut DualEmbeddingGrad,
    y: &'g mut DualEmbeddingGrad,
}

fn vector<'e>(x: &'e DualEmbedding, y: &'e DualEmbedding, space: Space, slot: Slot) -> &'e [f64] {
    let e = match slot.0 {
        Owner::X => x,
        Owner::Y => y,
    };
    match slot.1 {
        Part::View(i) => e.per_view(space).row(i),
        Part::Aggregate => e.aggregate(space),
    }
}

fn grad_slot<'g>(g: &'g mut PairGrads<'_>, space: Space, slot: Slot) -> &'g mut [f64] {
    let e = match slot.0 {
        Owner::X => &mut *g.x,
        Owner::Y => &mut *g.y,
    };
    match slot.1 {
        Part::View(i) => e.per_view_mut(space).row_mut(i),
        Part::Aggregate => e.aggregate_mut(space),
    }
}

/// Adds `coeff · ∂‖a − b‖` to the gradients of slots `a` and `b`.
fn add_distance_grad(
    x: &DualEmbedding,
    y: &DualEmbedding,
    grads: &mut PairGrads<'_>,
    space: Space,
    a: Slot,
    b: Slot,
    coeff: f64,
) {
    let va = vector(x, y, space, a);
    let vb = vector(x, y, space, b);
    let d = l2(va, vb);
    if d == 0.0 {
        return;
    }
    let unit: Vec<f64> = va.iter().zip(vb).map(|(p, q)| (p - q) / d).collect();
    for (g, u) in grad_slot(grads, space, a).iter_mut().zip(&unit) {
        *g += coeff * u;
    }
    for (g, u) in grad_slot(grads, space, b).iter_mut().zip(&unit) {
        *g -= coeff * u;
    }
}

#[derive(Clone, Copy)]
enum Hinge {
    /// `max(0, ‖a − b‖ − margin)`
    Pull(f64),
    /// `max(0, margin − ‖a − b‖)`
    Push(f64),
}

#[allow(clippy::too_many_arguments)]
fn hinge_term(
    x: &DualEmbedding,
    y: &DualEmbedding,
    grads: &mut Option<PairGrads<'_>>,
    space: Space,
    a: Slot,
    b: Slot,
    hinge: Hinge,
    weight: f64,
) -> f64 {
    let d = l2(vector(x, y, space, a), vector(x, y, space, b));
    let (value, slope) = match hinge {
        Hinge::Pull(m) => (d - m, 1.0),
        Hinge::Push(m) => (m - d, -1.0),
    };
    if value > 0.0 {
        if let Some(g) = grads.as_mut() {
            add_distance_grad(x, y, g, space, a, b, weight * slope);
        }
        weight * value
    } else {
        0.0
    }
}

/// Index of the row of `views` nearest to `target` (lowest on ties).
pub fn nearest_view(views: &Matrix, target: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..views.rows() {
        let d = l2(views.row(i), target);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn piobj_impl(
    x: &DualEmbedding,
    y: &DualEmbedding,
    alpha: f64,
    beta: f64,
    mut grads: Option<PairGrads<'_>>,
) -> f64 {
    let s = Space::Object;
    let ax = (
        Owner::X,
        Part::View(nearest_view(&x.obj_per_view, &y.obj_aggregate)),
    );
    let ay = (
        Owner::Y,
        Part::View(nearest_view(&y.obj_per_view, &x.obj_aggregate)),
    );
    let mx = (Owner::X, Part::Aggregate);
    let my = (Owner::Y, Part::Aggregate);
    let terms = [
        (ax, mx, Hinge::Pull(alpha)),
        (ay, my, Hinge::Pull(alpha)),
        (ax, my, Hinge::Push(beta)),
        (ay, mx, Hinge::Push(beta)),
        (mx, my, Hinge::Push(beta)),
    ];
    terms
        .into_iter()
        .map(|(a, b, h)| hinge_term(x, y, &mut grads, s, a, b, h, 1.0))
        .sum()
}

fn picat_impl(
    x: &DualEmbedding,
    y: &DualEmbedding,
    theta: f64,
    mut grads: Option<PairGrads<'_>>,
) -> f64 {
    let s = Space::Category;
    let mx = (Owner::X, Part::Aggregate);
    let my = (Owner::Y, Part::Aggregate);
    let mut total = hinge_term(x, y, &mut grads, s, mx, my, Hinge::Pull(theta), 1.0);
    let weight = 1.0 / (x.views() + y.views()) as f64;
    for i in 0..x.views() {
        total += hinge_term(
            x,
            y,
            &mut grads,
            s,
            (Owner::X, Part::View(i)),
            my,
            Hinge::Pull(theta),
            weight,
        );
    }
    for j in 0..y.views() {
        total += hinge_term(
            x,
            y,
            &mut grads,
            s,
            (Owner::Y, Part::View(j)),
            mx,
            Hinge::Pull(theta),
            weight,
        );
    }
    total
}

pub fn loss_piobj(x: &DualEmbedding, y: &DualEmbedding, alpha: f64, beta: f64) -> f64 {
    piobj_impl(x, y, alpha, beta, None)
}

pub fn loss_picat(x: &DualEmbedding, y: &DualEmbedding, theta: f64) -> f64 {
    picat_impl(x, y, theta, None)
}

/// Nearest other-category aggregate among `batch` and the hinge value.
fn cat_nearest(
    aggregate: &[f64],
    category: u32,
    batch: &[(u32, &[f64])],
    gamma: f64,
) -> (f64, Option<usize>) {
    let mut best: Option<(usize, f64)> = None;
    for (i, (c, v)) in batch.iter().enumerate() {
        if *c == category {
            continue;
        }
        let d = l2(aggregate, v);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    match best {
        Some((i, d)) if gamma - d > 0.0 => (gamma - d, Some(i)),
        _ => (0.0, None),
    }
}

/// `max(0, γ − min_z ‖m^c_x − m^c_z‖)` over batch aggregates of other
/// categories; zero when the batch has none.
pub fn loss_cat(x: &DualEmbedding, category_x: u32, batch: &[(u32, &[f64])], gamma: f64) -> f64 {
    cat_nearest(&x.cat_aggregate, category_x, batch, gamma).0
}

fn check_objective(pairs: &[PairEmbeddings<'_>], objective: Objective) -> Result<()> {
    if objective == Objective::SameCategory {
        if let Some(p) = pairs.iter().find(|p| p.x_category != p.y_category) {
            return Err(Error::CategoryMismatch {
                x: p.x_object,
                y: p.y_object,
                cat_x: p.x_category,
                cat_y: p.y_category,
            });
        }
    }
    Ok(())
}

fn joint_impl(
    pairs: &[PairEmbeddings<'_>],
    objective: Objective,
    margins: &Margins,
    mut grads: Option<&mut [(DualEmbeddingGrad, DualEmbeddingGrad)]>,
) -> Result<BatchLoss> {
    check_objective(pairs, objective)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty pair batch".into()));
    }
    if let Some(g) = grads.as_deref() {
        assert_eq!(g.len(), pairs.len(), "one gradient slot per pair");
    }
    // batch context for L_cat: [x0, y0, x1, y1, ...]
    let context: Vec<(u32, &[f64])> = pairs
        .iter()
        .flat_map(|p| {
            [
                (p.x_category, p.x.cat_aggregate.as_slice()),
                (p.y_category, p.y.cat_aggregate.as_slice()),
            ]
        })
        .collect();
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut cat_grads: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        let pg = grads.as_deref_mut().map(|g| {
            let (gx, gy) = &mut g[pi];
            PairGrads { x: gx, y: gy }
        });
        let l_piobj = piobj_impl(p.x, p.y, margins.alpha, margins.beta, pg);
        let l_picat = match objective {
            Objective::SameCategory => {
                let pg = grads.as_deref_mut().map(|g| {
                    let (gx, gy) = &mut g[pi];
                    PairGrads { x: gx, y: gy }
                });
                picat_impl(p.x, p.y, margins.theta, pg)
            }
            Objective::Partition => 0.0,
        };
        let mut l_cat = 0.0;
        for (role, emb, cat) in [(0usize, p.x, p.x_category), (1, p.y, p.y_category)] {
            let (v, neg) = cat_nearest(&emb.cat_aggregate, cat, &context, margins.gamma);
            l_cat += v;
            if let Some(n) = neg {
                cat_grads.push((2 * pi + role, n, -1.0));
            }
        }
        let l_joint = l_piobj + l_picat + l_cat;
        per_pair.push(LossBreakdown {
            l_piobj,
            l_picat,
            l_cat,
            l_joint,
            informative: l_piobj > 0.0,
        });
    }
    if let Some(g) = grads {
        let agg = |m: usize| {
            let p = &pairs[m / 2];
            if m.is_multiple_of(2) {
                p.x.cat_aggregate.as_slice()
            } else {
                p.y.cat_aggregate.as_slice()
            }
        };
        for (member, neg, coeff) in cat_grads {
            let a = agg(member);
            let b = agg(neg);
            let d = l2(a, b);
            if d == 0.0 {
                continue;
            }
            let unit: Vec<f64> = a.iter().zip(b).map(|(p, q)| (p - q) / d).collect();
            let slot =
                |g: &mut [(DualEmbeddingGrad, DualEmbeddingGrad)], m: usize, u: &[f64], c: f64| {
                    let (gx, gy) = &mut g[m / 2];
                    let target = if m.is_multiple_of(2) { gx } else { gy };
                    for (t, v) in target.cat_aggregate.iter_mut().zip(u) {
                        *t += c * v;
                    }
                };
            slot(g, member, &unit, coeff);
            slot(g, neg, &unit, -coeff);
        }
    }
    let n = per_pair.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| per_pair.iter().map(f).sum::<f64>() / n;
    let informative_fraction = per_pair.iter().filter(|b| b.informative).count() as f64 / n;
    let mean = LossBreakdown {
        l_piobj: sum(|b| b.l_piobj),
        l_picat: sum(|b| b.l_picat),
        l_cat: sum(|b| b.l_cat),
        l_joint: sum(|b| b.l_joint),
        informative: per_pair.iter().any(|b| b.informative),
    };
    Ok(BatchLoss {
        per_pair,
        mean,
        informative_fraction,
    })
}

/// Same-category objective averaged over pairs. Pairs that mix categories
/// are rejected.
pub fn loss_joint_cat(pairs: &[PairEmbeddings<'_>], margins: &Margins) -> Result<BatchLoss> {
    joint_impl(pairs, Objective::SameCategory, margins, None)
}

/// Partition objective averaged over pairs; cross-category pairs allowed.
pub fn loss_joint_part(pairs: &[PairEmbeddings<'_>], margins: &Margins) -> Result<BatchLoss> {
    joint_impl(pairs, Objective::Partition, margins, None)
}

pub fn loss_joint(
    pairs: &[PairEmbeddings<'_>],
    objective: Objective,
    margins: &Margins,
) -> Result<BatchLoss> {
    joint_impl(pairs, objective, margins, None)
}

/// Scores `pairs` and accumulates into `grads[i]` the gradient of the
/// *sum* of per-pair joint losses with respect to pair `i`'s embeddings.
pub fn loss_joint_with_grad(
    pairs: &[PairEmbeddings<'_>],
    objective: Objective,
    margins: &Margins,
    grads: &mut [(DualEmbeddingGrad, DualEmbeddingGrad)],
) -> Result<BatchLoss> {
    joint_impl(pairs, objective, margins, Some(grads))
}
