//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use owsc_core::encoder::{EncoderConfig, ParamSet};
use owsc_core::losses::{Margins, Objective};
use owsc_core::objective::{minibatch_loss, minibatch_loss_and_grad, PairInput};
use owsc_core::rng::seeded;
use owsc_core::tensor::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Random pairs over `n_objects` objects split evenly into two categories.
/// Same-category pairs when `objective` is `SameCategory`, cross-category
/// otherwise.
pub fn random_pairs(
    cfg: &EncoderConfig,
    views: usize,
    n_pairs: usize,
    objective: Objective,
    seed: u64,
) -> Vec<PairInput> {
    (0..n_pairs)
        .map(|i| {
            let x_category = (i % 2) as u32;
            let y_category = match objective {
                Objective::SameCategory => x_category,
                Objective::Partition => 1 - x_category,
            };
            PairInput {
                x_object: 2 * i as u32,
                y_object: 2 * i as u32 + 1,
                x_category,
                y_category,
                x_features: normal_matrix(views, cfg.input_dim, seed * 1000 + 2 * i as u64),
                y_features: normal_matrix(views, cfg.input_dim, seed * 1000 + 2 * i as u64 + 1),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub n_params: usize,
    pub max_abs_grad: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`: relative error, with an absolute
/// floor for entries whose true gradient vanishes.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference stencil: `Three` is `(f(p+h) − f(p−h)) / 2h` with
/// O(h²) truncation error; `Five` adds the ±2h points for O(h⁴).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Three,
    Five,
}

/// Central finite differences of the summed joint loss (eval mode) over
/// every parameter, compared with the analytic gradient.
pub fn finite_difference_check(
    params: &ParamSet,
    pairs: &[PairInput],
    objective: Objective,
    margins: &Margins,
    h: f64,
    floor: f64,
    stencil: Stencil,
) -> FdReport {
    let (_, grads) = minibatch_loss_and_grad(params, pairs, objective, margins, None).unwrap();
    let analytic = grads.flatten();
    let base = params.flatten();
    let n = pairs.len() as f64;
    let total = |flat: &[f64]| -> f64 {
        let mut p = params.clone();
        p.load_flat(flat);
        minibatch_loss(&p, pairs, objective, margins, None)
            .unwrap()
            .mean
            .l_joint
            * n
    };
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        n_params: base.len(),
        max_abs_grad: 0.0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = base.clone();
    for i in 0..base.len() {
        let mut at = |step: f64| {
            probe[i] = base[i] + step;
            let v = total(&probe);
            probe[i] = base[i];
            v
        };
        let numeric = match stencil {
            Stencil::Three => (at(h) - at(-h)) / (2.0 * h),
            Stencil::Five => (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h),
        };
        let e = rel_err(analytic[i], numeric, floor);
        report.max_abs_grad = report.max_abs_grad.max(analytic[i].abs());
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}

/// Straight-line forward pass written against raw parameter storage.
/// Returns (object per-view rows, category per-view rows).
pub fn reference_forward(params: &ParamSet, x: &Matrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (obj, cat, _) = reference_forward_traced(params, x);
    (obj, cat)
}

/// Pre-activations of every ReLU layer: the trunk, then the object blocks,
/// then the category blocks; each `rows × D`.
pub type ReluTrace = Vec<Vec<Vec<f64>>>;

/// As [`reference_forward`], also returning every ReLU pre-activation.
pub fn reference_forward_traced(
    params: &ParamSet,
    x: &Matrix,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, ReluTrace) {
    let mut trace: ReluTrace = Vec::new();
    let cfg = &params.config;
    let (v, f, d) = (x.rows(), cfg.input_dim, cfg.embed_dim);
    let heads = cfg.n_heads;
    let dh = d / heads;
    let tw = params.trunk.weight.as_slice();
    let tb = &params.trunk.bias;
    let mut trunk = vec![vec![0.0; d]; v];
    let mut pre_rows = vec![vec![0.0; d]; v];
    for r in 0..v {
        for c in 0..d {
            let mut s = tb[c];
            for k in 0..f {
                s += x.get(r, k) * tw[k * d + c];
            }
            pre_rows[r][c] = s;
            trunk[r][c] = if s > 0.0 { s } else { 0.0 };
        }
    }
    trace.push(pre_rows);
    let ln = |row: &[f64], gain: &[f64], bias: &[f64]| -> Vec<f64> {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let denom = (var + 1e-5).sqrt();
        (0..row.len())
            .map(|i| gain[i] * (row[i] - mean) / denom + bias[i])
            .collect()
    };
    let mut outputs = Vec::new();
    for head in [&params.object, &params.category] {
        let w = head.input.weight.as_slice();
        let mut z = vec![vec![0.0; d]; v];
        for r in 0..v {
            for c in 0..d {
                let mut s = head.input.bias[c];
                for k in 0..d {
                    s += trunk[r][k] * w[k * d + c];
                }
                z[r][c] = s;
            }
        }
        for b in &head.blocks {
            let proj = |m: &Matrix| -> Vec<Vec<f64>> {
                (0..v)
                    .map(|r| {
                        (0..d)
                            .map(|c| (0..d).map(|k| z[r][k] * m.get(k, c)).sum())
                            .collect()
                    })
                    .collect()
            };
            let (q, k, val) = (proj(&b.query), proj(&b.key), proj(&b.value));
            let mut concat = vec![vec![0.0; d]; v];
            for h in 0..heads {
                for i in 0..v {
                    let scores: Vec<f64> = (0..v)
                        .map(|j| {
                            (0..dh)
                                .map(|t| q[i][h * dh + t] * k[j][h * dh + t])
                                .sum::<f64>()
                                / (dh as f64).sqrt()
                        })
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let sum: f64 = e.iter().sum();
                    for t in 0..dh {
                        concat[i][h * dh + t] =
                            (0..v).map(|j| e[j] / sum * val[j][h * dh + t]).sum();
                    }
                }
            }
            let mut y1 = Vec::new();
            for r in 0..v {
                let res: Vec<f64> = (0..d)
                    .map(|c| {
                        z[r][c]
                            + (0..d)
                                .map(|k| concat[r][k] * b.output.get(k, c))
                                .sum::<f64>()
                    })
                    .collect();
                y1.push(ln(&res, &b.norm1.gain, &b.norm1.bias));
            }
            let mut next = Vec::new();
            let mut pre_rows = Vec::new();
            for r in 0..v {
                let pre: Vec<f64> = (0..d)
                    .map(|c| {
                        b.feed_forward.bias[c]
                            + (0..d)
                                .map(|k| y1[r][k] * b.feed_forward.weight.get(k, c))
                                .sum::<f64>()
                    })
                    .collect();
                let res: Vec<f64> = (0..d).map(|c| y1[r][c] + pre[c].max(0.0)).collect();
                next.push(ln(&res, &b.norm2.gain, &b.norm2.bias));
                pre_rows.push(pre);
            }
            trace.push(pre_rows);
            z = next;
        }
        outputs.push(z);
    }
    let cat = outputs.pop().unwrap();
    let obj = outputs.pop().unwrap();
    (obj, cat, trace)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n)
        .collect()
}

/// Margin value among midpoints of the sorted `distances` that lies above
/// `above` and is farthest from every distance. Returns (margin, gap).
fn pick_margin(distances: &[f64], above: f64) -> (f64, f64) {
    let mut d: Vec<f64> = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let mut best = (above + 1.0, 0.0);
    for w in d.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let gap = 0.5 * (w[1] - w[0]);
        if mid > above && gap > best.1 {
            best = (mid, gap);
        }
    }
    if best.1 == 0.0 {
        // nothing above the floor: put the margin past the largest distance
        let top = d.last().copied().unwrap_or(0.0).max(above);
        best = (top + 0.5, 0.5);
    }
    best
}

/// A finite-difference test instance whose kinks (ReLU, hinge and argmin
/// switches) all lie at least `clearance` away from the evaluation point.
pub struct GradcheckInstance {
    pub params: ParamSet,
    pub pairs: Vec<PairInput>,
    pub margins: Margins,
    pub clearance: f64,
    pub shortest_active: f64,
    pub data_seed: u64,
}

pub fn gradcheck_instance(
    cfg: &EncoderConfig,
    objective: Objective,
    views: usize,
    n_pairs: usize,
    min_active: f64,
) -> GradcheckInstance {
    for data_seed in 1..500u64 {
        let pairs = random_pairs(cfg, views, n_pairs, objective, data_seed);
        let mut params = owsc_core::encoder::init_params(cfg).unwrap();
        let relu = center_relu_biases(&mut params, &pairs);
        let mut enc = Vec::new();
        for p in &pairs {
            for x in [&p.x_features, &p.y_features] {
                let (o, c, _) = reference_forward_traced(&params, x);
                let (mo, mc) = (mean_rows(&o), mean_rows(&c));
                enc.push((o, mo, c, mc));
            }
        }
        let mut pull = Vec::new();
        let mut push = Vec::new();
        let mut cat_pull = Vec::new();
        let mut cat_push = Vec::new();
        let mut argmin_gap = f64::INFINITY;
        let nearest = |views: &[Vec<f64>], target: &[f64], gap: &mut f64| -> usize {
            let mut ds: Vec<(f64, usize)> = views
                .iter()
                .enumerate()
                .map(|(i, v)| (dist(v, target), i))
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0));
            if ds.len() > 1 {
                *gap = gap.min(ds[1].0 - ds[0].0);
            }
            ds[0].1
        };
        for (pi, p) in pairs.iter().enumerate() {
            let (xo, xm, xc, xcm) = &enc[2 * pi];
            let (yo, ym, yc, ycm) = &enc[2 * pi + 1];
            let ax = &xo[nearest(xo, ym, &mut argmin_gap)];
            let ay = &yo[nearest(yo, xm, &mut argmin_gap)];
            pull.push(dist(ax, xm));
            pull.push(dist(ay, ym));
            push.push(dist(ax, ym));
            push.push(dist(ay, xm));
            push.push(dist(xm, ym));
            if objective == Objective::SameCategory {
                cat_pull.push(dist(xcm, ycm));
                cat_pull.extend(xc.iter().map(|v| dist(v, ycm)));
                cat_pull.extend(yc.iter().map(|v| dist(v, xcm)));
            }
            for (member, cat) in [(2 * pi, p.x_category), (2 * pi + 1, p.y_category)] {
                let mut ds: Vec<f64> = Vec::new();
                for (qi, q) in pairs.iter().enumerate() {
                    for (other, ocat) in [(2 * qi, q.x_category), (2 * qi + 1, q.y_category)] {
                        if ocat != cat {
                            ds.push(dist(&enc[member].3, &enc[other].3));
                        }
                    }
                }
                ds.sort_by(f64::total_cmp);
                if let Some(&d0) = ds.first() {
                    cat_push.push(d0);
                    if ds.len() > 1 {
                        argmin_gap = argmin_gap.min(ds[1] - d0);
                    }
                }
            }
        }
        let (alpha, ga) = pick_margin(&pull, 0.0);
        let (beta, gb) = pick_margin(&push, alpha);
        let (theta, gt) = if cat_pull.is_empty() {
            (0.25, f64::INFINITY)
        } else {
            pick_margin(&cat_pull, 0.0)
        };
        let (gamma, gg) = pick_margin(&cat_push, theta);
        let clearance = [ga, gb, gt, gg, argmin_gap]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        // active hinge distances; the norm's curvature grows as 1/d
        let shortest_active = pull
            .iter()
            .filter(|&&d| d > alpha)
            .chain(cat_pull.iter().filter(|&&d| d > theta))
            .chain(push.iter().filter(|&&d| d < beta))
            .chain(cat_push.iter().filter(|&&d| d < gamma))
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if relu > 0.02 && clearance > 0.05 && shortest_active > min_active {
            return GradcheckInstance {
                params,
                pairs,
                margins: Margins {
                    alpha,
                    beta,
                    theta,
                    gamma,
                },
                clearance,
                shortest_active,
                data_seed,
            };
        }
    }
    panic!("no kink-free instance found");
}

/// Per-unit ReLU biases placed in the middle of the widest gap between the
/// unit's pre-activations over every row in `pairs`, layer by layer. Each
/// unit then fires for some rows and not others, and no pre-activation sits
/// near zero. Returns the smallest resulting |pre-activation|.
fn center_relu_biases(params: &mut ParamSet, pairs: &[PairInput]) -> f64 {
    let n_layers = 1 + 2 * params.config.n_attention_layers;
    let mut clearance = f64::INFINITY;
    for layer in 0..n_layers {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); params.config.embed_dim];
        for p in pairs {
            for x in [&p.x_features, &p.y_features] {
                let (_, _, trace) = reference_forward_traced(params, x);
                for row in &trace[layer] {
                    for (c, v) in row.iter().enumerate() {
                        columns[c].push(*v);
                    }
                }
            }
        }
        let bias = relu_bias_mut(params, layer);
        for (c, mut vals) in columns.into_iter().enumerate() {
            vals.sort_by(f64::total_cmp);
            let (lo, hi) = (vals.len() / 4, 3 * vals.len() / 4);
            let (gap, mid) = (lo..hi)
                .map(|i| (vals[i + 1] - vals[i], 0.5 * (vals[i + 1] + vals[i])))
                .fold((0.0, 0.0), |best, g| if g.0 > best.0 { g } else { best });
            bias[c] -= mid;
            clearance = clearance.min(0.5 * gap);
        }
    }
    clearance
}

fn relu_bias_mut(params: &mut ParamSet, layer: usize) -> &mut Vec<f64> {
    let blocks = params.config.n_attention_layers;
    if layer == 0 {
        &mut params.trunk.bias
    } else if layer <= blocks {
        &mut params.object.blocks[layer - 1].feed_forward.bias
    } else {
        &mut params.category.blocks[layer - 1 - blocks].feed_forward.bias
    }
}

/// A random orthogonal `d × d` matrix (Gram–Schmidt on Gaussian columns).
pub fn random_rotation(d: usize, seed: u64) -> Matrix {
    let g = normal_matrix(d, d, seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut v: Vec<f64> = (0..d).map(|i| g.get(i, j)).collect();
        for u in &cols {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        cols.push(v);
    }
    let mut q = Matrix::zeros(d, d);
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}
