//! Loss along constant shifts of the base embeddings.
//!
//! Each user row `v_x` becomes `v_x + p_u * mean(|v_x|) * 1` and each item
//! row likewise with `p_i`. Propagation and the transform are linear, so
//! every layer's rows and pre-activations shift by a precomputed rank-one
//! term; only the nodes touched by the probe batch are recomputed.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{aggregate, forward, rescale_factor, sign_value, ForwardCache, ModelParams};
use crate::train::{
    batch_nodes, batch_terms, sample_batch, stream_rng, Batch, Objective, RegScope,
};

/// Total loss over a grid of user and item perturbation magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub p_values: Vec<f64>,
    /// `losses[[a, b]]` is the loss at `p_user = p_values[a]`,
    /// `p_item = p_values[b]`.
    pub losses: Array2<f64>,
}

impl LandscapeGrid {
    /// Rows `p_user,p_item,loss`, user magnitude varying slowest.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "p_user,p_item,loss")?;
        for (a, pu) in self.p_values.iter().enumerate() {
            for (b, pi) in self.p_values.iter().enumerate() {
                writeln!(out, "{pu:.4},{pi:.4},{:.10}", self.losses[[a, b]])?;
            }
        }
        Ok(())
    }

    /// Loss at `(p_user, p_item)` if both are grid points.
    pub fn at(&self, p_user: f64, p_item: f64) -> Option<f64> {
        let a = self.p_values.iter().position(|&p| p == p_user)?;
        let b = self.p_values.iter().position(|&p| p == p_item)?;
        Some(self.losses[[a, b]])
    }

    /// Largest absolute second difference along either axis — a curvature
    /// proxy for comparing surfaces on the same grid.
    pub fn max_second_difference(&self) -> f64 {
        let l = &self.losses;
        let (n, m) = l.dim();
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..m {
                if a >= 1 && a + 1 < n {
                    worst = worst.max((l[[a + 1, b]] - 2.0 * l[[a, b]] + l[[a - 1, b]]).abs());
                }
                if b >= 1 && b + 1 < m {
                    worst = worst.max((l[[a, b + 1]] - 2.0 * l[[a, b]] + l[[a, b - 1]]).abs());
                }
            }
        }
        worst
    }
}

/// `-max, -max + step, ..., max`, with 0 included exactly.
pub fn signed_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && max >= 0.0 && max.is_finite()) {
        return Err(Error::Config(format!("bad grid: max {max}, step {step}")));
    }
    let n = (max / step + 1e-9).floor() as i64;
    // Round to the step's decimal precision so grid points print cleanly.
    Ok((-n..=n)
        .map(|i| (i as f64 * step * 1e6).round() / 1e6)
        .collect())
}

/// Seeded probe batch of `size` positives with their negatives.
pub fn landscape_batch(
    graph: &InteractionGraph,
    size: usize,
    neg_per_pos: usize,
    rec_neg_per_pos: usize,
    seed: u64,
) -> Result<Batch> {
    let mut rng = stream_rng(seed, usize::MAX >> 32, 0);
    sample_batch(graph, size, neg_per_pos, rec_neg_per_pos, &mut rng)
}

/// Node rows used by a batch, and the batch renumbered onto them.
struct LocalBatch {
    nodes: Vec<usize>,
    num_users: usize,
    batch: Batch,
}

fn localize(batch: &Batch, num_users: usize) -> LocalBatch {
    let mut users = BTreeMap::new();
    let mut items = BTreeMap::new();
    for &u in &batch.users {
        users.insert(u, 0u32);
    }
    for &i in batch
        .pos_items
        .iter()
        .chain(&batch.neg_items)
        .chain(&batch.rec_neg_items)
    {
        items.insert(i, 0u32);
    }
    for (k, v) in users.values_mut().enumerate() {
        *v = k as u32;
    }
    for (k, v) in items.values_mut().enumerate() {
        *v = k as u32;
    }
    let nodes = users
        .keys()
        .map(|&u| u as usize)
        .chain(items.keys().map(|&i| num_users + i as usize))
        .collect();
    let remap = |m: &BTreeMap<u32, u32>, xs: &[u32]| xs.iter().map(|x| m[x]).collect();
    LocalBatch {
        nodes,
        num_users: users.len(),
        batch: Batch {
            users: remap(&users, &batch.users),
            pos_items: remap(&items, &batch.pos_items),
            neg_items: remap(&items, &batch.neg_items),
            neg_per_pos: batch.neg_per_pos,
            rec_neg_items: remap(&items, &batch.rec_neg_items),
            rec_neg_per_pos: batch.rec_neg_per_pos,
        },
    }
}

/// Evaluates `objective` on `batch` for every `(p_user, p_item)` pair in
/// `p_grid x p_grid`. `params` is not modified; the `(0, 0)` entry equals
/// `objective.loss(params, batch).total` exactly.
pub fn perturb_landscape(
    objective: &Objective<'_>,
    params: &ModelParams,
    batch: &Batch,
    p_grid: &[f64],
) -> Result<LandscapeGrid> {
    let graph = objective.graph;
    let flags = objective.flags;
    let full = forward(params, graph, &flags)?;
    let n = graph.num_nodes();
    let nu = graph.num_users();
    let layers = params.num_layers;
    let (c, d) = (params.embed_dim(), params.code_dim());

    // Per-row shift magnitudes, propagated through every layer.
    let mut means = Array2::<f64>::zeros((n, 2));
    for (x, row) in params.embeddings.axis_iter(Axis(0)).enumerate() {
        means[[x, usize::from(x >= nu)]] = row.iter().map(|v| v.abs()).sum::<f64>() / c as f64;
    }
    let mut shifts = vec![means.clone()];
    for l in 1..=layers {
        let next = graph.propagate(shifts[l - 1].view())?;
        shifts.push(next);
    }
    let column_sums: Array1<f64> = params.transform.sum_axis(Axis(0));

    // Closed form of the penalty's change, ||E_x + s 1||^2 - ||E_x||^2
    // summed with each row's weight in the penalty.
    let weights: Vec<f64> = match objective.reg_scope {
        RegScope::All => vec![1.0; n],
        RegScope::Batch => {
            let mut w = vec![0.0; n];
            for x in batch_nodes(batch, nu) {
                w[x] += 1.0 / batch.len().max(1) as f64;
            }
            w
        }
    };
    let (mut lin, mut quad) = ([0.0f64; 2], [0.0f64; 2]);
    for (x, row) in params.embeddings.axis_iter(Axis(0)).enumerate() {
        let t = usize::from(x >= nu);
        lin[t] += weights[x] * 2.0 * means[[x, t]] * row.sum();
        quad[t] += weights[x] * c as f64 * means[[x, t]] * means[[x, t]];
    }

    let local = localize(batch, nu);
    let m = local.nodes.len();
    let mut losses = Array2::<f64>::zeros((p_grid.len(), p_grid.len()));
    let mut mini = ForwardCache {
        continuous: vec![Array2::zeros((m, c)); layers + 1],
        preactivation: vec![Array2::zeros((m, d)); layers + 1],
        codes: vec![Array2::zeros((m, d)); layers + 1],
        alphas: vec![Array1::zeros(m); layers + 1],
        learned_factors: full
            .learned_factors
            .as_ref()
            .map(|f| f.select(Axis(0), &local.nodes)),
    };
    for (a, &pu) in p_grid.iter().enumerate() {
        for (b, &pi) in p_grid.iter().enumerate() {
            for (l, shift) in shifts.iter().enumerate() {
                for (r, &x) in local.nodes.iter().enumerate() {
                    let s = pu * shift[[x, 0]] + pi * shift[[x, 1]];
                    let mut v = mini.continuous[l].row_mut(r);
                    v.assign(&full.continuous[l].row(x));
                    v.mapv_inplace(|e| e + s);
                    let mut phi = mini.preactivation[l].row_mut(r);
                    phi.assign(&full.preactivation[l].row(x));
                    phi.zip_mut_with(&column_sums, |p, &w| *p += s * w);
                    mini.codes[l]
                        .row_mut(r)
                        .zip_mut_with(&phi, |q, &p| *q = sign_value(p));
                    mini.alphas[l][r] = rescale_factor(v.as_slice().expect("standard layout"), d);
                }
            }
            let f = aggregate(&mini, &flags, true);
            let (bpr, rec) = batch_terms(
                f.view(),
                mini.continuous[layers].view(),
                local.num_users,
                &local.batch,
                objective.switches,
                None,
            );
            let total = objective.parts(params, batch, bpr, rec)?.total;
            let reg_shift = pu * lin[0] + pu * pu * quad[0] + pi * lin[1] + pi * pi * quad[1];
            losses[[a, b]] = total + objective.l2_coeff * reg_shift;
        }
    }
    Ok(LandscapeGrid {
        p_values: p_grid.to_vec(),
        losses,
    })
}
