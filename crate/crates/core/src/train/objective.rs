use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::backward::{backward, Gradients, Upstream};
use super::loss::{sigmoid, softplus, total_loss, LossSwitches};
use super::sampling::Batch;
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{aggregate, forward, ModelParams, VariantFlags};

/// Value of each objective term on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub bpr: f64,
    pub rec: f64,
    /// `l2_coeff * ||params||^2`
    pub reg: f64,
    /// Enabled terms plus `reg`.
    pub total: f64,
}

/// Which parameters the `l2_coeff` penalty covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegScope {
    /// Every entry of every learnable tensor.
    All,
    /// Embedding and factor rows of the batch's nodes, once per occurrence
    /// and divided by the batch size, plus the whole transform.
    #[default]
    Batch,
}

/// The training objective for a fixed graph and variant.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub graph: &'a InteractionGraph,
    pub flags: VariantFlags,
    pub l2_coeff: f64,
    pub switches: LossSwitches,
    pub reg_scope: RegScope,
}

/// Node rows penalized by a batch, one entry per occurrence.
pub(crate) fn batch_nodes(batch: &Batch, num_users: usize) -> impl Iterator<Item = usize> + '_ {
    let items = batch
        .pos_items
        .iter()
        .chain(&batch.neg_items)
        .chain(&batch.rec_neg_items)
        .map(move |&i| num_users + i as usize);
    batch.users.iter().map(|&u| u as usize).chain(items)
}

/// Row gradients filled in by [`batch_terms`].
pub(crate) struct TermGrads<'g> {
    pub aggregate: &'g mut Array2<f64>,
    pub last_layer: &'g mut Array2<f64>,
}

/// BPR on the aggregated representation `f` and reconstruction on the last
/// continuous layer `v_last`, both in the shared node layout. Gradients of
/// the enabled terms are accumulated into `grads` when given.
pub(crate) fn batch_terms(
    f: ArrayView2<'_, f64>,
    v_last: ArrayView2<'_, f64>,
    num_users: usize,
    batch: &Batch,
    switches: LossSwitches,
    mut grads: Option<TermGrads<'_>>,
) -> (f64, f64) {
    let b = batch.len();
    if b == 0 {
        return (0.0, 0.0);
    }

    let k = batch.neg_per_pos;
    let mut bpr = 0.0;
    if k > 0 {
        let pairs = (b * k) as f64;
        for t in 0..b {
            let u = batch.users[t] as usize;
            let p = num_users + batch.pos_items[t] as usize;
            let fu = f.row(u);
            let pos_score = fu.dot(&f.row(p));
            for j in 0..k {
                let n = num_users + batch.neg_items[t * k + j] as usize;
                let z = pos_score - fu.dot(&f.row(n));
                bpr += softplus(-z);
                if let (true, Some(g)) = (switches.use_bpr, grads.as_mut()) {
                    let dz = -sigmoid(-z) / pairs;
                    let diff = &f.row(p) - &f.row(n);
                    g.aggregate.row_mut(u).scaled_add(dz, &diff);
                    g.aggregate.row_mut(p).scaled_add(dz, &fu);
                    g.aggregate.row_mut(n).scaled_add(-dz, &fu);
                }
            }
        }
        bpr /= pairs;
    }

    let k = batch.rec_neg_per_pos;
    let labelled = (b * (k + 1)) as f64;
    let mut rec = 0.0;
    let mut pair = |u: usize, i: usize, positive: bool, grads: &mut Option<TermGrads<'_>>| {
        let s = v_last.row(u).dot(&v_last.row(i));
        let (loss, ds) = if positive {
            (softplus(-s), -sigmoid(-s))
        } else {
            (softplus(s), sigmoid(s))
        };
        rec += loss;
        if let (true, Some(g)) = (switches.use_rec, grads.as_mut()) {
            let ds = ds / labelled;
            g.last_layer.row_mut(u).scaled_add(ds, &v_last.row(i));
            g.last_layer.row_mut(i).scaled_add(ds, &v_last.row(u));
        }
    };
    for t in 0..b {
        let u = batch.users[t] as usize;
        pair(u, num_users + batch.pos_items[t] as usize, true, &mut grads);
        for j in 0..k {
            pair(
                u,
                num_users + batch.rec_neg_items[t * k + j] as usize,
                false,
                &mut grads,
            );
        }
    }
    rec /= labelled;
    (bpr, rec)
}

impl Objective<'_> {
    /// Value of the `l2_coeff` penalty for `batch`.
    pub fn regularizer(&self, params: &ModelParams, batch: &Batch) -> f64 {
        match self.reg_scope {
            RegScope::All => self.l2_coeff * params.squared_norm(),
            RegScope::Batch => {
                let sq = |r: ndarray::ArrayView1<'_, f64>| r.dot(&r);
                let mut rows = 0.0;
                for x in batch_nodes(batch, self.graph.num_users()) {
                    rows += sq(params.embeddings.row(x));
                    if let Some(f) = &params.layer_factors {
                        rows += sq(f.row(x));
                    }
                }
                let w = params.transform.iter().map(|x| x * x).sum::<f64>();
                self.l2_coeff * (rows / batch.len().max(1) as f64 + w)
            }
        }
    }

    pub(crate) fn parts(
        &self,
        params: &ModelParams,
        batch: &Batch,
        bpr: f64,
        rec: f64,
    ) -> Result<LossParts> {
        let (total, reg) = match self.reg_scope {
            RegScope::All => (
                total_loss(bpr, rec, params, self.l2_coeff, self.switches)?,
                self.l2_coeff * params.squared_norm(),
            ),
            RegScope::Batch => {
                let reg = self.regularizer(params, batch);
                let data = total_loss(bpr, rec, params, 0.0, self.switches)?;
                (data + reg, reg)
            }
        };
        Ok(LossParts {
            bpr,
            rec,
            reg,
            total,
        })
    }

    fn add_regularizer_gradient(&self, params: &ModelParams, batch: &Batch, grads: &mut Gradients) {
        match self.reg_scope {
            RegScope::All => grads.add_l2(params, self.l2_coeff),
            RegScope::Batch => {
                if self.l2_coeff == 0.0 {
                    return;
                }
                let scale = 2.0 * self.l2_coeff / batch.len().max(1) as f64;
                for x in batch_nodes(batch, self.graph.num_users()) {
                    grads
                        .embeddings
                        .row_mut(x)
                        .scaled_add(scale, &params.embeddings.row(x));
                    if let (Some(g), Some(f)) =
                        (grads.layer_factors.as_mut(), &params.layer_factors)
                    {
                        g.row_mut(x).scaled_add(scale, &f.row(x));
                    }
                }
                grads
                    .transform
                    .scaled_add(2.0 * self.l2_coeff, &params.transform);
            }
        }
    }

    /// Forward-only evaluation of the objective.
    pub fn loss(&self, params: &ModelParams, batch: &Batch) -> Result<LossParts> {
        let cache = forward(params, self.graph, &self.flags)?;
        let f = aggregate(&cache, &self.flags, true);
        let v_last = &cache.continuous[cache.num_layers()];
        let (bpr, rec) = batch_terms(
            f.view(),
            v_last.view(),
            self.graph.num_users(),
            batch,
            self.switches,
            None,
        );
        self.parts(params, batch, bpr, rec)
    }

    /// Objective value and its gradient with respect to every parameter.
    pub fn loss_and_gradients(
        &self,
        params: &ModelParams,
        batch: &Batch,
    ) -> Result<(LossParts, Gradients)> {
        let cache = forward(params, self.graph, &self.flags)?;
        let f = aggregate(&cache, &self.flags, true);
        let v_last = &cache.continuous[cache.num_layers()];
        let mut grad_f = Array2::zeros(f.raw_dim());
        let mut grad_last = Array2::zeros(v_last.raw_dim());
        let (bpr, rec) = batch_terms(
            f.view(),
            v_last.view(),
            self.graph.num_users(),
            batch,
            self.switches,
            Some(TermGrads {
                aggregate: &mut grad_f,
                last_layer: &mut grad_last,
            }),
        );
        let parts = self.parts(params, batch, bpr, rec)?;
        let upstream = Upstream {
            at_aggregate: grad_f,
            at_last_layer: Some(grad_last),
        };
        let mut grads = backward(&cache, &upstream, params, self.graph, &self.flags, true)?;
        self.add_regularizer_gradient(params, batch, &mut grads);
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        Ok((parts, grads))
    }
}
