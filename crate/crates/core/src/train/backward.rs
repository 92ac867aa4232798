//! Reverse-mode gradients through aggregation, the straight-through sign,
//! the shared transform and the propagation layers.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{ForwardCache, ModelParams, Rescaling, VariantFlags};

/// Gradients with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Array2<f64>,
    pub transform: Array2<f64>,
    pub layer_factors: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            embeddings: Array2::zeros(params.embeddings.raw_dim()),
            transform: Array2::zeros(params.transform.raw_dim()),
            layer_factors: params
                .layer_factors
                .as_ref()
                .map(|f| Array2::zeros(f.raw_dim())),
        }
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embeddings, &self.transform];
        out.extend(self.layer_factors.as_ref());
        out
    }

    /// Adds the gradient of `l2_coeff * ||params||^2`.
    pub fn add_l2(&mut self, params: &ModelParams, l2_coeff: f64) {
        if l2_coeff == 0.0 {
            return;
        }
        self.embeddings
            .scaled_add(2.0 * l2_coeff, &params.embeddings);
        self.transform.scaled_add(2.0 * l2_coeff, &params.transform);
        if let (Some(g), Some(p)) = (self.layer_factors.as_mut(), params.layer_factors.as_ref()) {
            g.scaled_add(2.0 * l2_coeff, p);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Loss gradients entering the backward pass.
#[derive(Debug, Clone)]
pub struct Upstream {
    /// `dL/dF` for the aggregated representation as used by the loss
    /// (after the training shrink), `N x d`.
    pub at_aggregate: Array2<f64>,
    /// `dL/dv^(L)` from losses on the last continuous layer, `N x c`.
    pub at_last_layer: Option<Array2<f64>>,
}

/// Straight-through estimator with hard-tanh clipping: passes `upstream`
/// where `|preactivation| <= 1` and zeroes it elsewhere.
pub fn ste_backward(
    upstream: ArrayView2<'_, f64>,
    preactivation: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    if upstream.dim() != preactivation.dim() {
        return Err(Error::Shape(format!(
            "upstream {:?} vs pre-activation {:?}",
            upstream.dim(),
            preactivation.dim()
        )));
    }
    Ok(Zip::from(&upstream)
        .and(&preactivation)
        .map_collect(|&g, &phi| if phi.abs() <= 1.0 { g } else { 0.0 }))
}

/// Backpropagates `upstream` to every learnable tensor.
///
/// Deterministic rescaling factors are treated as constants. With learnable
/// factors the gradient for node `x`, layer `l` is `<dL/dS_l[x], q_l[x]>`.
pub fn backward(
    cache: &ForwardCache,
    upstream: &Upstream,
    params: &ModelParams,
    graph: &InteractionGraph,
    flags: &VariantFlags,
    training: bool,
) -> Result<Gradients> {
    let layers = cache.num_layers();
    let n = cache.num_nodes();
    if layers != params.num_layers
        || n != params.num_nodes()
        || cache.code_dim() != params.code_dim()
    {
        return Err(Error::Shape(
            "forward cache does not match model parameters".into(),
        ));
    }
    if upstream.at_aggregate.dim() != (n, params.code_dim()) {
        return Err(Error::Shape(format!(
            "aggregate gradient is {:?}, expected {:?}",
            upstream.at_aggregate.dim(),
            (n, params.code_dim())
        )));
    }
    if let Some(g) = &upstream.at_last_layer {
        if g.dim() != (n, params.embed_dim()) {
            return Err(Error::Shape(
                "last-layer gradient has the wrong shape".into(),
            ));
        }
    }

    let mut grads = Gradients::zeros_like(params);
    let shrink = if training {
        1.0 / (layers + 1) as f64
    } else {
        1.0
    };
    let per_layer = &upstream.at_aggregate * shrink;
    let transform_t = params.transform.t();

    let mut carried: Option<Array2<f64>> = None;
    for l in (0..=layers).rev() {
        let grad_pre = if flags.layer_is_quantized(l, layers) {
            if flags.rescaling == Rescaling::Learnable {
                let factors = grads
                    .layer_factors
                    .as_mut()
                    .ok_or_else(|| Error::Config("learnable rescaling without factors".into()))?;
                let dots = (&per_layer * &cache.codes[l].mapv(f64::from)).sum_axis(Axis(1));
                factors.column_mut(l).assign(&dots);
            }
            let scaled = match cache.layer_scale(flags, l) {
                None => per_layer.clone(),
                Some(scale) => &per_layer * &scale.insert_axis(Axis(1)),
            };
            ste_backward(scaled.view(), cache.preactivation[l].view())?
        } else {
            per_layer.clone()
        };
        grads.transform += &cache.continuous[l].t().dot(&grad_pre);
        let mut grad_v = grad_pre.dot(&transform_t);
        if l == layers {
            if let Some(g) = &upstream.at_last_layer {
                grad_v += g;
            }
        }
        if let Some(c) = carried.take() {
            grad_v += &c;
        }
        if l == 0 {
            grads.embeddings = grad_v;
        } else {
            carried = Some(graph.propagate(grad_v.view())?);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn ste_examples() {
        let out = ste_backward(array![[0.3, 0.7]].view(), array![[0.5, -1.5]].view()).unwrap();
        assert_eq!(out, array![[0.3, 0.0]]);
        let out = ste_backward(array![[0.2, -0.9]].view(), array![[1.0, -1.0]].view()).unwrap();
        assert_eq!(out, array![[0.2, -0.9]]);
        let out = ste_backward(array![[0.0, 0.0]].view(), array![[5.0, 0.1]].view()).unwrap();
        assert_eq!(out, array![[0.0, 0.0]]);
        assert!(ste_backward(array![[1.0]].view(), array![[1.0, 2.0]].view()).is_err());
    }

    proptest! {
        #[test]
        fn ste_is_exact_mask(
            pairs in proptest::collection::vec((-3.0f64..3.0, -5.0f64..5.0), 1..64)
        ) {
            let g = Array2::from_shape_vec((1, pairs.len()), pairs.iter().map(|p| p.1).collect()).unwrap();
            let phi = Array2::from_shape_vec((1, pairs.len()), pairs.iter().map(|p| p.0).collect()).unwrap();
            let out = ste_backward(g.view(), phi.view()).unwrap();
            for ((o, gv), pv) in out.iter().zip(g.iter()).zip(phi.iter()) {
                let expected = if pv.abs() <= 1.0 { *gv } else { 0.0 };
                prop_assert_eq!(o.to_bits(), expected.to_bits());
            }
        }
    }
}
