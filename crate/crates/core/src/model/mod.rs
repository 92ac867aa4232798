//! Forward computation: propagation, per-layer 1-bit quantization through a
//! shared transform, rescaling factors, aggregation and scoring.

mod checkpoint;
mod params;

pub use params::ModelParams;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

/// How quantized layers are combined into the final representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain sum of codes.
    End,
    /// Codes weighted by per-node, per-layer factors.
    Anl,
}

/// Which per-layer factor multiplies a quantized code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rescaling {
    None,
    /// `||v||_1 / d`, recomputed every forward.
    Deterministic,
    /// One free parameter per node and layer.
    Learnable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    /// When false the aggregation uses the pre-activations instead of codes.
    pub quantization_enabled: bool,
    /// When false only the last layer is quantized.
    pub topology_aware: bool,
    pub rescaling: Rescaling,
    pub mode: Mode,
}

impl VariantFlags {
    pub fn end() -> Self {
        Self {
            quantization_enabled: true,
            topology_aware: true,
            rescaling: Rescaling::None,
            mode: Mode::End,
        }
    }

    pub fn anl() -> Self {
        Self {
            quantization_enabled: true,
            topology_aware: true,
            rescaling: Rescaling::Deterministic,
            mode: Mode::Anl,
        }
    }

    pub fn with_quantization(self, enabled: bool) -> Self {
        Self {
            quantization_enabled: enabled,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::End && self.rescaling != Rescaling::None {
            return Err(Error::Config(
                "end mode does not use rescaling factors".into(),
            ));
        }
        Ok(())
    }

    /// Whether layer `layer` of a `num_layers`-deep model contributes codes.
    pub fn layer_is_quantized(&self, layer: usize, num_layers: usize) -> bool {
        self.quantization_enabled && (self.topology_aware || layer == num_layers)
    }
}

/// Everything the forward pass produces, kept for the backward pass and
/// for export.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `v^(0) .. v^(L)`, each `N x c`.
    pub continuous: Vec<Array2<f64>>,
    /// `v^(l) W`, each `N x d`.
    pub preactivation: Vec<Array2<f64>>,
    /// `sign(preactivation)`, each `N x d`.
    pub codes: Vec<Array2<i8>>,
    /// `||v^(l)_x||_1 / d`, each of length `N`.
    pub alphas: Vec<Array1<f64>>,
    /// Copy of the learnable factors (`N x (L+1)`) used by this forward.
    pub learned_factors: Option<Array2<f64>>,
}

impl ForwardCache {
    pub fn num_layers(&self) -> usize {
        self.continuous.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.continuous[0].nrows()
    }

    pub fn code_dim(&self) -> usize {
        self.preactivation[0].ncols()
    }

    /// Per-node factor applied to layer `layer`'s codes, `None` meaning 1.
    pub fn layer_scale(&self, flags: &VariantFlags, layer: usize) -> Option<ArrayView1<'_, f64>> {
        match flags.rescaling {
            Rescaling::None => None,
            Rescaling::Deterministic => Some(self.alphas[layer].view()),
            Rescaling::Learnable => self.learned_factors.as_ref().map(|f| f.column(layer)),
        }
    }
}

#[inline]
pub fn sign_value(x: f64) -> i8 {
    if x < 0.0 {
        -1
    } else {
        1
    }
}

/// Elementwise sign with `sign(0) = +1`.
pub fn sign(x: &[f64]) -> Result<Vec<i8>> {
    x.iter()
        .map(|&v| {
            if v.is_finite() {
                Ok(sign_value(v))
            } else {
                Err(Error::NonFinite("sign input".into()))
            }
        })
        .collect()
}

/// Computes `v W` and its sign codes.
pub fn quantize_layer(
    v: ArrayView2<'_, f64>,
    transform: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<i8>)> {
    if v.ncols() != transform.nrows() {
        return Err(Error::Shape(format!(
            "embeddings have {} columns but transform has {} rows",
            v.ncols(),
            transform.nrows()
        )));
    }
    let pre = v.dot(&transform);
    let codes = pre.mapv(sign_value);
    Ok((pre, codes))
}

/// `||v||_1 / d`.
pub fn rescale_factor(v: &[f64], code_dim: usize) -> f64 {
    v.iter().map(|x| x.abs()).sum::<f64>() / code_dim as f64
}

/// Runs propagation and quantization for every layer `0..=L`.
pub fn forward(
    params: &ModelParams,
    graph: &InteractionGraph,
    flags: &VariantFlags,
) -> Result<ForwardCache> {
    flags.validate()?;
    if params.num_nodes() != graph.num_nodes() {
        return Err(Error::Shape(format!(
            "model has {} nodes, graph has {}",
            params.num_nodes(),
            graph.num_nodes()
        )));
    }
    if flags.rescaling == Rescaling::Learnable && params.layer_factors.is_none() {
        return Err(Error::Config(
            "learnable rescaling needs layer factors in the model".into(),
        ));
    }
    let layers = params.num_layers;
    let d = params.code_dim();
    let mut continuous = Vec::with_capacity(layers + 1);
    continuous.push(params.embeddings.clone());
    for l in 1..=layers {
        let next = graph.propagate(continuous[l - 1].view())?;
        continuous.push(next);
    }
    let mut preactivation = Vec::with_capacity(layers + 1);
    let mut codes = Vec::with_capacity(layers + 1);
    let mut alphas = Vec::with_capacity(layers + 1);
    for (l, v) in continuous.iter().enumerate() {
        let (pre, code) = quantize_layer(v.view(), params.transform.view())?;
        if pre.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("layer {l} pre-activation")));
        }
        let alpha: Array1<f64> = v
            .axis_iter(Axis(0))
            .map(|row| rescale_factor(row.as_slice().expect("standard layout"), d))
            .collect();
        preactivation.push(pre);
        codes.push(code);
        alphas.push(alpha);
    }
    Ok(ForwardCache {
        continuous,
        preactivation,
        codes,
        alphas,
        learned_factors: params.layer_factors.clone(),
    })
}

/// Sums the per-layer contributions into one `N x d` representation.
///
/// Quantized layers contribute `scale * code`; masked layers contribute
/// their pre-activation. With `training` the sum is divided by `L + 1`.
pub fn aggregate(cache: &ForwardCache, flags: &VariantFlags, training: bool) -> Array2<f64> {
    let layers = cache.num_layers();
    let mut out = sum_layers(cache, flags, true);
    if training {
        out /= (layers + 1) as f64;
    }
    out
}

/// The representation a quantized model serves: the sum of its scaled codes
/// only. Without topology-aware quantization that is the last layer alone,
/// since the continuous layers have no binary form. With quantization masked
/// this is the plain inference aggregate.
pub fn served_representation(cache: &ForwardCache, flags: &VariantFlags) -> Array2<f64> {
    sum_layers(cache, flags, !flags.quantization_enabled)
}

fn sum_layers(cache: &ForwardCache, flags: &VariantFlags, include_masked: bool) -> Array2<f64> {
    let layers = cache.num_layers();
    let mut out = Array2::<f64>::zeros((cache.num_nodes(), cache.code_dim()));
    for l in 0..=layers {
        if flags.layer_is_quantized(l, layers) {
            match cache.layer_scale(flags, l) {
                None => Zip::from(&mut out)
                    .and(&cache.codes[l])
                    .for_each(|o, &q| *o += f64::from(q)),
                Some(scale) => Zip::from(out.rows_mut())
                    .and(cache.codes[l].rows())
                    .and(&scale)
                    .for_each(|mut o, q, &s| {
                        o.zip_mut_with(&q, |o, &q| *o += s * f64::from(q));
                    }),
            }
        } else if include_masked {
            out += &cache.preactivation[l];
        }
    }
    out
}

/// Inner-product scores of one user against candidate items.
pub fn predict_scores(
    f_users: ArrayView2<'_, f64>,
    f_items: ArrayView2<'_, f64>,
    user: usize,
    candidate_items: &[usize],
) -> Result<Vec<f64>> {
    if user >= f_users.nrows() {
        return Err(Error::OutOfRange {
            index: user,
            len: f_users.nrows(),
        });
    }
    if f_users.ncols() != f_items.ncols() {
        return Err(Error::Shape(
            "user and item representations differ in width".into(),
        ));
    }
    let fu = f_users.row(user);
    candidate_items
        .iter()
        .map(|&i| {
            if i >= f_items.nrows() {
                Err(Error::OutOfRange {
                    index: i,
                    len: f_items.nrows(),
                })
            } else {
                Ok(fu.dot(&f_items.row(i)))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
