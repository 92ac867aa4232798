use ndarray::Array2;
use rand::Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};

/// Learnable state: layer-0 embeddings for every node, the shared
/// quantization transform, and optionally one free factor per node and layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `N x c`, users first.
    pub embeddings: Array2<f64>,
    /// `c x d`, shared by all layers and node types.
    pub transform: Array2<f64>,
    pub num_layers: usize,
    /// `N x (L+1)`.
    pub layer_factors: Option<Array2<f64>>,
}

pub const INIT_STD: f64 = 0.01;

impl ModelParams {
    pub fn new(
        embeddings: Array2<f64>,
        transform: Array2<f64>,
        num_layers: usize,
        layer_factors: Option<Array2<f64>>,
    ) -> Result<Self> {
        let params = Self {
            embeddings,
            transform,
            num_layers,
            layer_factors,
        };
        params.validate()?;
        Ok(params)
    }

    /// Normal(0, 0.01) embeddings and transform; layer factors start at 1.
    pub fn init(
        num_nodes: usize,
        embed_dim: usize,
        code_dim: usize,
        num_layers: usize,
        learnable_factors: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let embeddings =
            Array2::from_shape_simple_fn((num_nodes, embed_dim), || rng.sample(normal));
        let transform = Array2::from_shape_simple_fn((embed_dim, code_dim), || rng.sample(normal));
        let layer_factors =
            learnable_factors.then(|| Array2::from_elem((num_nodes, num_layers + 1), 1.0));
        Self::new(embeddings, transform, num_layers, layer_factors)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config(
                "at least one propagation layer is required".into(),
            ));
        }
        if self.embeddings.ncols() != self.transform.nrows() {
            return Err(Error::Shape(format!(
                "embedding width {} does not match transform rows {}",
                self.embeddings.ncols(),
                self.transform.nrows()
            )));
        }
        if self.code_dim() == 0 || self.embed_dim() == 0 {
            return Err(Error::Shape("dimensions must be positive".into()));
        }
        if let Some(f) = &self.layer_factors {
            if f.dim() != (self.num_nodes(), self.num_layers + 1) {
                return Err(Error::Shape(format!(
                    "layer factors are {:?}, expected {:?}",
                    f.dim(),
                    (self.num_nodes(), self.num_layers + 1)
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.nrows()
    }

    /// `c`
    pub fn embed_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    /// `d`
    pub fn code_dim(&self) -> usize {
        self.transform.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Sum of squares over every learnable tensor.
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Learnable tensors in a fixed order: embeddings, transform, factors.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embeddings, &self.transform];
        out.extend(self.layer_factors.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.embeddings, &mut self.transform];
        out.extend(self.layer_factors.as_mut());
        out
    }
}
