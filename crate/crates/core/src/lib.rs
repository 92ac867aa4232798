//! 1-bit layer-wise quantized graph convolution for Top-K recommendation.
//!
//! [`graph`] builds the bipartite interaction graph, [`model`] runs the
//! quantized forward pass, [`train`] fits it with hand-written gradients,
//! [`store`] bit-packs the codes and [`eval`] scores, ranks and benchmarks.

pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod store;
pub mod train;

pub use error::{Error, Result};
pub use eval::{evaluate, evaluate_table, MetricsReport};
pub use graph::{InteractionGraph, SplitDataset};
pub use model::{ForwardCache, Mode, ModelParams, Rescaling, VariantFlags};
pub use store::{compression_report, CompressionReport, QuantizedTable};
pub use train::{train_loop, TrainConfig, TrainHistory, Variant};
