use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use l2q_core::eval::DEFAULT_KS;
use l2q_core::graph::{
    load_edges, split_train_test, synthetic_graph, LoadOptions, SplitDataset, SyntheticSpec,
};
use l2q_core::TrainConfig;

const SYNTHETIC_PREFIX: &str = "synthetic:";

/// Where the interactions come from and how they are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Edge-list path, or `synthetic:<users>x<items>x<edges>:<seed>`.
    pub source: String,
    pub min_degree: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
}

/// Raw user and item ids of a file-backed dataset, in index order.
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl DataConfig {
    pub fn load(&self) -> Result<(SplitDataset, Option<IdMaps>)> {
        let (graph, ids) = match self.source.strip_prefix(SYNTHETIC_PREFIX) {
            Some(spec) => {
                let spec: SyntheticSpec = spec.parse()?;
                (synthetic_graph(spec)?, None)
            }
            None => {
                let loaded = load_edges(
                    &self.source,
                    LoadOptions {
                        min_degree: self.min_degree,
                    },
                )
                .with_context(|| format!("reading {}", self.source))?;
                let ids = IdMaps {
                    users: loaded.user_ids,
                    items: loaded.item_ids,
                };
                (loaded.graph, Some(ids))
            }
        };
        let split = split_train_test(&graph, self.test_fraction, self.split_seed)?;
        Ok((split, ids))
    }
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
}

impl RunConfig {
    pub fn new(data: DataConfig, train: TrainConfig) -> Self {
        Self {
            data,
            train,
            ks: DEFAULT_KS.to_vec(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing the run config")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
