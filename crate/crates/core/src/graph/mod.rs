//! Bipartite user-item interaction graph.
//!
//! Users and items share one node index space: users occupy `[0, num_users)`
//! and item `i` lives at node `num_users + i`. Every node-indexed matrix in the
//! crate uses this layout.

mod load;
mod split;
mod synthetic;

pub use load::{load_edges, parse_edges, write_id_map, LoadOptions, LoadedGraph};
pub use split::{split_train_test, SplitDataset};
pub use synthetic::{synthetic_graph, SyntheticSpec};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse rows over `u32` column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Csr {
    /// Builds rows from `(row, col)` pairs that are already sorted and unique.
    fn from_sorted_pairs(num_rows: usize, pairs: impl Iterator<Item = (u32, u32)>) -> Self {
        let mut offsets = vec![0usize; num_rows + 1];
        let mut indices = Vec::new();
        for (r, c) in pairs {
            offsets[r as usize + 1] += 1;
            indices.push(c);
        }
        for r in 0..num_rows {
            offsets[r + 1] += offsets[r];
        }
        Self { offsets, indices }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Immutable bipartite graph with adjacency in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    user_to_items: Csr,
    item_to_users: Csr,
    /// `1/sqrt(degree)` per node in the shared layout, 0 for isolated nodes.
    inv_sqrt_degree: Vec<f64>,
}

impl InteractionGraph {
    /// Builds a graph from `(user, item)` pairs. Duplicates are collapsed.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut pairs: Vec<(u32, u32)> = edges.into_iter().collect();
        for &(u, i) in &pairs {
            if u as usize >= num_users {
                return Err(Error::OutOfRange {
                    index: u as usize,
                    len: num_users,
                });
            }
            if i as usize >= num_items {
                return Err(Error::OutOfRange {
                    index: i as usize,
                    len: num_items,
                });
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let user_to_items = Csr::from_sorted_pairs(num_users, pairs.iter().copied());

        let mut transposed: Vec<(u32, u32)> = pairs.iter().map(|&(u, i)| (i, u)).collect();
        transposed.sort_unstable();
        let item_to_users = Csr::from_sorted_pairs(num_items, transposed.into_iter());

        let inv_sqrt_degree = (0..num_users)
            .map(|u| user_to_items.row_len(u))
            .chain((0..num_items).map(|i| item_to_users.row_len(i)))
            .map(|deg| {
                if deg == 0 {
                    0.0
                } else {
                    1.0 / (deg as f64).sqrt()
                }
            })
            .collect();

        Ok(Self {
            num_users,
            num_items,
            user_to_items,
            item_to_users,
            inv_sqrt_degree,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_to_items.nnz()
    }

    /// Sorted item indices adjacent to `user`.
    pub fn user_items(&self, user: usize) -> &[u32] {
        self.user_to_items.row(user)
    }

    /// Sorted user indices adjacent to `item`.
    pub fn item_users(&self, item: usize) -> &[u32] {
        self.item_to_users.row(item)
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_to_items.row_len(user)
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_to_users.row_len(item)
    }

    /// Node index of `item` in the shared layout.
    pub fn item_node(&self, item: usize) -> usize {
        self.num_users + item
    }

    pub fn has_edge(&self, user: usize, item: u32) -> bool {
        self.user_items(user).binary_search(&item).is_ok()
    }

    /// All edges in user-major order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_users)
            .flat_map(move |u| self.user_items(u).iter().map(move |&i| (u as u32, i)))
    }

    /// One layer of symmetric-normalized neighbour aggregation.
    ///
    /// Row `x` of the output is `sum_{y in N(x)} v_y / sqrt(|N(x)| |N(y)|)`.
    /// The operator is symmetric, so it is also its own adjoint.
    pub fn propagate(&self, embeddings: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = self.num_nodes();
        if embeddings.nrows() != n {
            return Err(Error::Shape(format!(
                "propagate expects {} rows, got {}",
                n,
                embeddings.nrows()
            )));
        }
        let dim = embeddings.ncols();
        let input = embeddings.as_standard_layout();
        let input = input.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((n, dim));
        if dim == 0 {
            return Ok(out);
        }
        let users = self.num_users;
        out.as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(x, row)| {
                let (neighbours, base) = if x < users {
                    (self.user_items(x), users)
                } else {
                    (self.item_users(x - users), 0)
                };
                let wx = self.inv_sqrt_degree[x];
                for &y in neighbours {
                    let y = y as usize + base;
                    let w = wx * self.inv_sqrt_degree[y];
                    let src = &input[y * dim..(y + 1) * dim];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            });
        Ok(out)
    }
}
