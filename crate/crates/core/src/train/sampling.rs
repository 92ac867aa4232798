use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

/// Rejection attempts before falling back to enumerating the complement.
const MAX_REJECTIONS: usize = 64;

/// Training triples. Negatives for triple `t` live at
/// `neg_items[t * neg_per_pos .. (t + 1) * neg_per_pos]`, and likewise for
/// `rec_neg_items`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<u32>,
    pub pos_items: Vec<u32>,
    pub neg_items: Vec<u32>,
    pub neg_per_pos: usize,
    pub rec_neg_items: Vec<u32>,
    pub rec_neg_per_pos: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Builds a batch from given positive edges, sampling negatives for each.
    pub fn from_positives(
        graph: &InteractionGraph,
        positives: impl IntoIterator<Item = (u32, u32)>,
        neg_per_pos: usize,
        rec_neg_per_pos: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut batch = Batch {
            users: Vec::new(),
            pos_items: Vec::new(),
            neg_items: Vec::new(),
            neg_per_pos,
            rec_neg_items: Vec::new(),
            rec_neg_per_pos,
        };
        for (u, i) in positives {
            batch.users.push(u);
            batch.pos_items.push(i);
            for _ in 0..neg_per_pos {
                batch
                    .neg_items
                    .push(sample_negative(graph, u as usize, rng)?);
            }
            for _ in 0..rec_neg_per_pos {
                batch
                    .rec_neg_items
                    .push(sample_negative(graph, u as usize, rng)?);
            }
        }
        Ok(batch)
    }
}

/// Uniform item not adjacent to `user` in `graph`.
pub fn sample_negative(graph: &InteractionGraph, user: usize, rng: &mut impl Rng) -> Result<u32> {
    let num_items = graph.num_items();
    let adjacent = graph.user_items(user);
    if adjacent.len() >= num_items {
        return Err(Error::Sampling(format!(
            "user {user} interacted with every item"
        )));
    }
    for _ in 0..MAX_REJECTIONS {
        let j = rng.random_range(0..num_items as u32);
        if adjacent.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
    // Conditional on reaching here, a uniform pick from the complement keeps
    // the overall distribution uniform.
    let free = num_items - adjacent.len();
    let mut k = rng.random_range(0..free);
    let mut prev = 0u32;
    for &a in adjacent.iter().chain(std::iter::once(&(num_items as u32))) {
        let gap = (a - prev) as usize;
        if k < gap {
            return Ok(prev + k as u32);
        }
        k -= gap;
        prev = a + 1;
    }
    unreachable!("complement index within range")
}

/// `batch_size` positives drawn uniformly with replacement from the train
/// edges, each with sampled negatives.
pub fn sample_batch(
    graph: &InteractionGraph,
    batch_size: usize,
    neg_per_pos: usize,
    rec_neg_per_pos: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let edges: Vec<(u32, u32)> = graph.edges().collect();
    if edges.is_empty() {
        return Err(Error::EmptyGraph(" (no training edges)"));
    }
    let picks: Vec<(u32, u32)> = (0..batch_size)
        .map(|_| edges[rng.random_range(0..edges.len())])
        .collect();
    Batch::from_positives(graph, picks, neg_per_pos, rec_neg_per_pos, rng)
}

/// Independent generator for `(epoch, batch)` derived from the run seed.
pub fn stream_rng(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | batch as u64);
    rng
}

/// Train edges in a seeded random order for one epoch.
pub fn shuffled_edges(graph: &InteractionGraph, seed: u64, epoch: usize) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = graph.edges().collect();
    let mut rng = stream_rng(seed, epoch, 0);
    edges.shuffle(&mut rng);
    edges
}
