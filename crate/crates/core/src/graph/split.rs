use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionGraph;
use crate::error::Result;

/// Train graph plus held-out positives per user.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: InteractionGraph,
    /// Sorted held-out items for each user. Empty for users without test edges.
    pub test_positives: Vec<Vec<u32>>,
}

impl SplitDataset {
    pub fn num_test_edges(&self) -> usize {
        self.test_positives.iter().map(Vec::len).sum()
    }

    /// Users with at least one held-out positive.
    pub fn evaluable_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.test_positives
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(u, _)| u)
    }
}

/// Holds out `ceil(test_fraction * degree)` positives per user, keeping at
/// least one training edge per user. A held-out edge whose item would
/// otherwise have no training edge is returned to the training side.
pub fn split_train_test(
    graph: &InteractionGraph,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(crate::Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_users = graph.num_users();
    let mut train_items: Vec<Vec<u32>> = Vec::with_capacity(num_users);
    let mut test_items: Vec<Vec<u32>> = Vec::with_capacity(num_users);
    for u in 0..num_users {
        let mut items = graph.user_items(u).to_vec();
        let degree = items.len();
        let held_out = if degree < 2 {
            0
        } else {
            // The small offset keeps products like 0.1 * 30 from rounding up.
            let want = (test_fraction * degree as f64 - 1e-9).ceil() as usize;
            want.clamp(1, degree - 1)
        };
        let (chosen, _) = items.partial_shuffle(&mut rng, held_out);
        let mut test: Vec<u32> = chosen.to_vec();
        test.sort_unstable();
        items.retain(|i| test.binary_search(i).is_err());
        train_items.push(items);
        test_items.push(test);
    }

    let mut item_train_degree = vec![0usize; graph.num_items()];
    for items in &train_items {
        for &i in items {
            item_train_degree[i as usize] += 1;
        }
    }
    for u in 0..num_users {
        let mut keep = Vec::with_capacity(test_items[u].len());
        for &i in &test_items[u] {
            if item_train_degree[i as usize] == 0 {
                item_train_degree[i as usize] = 1;
                train_items[u].push(i);
            } else {
                keep.push(i);
            }
        }
        test_items[u] = keep;
    }

    let train = InteractionGraph::from_edges(
        num_users,
        graph.num_items(),
        train_items
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i))),
    )?;
    Ok(SplitDataset {
        train,
        test_positives: test_items,
    })
}
