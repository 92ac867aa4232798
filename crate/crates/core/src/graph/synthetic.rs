use std::collections::HashSet;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InteractionGraph;
use crate::error::{Error, Result};

/// Parameters of the planted-community interaction generator.
///
/// Written as `<users>x<items>x<edges>:<seed>`, e.g. `600x900x24000:7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub edges: usize,
    pub seed: u64,
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "synthetic spec {s:?} is not <users>x<items>x<edges>:<seed>"
            ))
        };
        let (dims, seed) = s.split_once(':').ok_or_else(bad)?;
        let parts: Vec<usize> = dims
            .split('x')
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [users, items, edges] = parts[..] else {
            return Err(bad());
        };
        let seed = seed.parse().map_err(|_| bad())?;
        Ok(Self {
            users,
            items,
            edges,
            seed,
        })
    }
}

impl std::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}:{}",
            self.users, self.items, self.edges, self.seed
        )
    }
}

const COMMUNITY_SIZE: usize = 60;
const PRIMARY_SHARE: f64 = 0.65;
const SECONDARY_SHARE: f64 = 0.25;

/// Generates a bipartite graph with community structure and skewed
/// popularity.
///
/// Users and items belong to latent communities. Each user draws most of its
/// interactions from its primary community, some from a secondary one, and the
/// rest from the whole catalogue; items within a pool are chosen with Zipf-like
/// popularity and users have heavy-tailed activity.
pub fn synthetic_graph(spec: SyntheticSpec) -> Result<InteractionGraph> {
    let SyntheticSpec {
        users,
        items,
        edges,
        seed,
    } = spec;
    if users == 0 || items == 0 || edges == 0 {
        return Err(Error::EmptyGraph(" (synthetic spec has a zero dimension)"));
    }
    if edges > users * items / 2 {
        return Err(Error::Config(format!(
            "{edges} edges is more than half of the {users}x{items} grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let communities = (users.min(items) / COMMUNITY_SIZE).max(2);

    let item_community: Vec<usize> = (0..items)
        .map(|_| rng.random_range(0..communities))
        .collect();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); communities];
    for (i, &c) in item_community.iter().enumerate() {
        pools[c].push(i);
    }
    // Zipf-like popularity from a random permutation of ranks.
    let mut rank: Vec<usize> = (0..items).collect();
    for i in (1..items).rev() {
        let j = rng.random_range(0..=i);
        rank.swap(i, j);
    }
    let popularity: Vec<f64> = rank
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(0.6))
        .collect();
    let global = WeightedIndex::new(&popularity).expect("positive weights");
    let pool_samplers: Vec<Option<WeightedIndex<f64>>> = pools
        .iter()
        .map(|pool| WeightedIndex::new(pool.iter().map(|&i| popularity[i])).ok())
        .collect();

    let user_primary: Vec<usize> = (0..users)
        .map(|_| rng.random_range(0..communities))
        .collect();
    let user_secondary: Vec<usize> = (0..users)
        .map(|_| rng.random_range(0..communities))
        .collect();
    let activity: Vec<f64> = (0..users)
        .map(|_| 1.0 + (-rng.random::<f64>().max(1e-12).ln()) * 2.0)
        .collect();
    let user_sampler = WeightedIndex::new(&activity).expect("positive weights");

    let mut seen: HashSet<(u32, u32)> = HashSet::with_capacity(edges);
    let mut out = Vec::with_capacity(edges);
    let max_draws = edges.saturating_mul(200);
    let mut draws = 0usize;
    let mut push = |u: usize, i: usize, out: &mut Vec<(u32, u32)>| {
        if seen.insert((u as u32, i as u32)) {
            out.push((u as u32, i as u32));
        }
    };
    // Every user gets a couple of interactions so the split has material.
    for u in 0..users {
        for _ in 0..2 {
            if let Some(s) = &pool_samplers[user_primary[u]] {
                let i = pools[user_primary[u]][s.sample(&mut rng)];
                push(u, i, &mut out);
            }
        }
    }
    while out.len() < edges {
        draws += 1;
        if draws > max_draws {
            return Err(Error::Config(format!(
                "could not place {edges} distinct edges for spec {spec}"
            )));
        }
        let u = user_sampler.sample(&mut rng);
        let roll: f64 = rng.random();
        let community = if roll < PRIMARY_SHARE {
            Some(user_primary[u])
        } else if roll < PRIMARY_SHARE + SECONDARY_SHARE {
            Some(user_secondary[u])
        } else {
            None
        };
        let item = match community.and_then(|c| pool_samplers[c].as_ref().map(|s| (c, s))) {
            Some((c, s)) => pools[c][s.sample(&mut rng)],
            None => global.sample(&mut rng),
        };
        push(u, item, &mut out);
    }
    out.truncate(edges);
    InteractionGraph::from_edges(users, items, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_displays() {
        let spec: SyntheticSpec = "30x40x200:9".parse().unwrap();
        assert_eq!(
            spec,
            SyntheticSpec {
                users: 30,
                items: 40,
                edges: 200,
                seed: 9
            }
        );
        assert_eq!(spec.to_string(), "30x40x200:9");
        assert!("30x40:9".parse::<SyntheticSpec>().is_err());
        assert!("30x40x5".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn deterministic_with_requested_edge_count() {
        let spec: SyntheticSpec = "50x80x600:3".parse().unwrap();
        let a = synthetic_graph(spec).unwrap();
        let b = synthetic_graph(spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_edges(), 600);
        assert_eq!(a.num_users(), 50);
        assert!((0..50).all(|u| a.user_degree(u) >= 1));
    }

    #[test]
    fn rejects_overfull_grid() {
        assert!(synthetic_graph("4x4x10:0".parse().unwrap()).is_err());
    }
}
