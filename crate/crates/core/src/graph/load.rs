use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::InteractionGraph;
use crate::error::{Error, Result};

/// Options for reading an interaction edge list.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Users and items with fewer interactions are dropped, iteratively, until
    /// every survivor meets the threshold. `0` and `1` disable filtering.
    pub min_degree: usize,
}

/// A graph together with the raw ids of its users and items.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: InteractionGraph,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

/// Reads a `user item [rating]` edge list from disk.
pub fn load_edges(path: impl AsRef<Path>, options: LoadOptions) -> Result<LoadedGraph> {
    let file = File::open(path)?;
    parse_edges(BufReader::new(file), options)
}

/// Parses an edge list. Fields are separated by whitespace or `::`; lines
/// starting with `#` are comments. A third column, when present, must be
/// numeric and any value counts as an observed interaction.
pub fn parse_edges(reader: impl BufRead, options: LoadOptions) -> Result<LoadedGraph> {
    let mut raw: Vec<(String, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains("::") {
            line.split("::").map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `user item [rating]`, got {line:?}"),
            });
        }
        if let Some(rating) = fields.get(2) {
            if rating.parse::<f64>().is_err() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("rating {rating:?} is not a number"),
                });
            }
        }
        raw.push((fields[0].to_string(), fields[1].to_string()));
    }

    let mut user_index = Interner::default();
    let mut item_index = Interner::default();
    let mut edges: Vec<(u32, u32)> = raw
        .iter()
        .map(|(u, i)| (user_index.intern(u), item_index.intern(i)))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    if options.min_degree > 1 {
        edges = core_filter(
            edges,
            user_index.len(),
            item_index.len(),
            options.min_degree,
        );
    }
    if edges.is_empty() {
        return Err(Error::EmptyGraph(" after filtering"));
    }

    // Reindex survivors contiguously, preserving first-appearance order.
    let mut user_keep = vec![u32::MAX; user_index.len()];
    let mut item_keep = vec![u32::MAX; item_index.len()];
    for &(u, i) in &edges {
        user_keep[u as usize] = 0;
        item_keep[i as usize] = 0;
    }
    let user_ids = compact(&mut user_keep, &user_index.names);
    let item_ids = compact(&mut item_keep, &item_index.names);
    let graph = InteractionGraph::from_edges(
        user_ids.len(),
        item_ids.len(),
        edges
            .iter()
            .map(|&(u, i)| (user_keep[u as usize], item_keep[i as usize])),
    )?;
    Ok(LoadedGraph {
        graph,
        user_ids,
        item_ids,
    })
}

/// Writes one raw id per line, in index order.
pub fn write_id_map(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for id in ids {
        writeln!(out, "{id}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Default)]
struct Interner {
    map: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.map.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.map.insert(name.to_string(), id);
        self.names.push(name.to_string());
        id
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// Assigns new contiguous ids to slots marked 0; returns the surviving names.
fn compact(keep: &mut [u32], names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (slot, name) in keep.iter_mut().zip(names) {
        if *slot == 0 {
            *slot = out.len() as u32;
            out.push(name.clone());
        }
    }
    out
}

/// Repeatedly removes edges touching a node of degree below `k`.
fn core_filter(
    mut edges: Vec<(u32, u32)>,
    num_users: usize,
    num_items: usize,
    k: usize,
) -> Vec<(u32, u32)> {
    loop {
        let mut user_deg = vec![0usize; num_users];
        let mut item_deg = vec![0usize; num_items];
        for &(u, i) in &edges {
            user_deg[u as usize] += 1;
            item_deg[i as usize] += 1;
        }
        let before = edges.len();
        edges.retain(|&(u, i)| user_deg[u as usize] >= k && item_deg[i as usize] >= k);
        if edges.len() == before {
            return edges;
        }
    }
}
