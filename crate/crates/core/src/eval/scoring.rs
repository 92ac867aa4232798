use ndarray::Array2;

use super::Score;
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::model::{forward, served_representation, Mode, ModelParams, VariantFlags};
use crate::store::QuantizedTable;

/// Anything that scores every item for a user.
pub trait Ranker: Sync {
    type Score: Score;

    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;

    /// Overwrites `out` with one score per item.
    fn score_into(&self, user: usize, out: &mut Vec<Self::Score>) -> Result<()>;
}

fn check_user(user: usize, num_users: usize) -> Result<()> {
    if user >= num_users {
        return Err(Error::OutOfRange {
            index: user,
            len: num_users,
        });
    }
    Ok(())
}

#[inline]
fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| i32::from(x) * i32::from(y))
        .sum()
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Float64 representations straight from a model forward.
#[derive(Debug, Clone)]
pub struct DenseScorer {
    num_users: usize,
    rows: Array2<f64>,
}

impl DenseScorer {
    /// Served representations (no training shrink) under `flags`.
    pub fn from_model(
        params: &ModelParams,
        graph: &InteractionGraph,
        flags: &VariantFlags,
    ) -> Result<Self> {
        let cache = forward(params, graph, flags)?;
        Ok(Self {
            num_users: graph.num_users(),
            rows: served_representation(&cache, flags),
        })
    }

    pub fn from_rows(rows: Array2<f64>, num_users: usize) -> Result<Self> {
        if num_users > rows.nrows() {
            return Err(Error::OutOfRange {
                index: num_users,
                len: rows.nrows(),
            });
        }
        Ok(Self { num_users, rows })
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }
}

impl Ranker for DenseScorer {
    type Score = f64;

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn num_items(&self) -> usize {
        self.rows.nrows() - self.num_users
    }

    fn score_into(&self, user: usize, out: &mut Vec<f64>) -> Result<()> {
        check_user(user, self.num_users)?;
        let fu = self.rows.row(user);
        out.clear();
        out.extend(
            self.rows
                .rows()
                .into_iter()
                .skip(self.num_users)
                .map(|fi| fu.dot(&fi)),
        );
        Ok(())
    }
}

/// Plain code sums held as `i8`, scored with `i32` accumulation.
#[derive(Debug, Clone)]
pub struct IntScorer {
    num_users: usize,
    num_items: usize,
    dim: usize,
    sums: Vec<i8>,
}

impl IntScorer {
    pub fn from_table(table: &QuantizedTable) -> Result<Self> {
        if table.mode() != Mode::End {
            return Err(Error::Config(
                "integer scoring needs a table without rescaling factors".into(),
            ));
        }
        let layers = table.num_code_layers();
        let d = table.dim();
        // Per-coordinate sums must fit i8 and full inner products i32.
        if layers > i8::MAX as usize
            || (layers * layers)
                .checked_mul(d)
                .is_none_or(|b| b > i32::MAX as usize)
        {
            return Err(Error::Config(format!(
                "L+1 = {layers}, d = {d} overflows the integer accumulators"
            )));
        }
        let mut sums = vec![0i8; table.num_nodes() * d];
        for (x, row) in sums.chunks_exact_mut(d).enumerate() {
            for l in 0..layers {
                for (s, q) in row.iter_mut().zip(table.code(x, l)?) {
                    *s += q;
                }
            }
        }
        Ok(Self {
            num_users: table.num_users(),
            num_items: table.num_items(),
            dim: d,
            sums,
        })
    }

    pub fn aggregate(&self, node: usize) -> &[i8] {
        &self.sums[node * self.dim..(node + 1) * self.dim]
    }
}

impl Ranker for IntScorer {
    type Score = i32;

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_into(&self, user: usize, out: &mut Vec<i32>) -> Result<()> {
        check_user(user, self.num_users)?;
        let fu = self.aggregate(user);
        let items = &self.sums[self.num_users * self.dim..];
        out.clear();
        out.extend(items.chunks_exact(self.dim).map(|fi| dot_i8(fu, fi)));
        Ok(())
    }
}

/// `f32` representations: rescaled code sums, or a full-precision baseline.
#[derive(Debug, Clone)]
pub struct FloatScorer {
    num_users: usize,
    num_items: usize,
    dim: usize,
    rows: Vec<f32>,
}

impl FloatScorer {
    /// `sum_l alpha_l q_l` (or `sum_l q_l` without factors) in `f32`.
    pub fn from_table(table: &QuantizedTable) -> Result<Self> {
        let d = table.dim();
        let mut rows = vec![0f32; table.num_nodes() * d];
        for (x, row) in rows.chunks_exact_mut(d).enumerate() {
            for l in 0..table.num_code_layers() {
                let a = table.alpha(x, l)?.unwrap_or(1.0);
                for (s, q) in row.iter_mut().zip(table.code(x, l)?) {
                    *s += a * f32::from(q);
                }
            }
        }
        Ok(Self {
            num_users: table.num_users(),
            num_items: table.num_items(),
            dim: d,
            rows,
        })
    }

    /// Rounds `rows` (users first) to `f32`.
    pub fn from_rows(rows: &Array2<f64>, num_users: usize) -> Result<Self> {
        if num_users > rows.nrows() {
            return Err(Error::OutOfRange {
                index: num_users,
                len: rows.nrows(),
            });
        }
        Ok(Self {
            num_users,
            num_items: rows.nrows() - num_users,
            dim: rows.ncols(),
            rows: rows.iter().map(|&x| x as f32).collect(),
        })
    }

    pub fn from_dense(dense: &DenseScorer) -> Self {
        Self::from_rows(dense.rows(), dense.num_users()).expect("dense scorer is consistent")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn aggregate(&self, node: usize) -> &[f32] {
        &self.rows[node * self.dim..(node + 1) * self.dim]
    }
}

impl Ranker for FloatScorer {
    type Score = f32;

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score_into(&self, user: usize, out: &mut Vec<f32>) -> Result<()> {
        check_user(user, self.num_users)?;
        let fu = self.aggregate(user);
        let items = &self.rows[self.num_users * self.dim..];
        out.clear();
        out.extend(items.chunks_exact(self.dim).map(|fi| dot_f32(fu, fi)));
        Ok(())
    }
}

/// Aggregated representation of one node read back from a table.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    /// Plain code sums, each in `[-(L+1), L+1]`.
    Int(Vec<i32>),
    /// Factor-weighted code sums.
    Float(Vec<f32>),
}

pub fn int_aggregate(table: &QuantizedTable, node: usize) -> Result<Aggregate> {
    let d = table.dim();
    let layers = table.num_code_layers();
    match table.mode() {
        Mode::End => {
            let mut out = vec![0i32; d];
            for l in 0..layers {
                for (o, q) in out.iter_mut().zip(table.code(node, l)?) {
                    *o += i32::from(q);
                }
            }
            Ok(Aggregate::Int(out))
        }
        Mode::Anl => {
            let mut out = vec![0f32; d];
            for l in 0..layers {
                let a = table.alpha(node, l)?.expect("anl tables store factors");
                for (o, q) in out.iter_mut().zip(table.code(node, l)?) {
                    *o += a * f32::from(q);
                }
            }
            Ok(Aggregate::Float(out))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scores {
    Int(Vec<i32>),
    Float(Vec<f32>),
}

/// Scores of `user` against every item, decoding the table node by node.
pub fn score_all_items(table: &QuantizedTable, user: usize) -> Result<Scores> {
    check_user(user, table.num_users())?;
    let u = int_aggregate(table, user)?;
    let items = table.num_users()..table.num_nodes();
    match u {
        Aggregate::Int(fu) => items
            .map(|i| match int_aggregate(table, i)? {
                Aggregate::Int(fi) => Ok(fu.iter().zip(&fi).map(|(a, b)| a * b).sum()),
                Aggregate::Float(_) => unreachable!("one mode per table"),
            })
            .collect::<Result<_>>()
            .map(Scores::Int),
        Aggregate::Float(fu) => items
            .map(|i| match int_aggregate(table, i)? {
                Aggregate::Float(fi) => Ok(dot_f32(&fu, &fi)),
                Aggregate::Int(_) => unreachable!("one mode per table"),
            })
            .collect::<Result<_>>()
            .map(Scores::Float),
    }
}
