use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use super::scoring::{FloatScorer, IntScorer, Ranker};
use super::topk;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::store::QuantizedTable;

/// Wall time of the quantized and the `f32` path on one workload.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mode: Mode,
    pub users: usize,
    pub k: usize,
    pub repetitions: usize,
    /// Median seconds for the table path (integer arithmetic for plain codes).
    pub int_path_seconds: f64,
    pub float_path_seconds: f64,
    /// `float / int`
    pub speedup: f64,
    /// Whether both paths returned the same Top-K lists.
    pub identical_rankings: bool,
}

impl BenchReport {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "mode,users,k,repetitions,int_path_seconds,float_path_seconds,speedup,identical_rankings"
        )?;
        let mode = match self.mode {
            Mode::End => "end",
            Mode::Anl => "anl",
        };
        writeln!(
            out,
            "{mode},{},{},{},{:.6},{:.6},{:.4},{}",
            self.users,
            self.k,
            self.repetitions,
            self.int_path_seconds,
            self.float_path_seconds,
            self.speedup,
            self.identical_rankings
        )?;
        Ok(())
    }
}

fn rank_all<R: Ranker>(ranker: &R, workload: &[usize], k: usize) -> Result<Vec<Vec<u32>>> {
    let mut buf = Vec::with_capacity(ranker.num_items());
    workload
        .iter()
        .map(|&u| {
            ranker.score_into(u, &mut buf)?;
            Ok(topk(&buf, k, &[]))
        })
        .collect()
}

fn time_pass<R: Ranker>(
    ranker: &R,
    workload: &[usize],
    k: usize,
    buf: &mut Vec<R::Score>,
) -> Result<f64> {
    let start = Instant::now();
    for &u in workload {
        ranker.score_into(u, buf)?;
        black_box(topk(black_box(&buf[..]), k, &[]));
    }
    Ok(start.elapsed().as_secs_f64())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times scoring plus Top-K for every user in `workload` on the table path
/// and on `float_table`, after one warm-up pass each. Runs on the calling
/// thread; passes alternate between the two paths.
pub fn bench_inference(
    table: &QuantizedTable,
    float_table: &FloatScorer,
    workload: &[usize],
    k: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    if workload.is_empty() {
        return Err(Error::Config("benchmark workload is empty".into()));
    }
    if repetitions < 3 {
        return Err(Error::Config(
            "at least 3 repetitions are needed for a median".into(),
        ));
    }
    if float_table.num_users() != table.num_users()
        || float_table.num_items() != table.num_items()
        || float_table.dim() != table.dim()
    {
        return Err(Error::Shape(
            "float table does not match the quantized table".into(),
        ));
    }
    match table.mode() {
        Mode::End => run(
            &IntScorer::from_table(table)?,
            float_table,
            Mode::End,
            workload,
            k,
            repetitions,
        ),
        Mode::Anl => run(
            &FloatScorer::from_table(table)?,
            float_table,
            Mode::Anl,
            workload,
            k,
            repetitions,
        ),
    }
}

fn run<R: Ranker>(
    quantized: &R,
    float_table: &FloatScorer,
    mode: Mode,
    workload: &[usize],
    k: usize,
    repetitions: usize,
) -> Result<BenchReport> {
    // The warm-up pass doubles as the ranking comparison.
    let identical_rankings =
        rank_all(quantized, workload, k)? == rank_all(float_table, workload, k)?;
    let mut qbuf = Vec::with_capacity(quantized.num_items());
    let mut fbuf = Vec::with_capacity(float_table.num_items());
    let mut q_times = Vec::with_capacity(repetitions);
    let mut f_times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        q_times.push(time_pass(quantized, workload, k, &mut qbuf)?);
        f_times.push(time_pass(float_table, workload, k, &mut fbuf)?);
    }
    let int_path_seconds = median(q_times).max(f64::MIN_POSITIVE);
    let float_path_seconds = median(f_times).max(f64::MIN_POSITIVE);
    Ok(BenchReport {
        mode,
        users: workload.len(),
        k,
        repetitions,
        int_path_seconds,
        float_path_seconds,
        speedup: float_path_seconds / int_path_seconds,
        identical_rankings,
    })
}
