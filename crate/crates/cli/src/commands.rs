use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use l2q_core::eval::{
    bench_inference, evaluate, evaluate_table, landscape_batch, perturb_landscape, signed_grid,
    DenseScorer, FloatScorer,
};
use l2q_core::graph::{write_id_map, SplitDataset};
use l2q_core::model::forward;
use l2q_core::train::{epoch_flags, train_loop_with, Objective};
use l2q_core::{
    compression_report, CompressionReport, MetricsReport, ModelParams, QuantizedTable, TrainConfig,
    Variant, VariantFlags,
};

use crate::config::{DataConfig, RunConfig};
use crate::{
    BenchArgs, Cli, Command, DataArgs, EvalArgs, ExportArgs, LandscapeArgs, ModeArg, ModelArgs,
    TrainArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Export(a) => export(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Landscape(a) => landscape(&ctx, a),
    }
}

/// Global options shared by every command.
struct Globals {
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Globals {
    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }
}

fn base_config(args: &DataArgs) -> Result<Option<RunConfig>> {
    args.config.as_deref().map(RunConfig::read).transpose()
}

fn resolve_data(
    args: &DataArgs,
    seed: Option<u64>,
    base: Option<&RunConfig>,
) -> Result<DataConfig> {
    let source = match (&args.data, base) {
        (Some(s), _) => s.clone(),
        (None, Some(b)) => b.data.source.clone(),
        (None, None) => bail!("--data (or --config) is required"),
    };
    Ok(DataConfig {
        source,
        min_degree: args
            .min_degree
            .or(base.map(|b| b.data.min_degree))
            .unwrap_or(0),
        test_fraction: args
            .test_fraction
            .or(base.map(|b| b.data.test_fraction))
            .unwrap_or(0.2),
        split_seed: seed.or(base.map(|b| b.data.split_seed)).unwrap_or(0),
    })
}

fn requested_variant(model: &ModelArgs) -> Option<Variant> {
    match (model.variant, model.mode) {
        (Some(v), _) => Some(v),
        (None, Some(ModeArg::End)) => Some(Variant::End),
        (None, Some(ModeArg::Anl)) => Some(Variant::Anl),
        (None, None) => None,
    }
}

/// The variant's defaults with the shared hyperparameters of `base`.
fn with_variant(base: &TrainConfig, variant: Variant) -> TrainConfig {
    TrainConfig {
        batch_size: base.batch_size,
        learning_rate: base.learning_rate,
        l2_coeff: base.l2_coeff,
        reg_scope: base.reg_scope,
        num_layers: base.num_layers,
        embed_dim: base.embed_dim,
        code_dim: base.code_dim,
        epochs: base.epochs,
        neg_per_pos: base.neg_per_pos,
        rec_neg_per_pos: base.rec_neg_per_pos,
        seed: base.seed,
        eval_every: base.eval_every,
        eval_k: base.eval_k,
        patience: base.patience,
        ..TrainConfig::for_variant(variant)
    }
}

fn resolve_train(base: Option<&RunConfig>, model: &ModelArgs) -> TrainConfig {
    let variant = requested_variant(model);
    match (base, variant) {
        (Some(b), Some(v)) if v != b.train.variant => with_variant(&b.train, v),
        (Some(b), _) => b.train.clone(),
        (None, v) => TrainConfig::for_variant(v.unwrap_or(Variant::End)),
    }
}

fn resolve_run(ctx: &Globals, a: &TrainArgs) -> Result<RunConfig> {
    let base = base_config(&a.data)?;
    let data = resolve_data(&a.data, ctx.seed, base.as_ref())?;
    let mut t = resolve_train(base.as_ref(), &a.model);
    if let Some(s) = ctx.seed {
        t.seed = s;
    }
    if let Some(l) = a.layers {
        t.num_layers = l;
    }
    if let Some(d) = a.dim {
        t.code_dim = d;
        t.embed_dim = d;
    }
    if let Some(c) = a.embed_dim {
        t.embed_dim = c;
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.learning_rate = lr;
    }
    if let Some(l2) = a.l2 {
        t.l2_coeff = l2;
    }
    if let Some(r) = a.reg_scope {
        t.reg_scope = r.into();
    }
    if a.trigger_epoch.is_some() {
        t.anneal_trigger_epoch = a.trigger_epoch;
    }
    if let Some(e) = a.eval_every {
        t.eval_every = e;
    }
    if a.patience.is_some() {
        t.patience = a.patience;
    }
    let mut run = RunConfig::new(data, t);
    if let Some(b) = &base {
        run.ks = b.ks.clone();
    }
    if let Some(ks) = &a.ks {
        run.ks = ks.clone();
    }
    run.train.validate()?;
    Ok(run)
}

fn write_csv(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> l2q_core::Result<()>,
) -> Result<()> {
    let mut out =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

fn print_metrics(report: &MetricsReport) {
    println!("{:>5}  {:>8}  {:>8}  users", "K", "recall", "ndcg");
    for r in &report.rows {
        println!(
            "{:>5}  {:>8.4}  {:>8.4}  {}",
            r.k, r.recall, r.ndcg, r.users
        );
    }
}

fn print_compression(c: &CompressionReport) {
    println!(
        "table: {} payload bytes, {} file bytes; {:.3}x payload / {:.3}x file vs fp32 (theory {:.3}x)",
        c.packed_bytes, c.file_bytes, c.measured_ratio, c.file_ratio, c.theory_ratio
    );
}

fn load_checkpoint(path: &Path, split: &SplitDataset) -> Result<ModelParams> {
    let params = ModelParams::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    if params.num_nodes() != split.train.num_nodes() {
        bail!(
            "checkpoint has {} nodes but the data has {}",
            params.num_nodes(),
            split.train.num_nodes()
        );
    }
    Ok(params)
}

fn load_table(path: &Path) -> Result<QuantizedTable> {
    QuantizedTable::import(path).with_context(|| format!("loading table {}", path.display()))
}

/// Flags of the final training phase; quantization is on unless the run
/// is full precision throughout.
fn final_flags(config: &TrainConfig) -> VariantFlags {
    epoch_flags(config.epochs.max(config.trigger_epoch()), config)
}

fn train(ctx: &Globals, a: TrainArgs) -> Result<()> {
    let run = resolve_run(ctx, &a)?;
    let (split, ids) = run.data.load()?;
    eprintln!(
        "data: {} users, {} items, {} train / {} test interactions",
        split.train.num_users(),
        split.train.num_items(),
        split.train.num_edges(),
        split.num_test_edges()
    );
    let config = &run.train;
    run.write(&ctx.out("config.toml")?)?;
    let (params, history) = train_loop_with(config, &split, |r| {
        if let (Some(recall), Some(ndcg)) = (r.recall, r.ndcg) {
            eprintln!(
                "epoch {:>4}  loss {:.5}  quant {}  recall@{k} {recall:.4}  ndcg@{k} {ndcg:.4}",
                r.epoch,
                r.total_loss,
                u8::from(r.quant_enabled),
                k = config.eval_k
            );
        }
    })?;
    params.save(ctx.out("model.ckpt")?)?;
    write_csv(&ctx.out("history.csv")?, |w| history.write_csv(w))?;
    if let Some(ids) = ids {
        write_id_map(ctx.out("users.txt")?, &ids.users)?;
        write_id_map(ctx.out("items.txt")?, &ids.items)?;
    }

    let flags = final_flags(config);
    let report = if flags.quantization_enabled {
        let cache = forward(&params, &split.train, &flags)?;
        let table = QuantizedTable::from_cache(&cache, &flags, split.train.num_users())?;
        table.export(ctx.out("table.l2qb")?)?;
        print_compression(&compression_report(&table));
        evaluate_table(&table, &split, &run.ks)?
    } else {
        evaluate(
            &DenseScorer::from_model(&params, &split.train, &flags)?,
            &split,
            &run.ks,
        )?
    };
    write_csv(&ctx.out("metrics.csv")?, |w| report.write_csv(w))?;
    println!("{} after {} epochs:", config.variant, history.records.len());
    print_metrics(&report);
    Ok(())
}

fn eval(ctx: &Globals, a: EvalArgs) -> Result<()> {
    let base = base_config(&a.data)?;
    let data = resolve_data(&a.data, ctx.seed, base.as_ref())?;
    let ks = a
        .ks
        .or_else(|| base.map(|b| b.ks))
        .unwrap_or_else(|| RunConfig::new(data.clone(), TrainConfig::for_variant(Variant::End)).ks);
    let table = load_table(&a.table)?;
    let (split, _) = data.load()?;
    let report = evaluate_table(&table, &split, &ks).context("table and data do not match")?;
    write_csv(&ctx.out("metrics.csv")?, |w| report.write_csv(w))?;
    print_metrics(&report);
    Ok(())
}

fn export(ctx: &Globals, a: ExportArgs) -> Result<()> {
    let base = base_config(&a.data)?;
    let data = resolve_data(&a.data, ctx.seed, base.as_ref())?;
    let config = resolve_train(base.as_ref(), &a.model);
    let flags = final_flags(&config);
    if !flags.quantization_enabled {
        bail!(
            "variant {} is never quantized; nothing to export",
            config.variant
        );
    }
    let (split, _) = data.load()?;
    let params = load_checkpoint(&a.checkpoint, &split)?;
    let cache = forward(&params, &split.train, &flags)?;
    let table = QuantizedTable::from_cache(&cache, &flags, split.train.num_users())?;
    let path = ctx.out("table.l2qb")?;
    table.export(&path)?;
    println!("wrote {}", path.display());
    print_compression(&compression_report(&table));
    Ok(())
}

fn bench(ctx: &Globals, a: BenchArgs) -> Result<()> {
    let base = base_config(&a.data)?;
    let data = resolve_data(&a.data, ctx.seed, base.as_ref())?;
    let table = load_table(&a.table)?;
    let (split, _) = data.load()?;
    let params = load_checkpoint(&a.checkpoint, &split)?;
    let masked = VariantFlags::end().with_quantization(false);
    let float = FloatScorer::from_dense(&DenseScorer::from_model(&params, &split.train, &masked)?);
    let users = table.num_users();
    if users == 0 {
        bail!("table has no users");
    }
    let workload: Vec<usize> = (0..a.users).map(|i| i % users).collect();
    let report = bench_inference(&table, &float, &workload, a.k, a.repetitions)?;
    write_csv(&ctx.out("bench.csv")?, |w| report.write_csv(w))?;
    println!(
        "table path {:.4}s, fp32 path {:.4}s (median of {}): speedup {:.3}x ({:+.1}%), identical rankings: {}",
        report.int_path_seconds,
        report.float_path_seconds,
        report.repetitions,
        report.speedup,
        (report.speedup - 1.0) * 100.0,
        report.identical_rankings
    );
    Ok(())
}

fn landscape(ctx: &Globals, a: LandscapeArgs) -> Result<()> {
    let base = base_config(&a.data)?;
    let data = resolve_data(&a.data, ctx.seed, base.as_ref())?;
    let config = resolve_train(base.as_ref(), &a.model);
    let (split, _) = data.load()?;
    let params = load_checkpoint(&a.checkpoint, &split)?;
    let quantized = !a.masked && !config.full_precision;
    let objective = Objective {
        graph: &split.train,
        flags: config.flags.with_quantization(quantized),
        l2_coeff: config.l2_coeff,
        switches: config.losses,
        reg_scope: config.reg_scope,
    };
    let batch = landscape_batch(
        &split.train,
        a.probe_size.unwrap_or(config.batch_size),
        config.neg_per_pos,
        config.rec_neg_per_pos,
        ctx.seed.unwrap_or(config.seed),
    )?;
    let grid = signed_grid(a.max, a.step)?;
    let surface = perturb_landscape(&objective, &params, &batch, &grid)?;
    let name = if quantized {
        "landscape.csv"
    } else {
        "landscape_masked.csv"
    };
    let path = ctx.out(name)?;
    write_csv(&path, |w| surface.write_csv(w))?;
    println!(
        "wrote {} ({n}x{n} grid); loss at origin {:.6}, max second difference {:.6}",
        path.display(),
        surface.at(0.0, 0.0).unwrap_or(f64::NAN),
        surface.max_second_difference(),
        n = grid.len()
    );
    Ok(())
}
