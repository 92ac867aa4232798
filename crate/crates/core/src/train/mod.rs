//! Gradients, losses, negative sampling, Adam, and the training loop.

mod adam;
mod backward;
mod config;
mod loss;
mod objective;
mod sampling;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, ste_backward, Gradients, Upstream};
pub use config::{TrainConfig, Variant};
pub use loss::{bpr_loss, rec_loss, sigmoid, softplus, total_loss, LossSwitches};
pub(crate) use objective::{batch_nodes, batch_terms};
pub use objective::{LossParts, Objective, RegScope};
pub use sampling::{sample_batch, sample_negative, shuffled_edges, stream_rng, Batch};

use std::io::Write;

use crate::error::{Error, Result};
use crate::eval::{evaluate, DenseScorer};
use crate::graph::SplitDataset;
use crate::model::{ModelParams, Rescaling, VariantFlags};

/// Whether quantization is on during `epoch` (1-based).
pub fn annealing_schedule(epoch: usize, config: &TrainConfig) -> bool {
    if config.full_precision {
        return false;
    }
    epoch >= config.trigger_epoch()
}

/// Flags in effect during `epoch`.
pub fn epoch_flags(epoch: usize, config: &TrainConfig) -> VariantFlags {
    config
        .flags
        .with_quantization(annealing_schedule(epoch, config))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size weighted means over the epoch.
    pub total_loss: f64,
    pub bpr_loss: f64,
    pub rec_loss: f64,
    pub quant_enabled: bool,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Cutoff of the recorded metrics.
    pub eval_k: usize,
}

impl TrainHistory {
    /// `epoch,total_loss,bpr_loss,rec_loss,quant_enabled,recall@K,ndcg@K`;
    /// metric cells are empty for epochs that were not evaluated.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let k = self.eval_k;
        writeln!(
            out,
            "epoch,total_loss,bpr_loss,rec_loss,quant_enabled,recall@{k},ndcg@{k}"
        )?;
        let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{},{},{}",
                r.epoch,
                r.total_loss,
                r.bpr_loss,
                r.rec_loss,
                u8::from(r.quant_enabled),
                cell(r.recall),
                cell(r.ndcg)
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub fn train_loop(
    config: &TrainConfig,
    split: &SplitDataset,
) -> Result<(ModelParams, TrainHistory)> {
    train_loop_with(config, split, |_| {})
}

/// Trains from a fresh initialization, calling `on_epoch` after each epoch.
pub fn train_loop_with(
    config: &TrainConfig,
    split: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    let graph = &split.train;
    if graph.num_edges() == 0 {
        return Err(Error::EmptyGraph(" (no training edges)"));
    }
    let mut init_rng = stream_rng(config.seed, 0, u32::MAX as usize);
    let mut params = ModelParams::init(
        graph.num_nodes(),
        config.embed_dim,
        config.code_dim,
        config.num_layers,
        config.flags.rescaling == Rescaling::Learnable,
        &mut init_rng,
    )?;
    let mut adam = AdamState::new(&params);
    let mut history = TrainHistory {
        records: Vec::with_capacity(config.epochs),
        eval_k: config.eval_k,
    };
    let mut best: Option<(bool, f64, usize)> = None;

    for epoch in 1..=config.epochs {
        let flags = epoch_flags(epoch, config);
        let objective = Objective {
            graph,
            flags,
            l2_coeff: config.l2_coeff,
            switches: config.losses,
            reg_scope: config.reg_scope,
        };
        let order = shuffled_edges(graph, config.seed, epoch);
        let mut sums = LossParts::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |e: Error| Error::Divergence {
                epoch,
                batch: b,
                message: e.to_string(),
            };
            let mut rng = stream_rng(config.seed, epoch, b + 1);
            let batch = Batch::from_positives(
                graph,
                chunk.iter().copied(),
                config.neg_per_pos,
                config.rec_neg_per_pos,
                &mut rng,
            )?;
            let (parts, grads) =
                objective
                    .loss_and_gradients(&params, &batch)
                    .map_err(|e| match e {
                        Error::NonFinite(_) => diverged(e),
                        other => other,
                    })?;
            if !parts.total.is_finite() {
                return Err(diverged(Error::NonFinite("loss".into())));
            }
            adam_step(&mut params, &grads, &mut adam, config.learning_rate).map_err(diverged)?;
            let w = chunk.len() as f64;
            sums.total += w * parts.total;
            sums.bpr += w * parts.bpr;
            sums.rec += w * parts.rec;
        }
        let n = order.len() as f64;
        let mut record = EpochRecord {
            epoch,
            total_loss: sums.total / n,
            bpr_loss: sums.bpr / n,
            rec_loss: sums.rec / n,
            quant_enabled: flags.quantization_enabled,
            recall: None,
            ndcg: None,
        };
        let due =
            config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let mut stop = false;
        if due && split.evaluable_users().next().is_some() {
            let scorer = DenseScorer::from_model(&params, graph, &flags)?;
            let report = evaluate(&scorer, split, &[config.eval_k])?;
            let row = report.rows[0];
            record.recall = Some(row.recall);
            record.ndcg = Some(row.ndcg);
            if let Some(patience) = config.patience {
                let phase = flags.quantization_enabled;
                best = match best {
                    Some((p, score, _)) if p == phase && row.recall <= score => {
                        best.map(|(p, s, stale)| (p, s, stale + 1))
                    }
                    _ => Some((phase, row.recall, 0)),
                };
                // Early stopping never cuts the warm-up phase short.
                let warm_up = config.is_annealed() && epoch < config.trigger_epoch();
                stop = !warm_up && best.is_some_and(|(_, _, stale)| stale >= patience);
            }
        }
        on_epoch(&record);
        history.records.push(record);
        if stop {
            break;
        }
    }
    Ok((params, history))
}
