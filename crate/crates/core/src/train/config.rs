use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::LossSwitches;
use super::objective::RegScope;
use crate::error::{Error, Result};
use crate::model::{Mode, Rescaling, VariantFlags};

/// Named model variants, including the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Quantized from the first epoch, plain code sums.
    End,
    /// Rescaled codes with a full-precision warm-up phase.
    Anl,
    /// Quantization masked for the whole run.
    #[serde(rename = "full")]
    FullPrecision,
    /// `End`, quantizing only the last layer.
    WoTq,
    /// `End` without the BPR term.
    WoBpr,
    /// `End` without the reconstruction term.
    WoRec,
    /// `Anl` without rescaling factors.
    WoRaf,
    /// `Anl` with free per-node factors in place of the computed ones.
    InLf,
    /// `Anl` quantized from the first epoch.
    WoAt,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::End,
        Variant::Anl,
        Variant::FullPrecision,
        Variant::WoTq,
        Variant::WoBpr,
        Variant::WoRec,
        Variant::WoRaf,
        Variant::InLf,
        Variant::WoAt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::End => "end",
            Variant::Anl => "anl",
            Variant::FullPrecision => "full",
            Variant::WoTq => "wo-tq",
            Variant::WoBpr => "wo-bpr",
            Variant::WoRec => "wo-rec",
            Variant::WoRaf => "wo-raf",
            Variant::InLf => "in-lf",
            Variant::WoAt => "wo-at",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_coeff: f64,
    /// Parameters covered by the `l2_coeff` penalty.
    pub reg_scope: RegScope,
    pub num_layers: usize,
    /// Width `c` of the continuous embeddings.
    pub embed_dim: usize,
    /// Width `d` of the codes.
    pub code_dim: usize,
    pub epochs: usize,
    /// First epoch with quantization on. `None` picks `ceil(epochs / 2)`
    /// for annealed variants and 1 otherwise.
    pub anneal_trigger_epoch: Option<usize>,
    pub neg_per_pos: usize,
    pub rec_neg_per_pos: usize,
    pub seed: u64,
    pub flags: VariantFlags,
    pub losses: LossSwitches,
    /// Keep quantization masked for every epoch.
    pub full_precision: bool,
    /// Evaluate every this many epochs (0 disables); the last epoch is always
    /// evaluated when enabled.
    pub eval_every: usize,
    pub eval_k: usize,
    /// Stop after this many evaluations without a Recall improvement.
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Defaults: B = 2048, lr = 1e-3, l2 = 1e-4, L = 2, c = d = 128.
    pub fn for_variant(variant: Variant) -> Self {
        let mut cfg = Self {
            variant,
            batch_size: 2048,
            learning_rate: 1e-3,
            l2_coeff: 1e-4,
            reg_scope: RegScope::Batch,
            num_layers: 2,
            embed_dim: 128,
            code_dim: 128,
            epochs: 100,
            anneal_trigger_epoch: None,
            neg_per_pos: 1,
            rec_neg_per_pos: 1,
            seed: 0,
            flags: VariantFlags::end(),
            losses: LossSwitches::default(),
            full_precision: false,
            eval_every: 0,
            eval_k: 20,
            patience: None,
        };
        match variant {
            Variant::End => {}
            Variant::Anl => cfg.flags = VariantFlags::anl(),
            Variant::FullPrecision => cfg.full_precision = true,
            Variant::WoTq => cfg.flags.topology_aware = false,
            Variant::WoBpr => cfg.losses.use_bpr = false,
            Variant::WoRec => cfg.losses.use_rec = false,
            Variant::WoRaf => {
                cfg.flags = VariantFlags {
                    rescaling: Rescaling::None,
                    ..VariantFlags::anl()
                }
            }
            Variant::InLf => {
                cfg.flags = VariantFlags {
                    rescaling: Rescaling::Learnable,
                    ..VariantFlags::anl()
                }
            }
            Variant::WoAt => {
                cfg.flags = VariantFlags::anl();
                cfg.anneal_trigger_epoch = Some(1);
            }
        }
        cfg
    }

    /// Whether this configuration has a full-precision warm-up.
    pub fn is_annealed(&self) -> bool {
        self.flags.mode == Mode::Anl && !self.full_precision
    }

    pub fn trigger_epoch(&self) -> usize {
        match self.anneal_trigger_epoch {
            Some(t) => t,
            None if self.is_annealed() => self.epochs.div_ceil(2).max(1),
            None => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return fail(format!(
                "l2_coeff must be non-negative, got {}",
                self.l2_coeff
            ));
        }
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.embed_dim == 0 || self.code_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        let trigger = self.trigger_epoch();
        if trigger == 0 || trigger > self.epochs {
            return fail(format!(
                "anneal trigger {trigger} outside 1..={}",
                self.epochs
            ));
        }
        if self.flags.mode == Mode::End && trigger != 1 {
            return fail("end mode is quantized from the first epoch".into());
        }
        if self.flags.rescaling == Rescaling::Learnable && self.flags.mode != Mode::Anl {
            return fail("learnable factors require anl mode".into());
        }
        if self.eval_every > 0 && self.eval_k == 0 {
            return fail("eval_k must be at least 1".into());
        }
        self.flags.validate()?;
        self.losses.validate()
    }
}
