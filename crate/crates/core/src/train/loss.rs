use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Which objective terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub use_bpr: bool,
    pub use_rec: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            use_bpr: true,
            use_rec: true,
        }
    }
}

impl LossSwitches {
    pub fn validate(&self) -> Result<()> {
        if !self.use_bpr && !self.use_rec {
            return Err(Error::Config(
                "at least one of the BPR and reconstruction losses must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln sigmoid(pos - neg)` over aligned pairs.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.len() != neg_scores.len() {
        return Err(Error::Shape(format!(
            "{} positive scores vs {} negative scores",
            pos_scores.len(),
            neg_scores.len()
        )));
    }
    if pos_scores.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, n)| softplus(n - p))
        .sum();
    Ok(sum / pos_scores.len() as f64)
}

/// Binary cross-entropy on inner products of full-precision last-layer
/// embeddings: label 1 for `(users[b], pos_items[b])`, label 0 for
/// `(users[b], neg_items[b * k + j])` where `k = neg_items.len() / users.len()`.
/// Averaged over all labelled pairs.
pub fn rec_loss(
    users: ArrayView2<'_, f64>,
    pos_items: ArrayView2<'_, f64>,
    neg_items: ArrayView2<'_, f64>,
) -> Result<f64> {
    let b = users.nrows();
    if pos_items.nrows() != b || (b > 0 && !neg_items.nrows().is_multiple_of(b)) {
        return Err(Error::Shape(
            "reconstruction batch rows do not line up".into(),
        ));
    }
    if users.ncols() != pos_items.ncols() || users.ncols() != neg_items.ncols() {
        return Err(Error::Shape(
            "reconstruction embeddings differ in width".into(),
        ));
    }
    if b == 0 {
        return Ok(0.0);
    }
    let k = neg_items.nrows() / b;
    let mut sum = 0.0;
    for t in 0..b {
        let u = users.row(t);
        sum += softplus(-u.dot(&pos_items.row(t)));
        for j in 0..k {
            sum += softplus(u.dot(&neg_items.row(t * k + j)));
        }
    }
    Ok(sum / (b * (k + 1)) as f64)
}

/// Enabled loss terms plus `l2_coeff * ||params||^2`.
pub fn total_loss(
    bpr: f64,
    rec: f64,
    params: &ModelParams,
    l2_coeff: f64,
    switches: LossSwitches,
) -> Result<f64> {
    switches.validate()?;
    if !bpr.is_finite() || !rec.is_finite() {
        return Err(Error::NonFinite("loss terms".into()));
    }
    let mut total = 0.0;
    if switches.use_rec {
        total += rec;
    }
    if switches.use_bpr {
        total += bpr;
    }
    Ok(total + l2_coeff * params.squared_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn bpr_examples() {
        assert_relative_eq!(bpr_loss(&[1.5], &[1.5]).unwrap(), LN_2, epsilon = 1e-15);
        let big = bpr_loss(&[50.0], &[0.0]).unwrap();
        assert!((0.0..1e-20).contains(&big));
        assert_relative_eq!(bpr_loss(&[0.0], &[50.0]).unwrap(), 50.0, epsilon = 1e-12);
        assert!(bpr_loss(&[1e4], &[-1e4]).unwrap().is_finite());
        assert!(bpr_loss(&[0.0], &[]).is_err());
    }

    /// `ln(1 + e^x)` from the series `ln(1+y) = 2 atanh(y / (2 + y))`,
    /// summed with Kahan compensation. Positive arguments use
    /// `ln(1 + e^x) = x + ln(1 + e^-x)` so the series ratio stays below 1/3.
    fn softplus_extended(x: f64) -> f64 {
        if x > 0.0 {
            return x + softplus_extended(-x);
        }
        let y = x.exp();
        let z = y / (2.0 + y);
        let z2 = z * z;
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        let mut term = z;
        for k in 0..400 {
            let add = term / (2 * k + 1) as f64 - comp;
            let t = sum + add;
            comp = (t - sum) - add;
            sum = t;
            term *= z2;
            if term.abs() < 1e-40 {
                break;
            }
        }
        2.0 * sum
    }

    #[test]
    fn bpr_matches_extended_precision_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pos: Vec<f64> = (0..200).map(|_| rng.random_range(-20.0..20.0)).collect();
        let neg: Vec<f64> = (0..200).map(|_| rng.random_range(-20.0..20.0)).collect();
        let oracle: f64 = pos
            .iter()
            .zip(&neg)
            .map(|(p, n)| softplus_extended(n - p))
            .sum::<f64>()
            / 200.0;
        let got = bpr_loss(&pos, &neg).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn rec_examples() {
        let zero = Array2::zeros((1, 2));
        let no_negatives = Array2::zeros((0, 2));
        assert_relative_eq!(
            rec_loss(zero.view(), zero.view(), no_negatives.view()).unwrap(),
            LN_2,
            epsilon = 1e-15
        );
        // Score 0 with label 1, via orthogonal vectors; score 0 with label 0.
        let u = array![[1.0, 0.0]];
        let i = array![[0.0, 1.0]];
        assert_relative_eq!(
            rec_loss(u.view(), i.view(), i.view()).unwrap(),
            LN_2,
            epsilon = 1e-15
        );

        let u = array![[5.0, 5.0]];
        let i = array![[5.0, 5.0]];
        let neg = array![[-5.0, -5.0]];
        // +50 with label 1 and -50 with label 0: both near zero.
        assert!(rec_loss(u.view(), i.view(), neg.view()).unwrap() < 1e-20);
        // +50 with label 0 costs about 50, averaged with a near-zero term.
        assert_relative_eq!(
            rec_loss(u.view(), i.view(), i.view()).unwrap(),
            25.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rec_shape_errors() {
        let a = Array2::zeros((2, 3));
        let b = Array2::zeros((3, 3));
        assert!(rec_loss(a.view(), b.view(), a.view()).is_err());
        assert!(rec_loss(a.view(), a.view(), b.view()).is_err());
    }

    #[test]
    fn total_loss_switches() {
        let params =
            ModelParams::new(Array2::zeros((2, 2)), Array2::zeros((2, 2)), 1, None).unwrap();
        let both = LossSwitches::default();
        assert_eq!(total_loss(0.5, 0.25, &params, 0.1, both).unwrap(), 0.75);
        let p2 = ModelParams::new(array![[1.0, 2.0], [0.0, 0.0]], Array2::eye(2), 1, None).unwrap();
        assert_relative_eq!(total_loss(0.5, 0.25, &p2, 0.0, both).unwrap(), 0.75);
        let no_bpr = LossSwitches {
            use_bpr: false,
            use_rec: true,
        };
        assert_relative_eq!(
            total_loss(0.5, 0.25, &p2, 0.1, no_bpr).unwrap(),
            0.25 + 0.1 * 7.0,
            epsilon = 1e-15
        );
        let none = LossSwitches {
            use_bpr: false,
            use_rec: false,
        };
        assert!(total_loss(0.5, 0.25, &p2, 0.1, none).is_err());
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_relative_eq!(softplus(0.0), LN_2);
        assert_relative_eq!(softplus(-800.0), 0.0);
        assert_relative_eq!(softplus(800.0), 800.0);
    }
}
