//! Per-sample losses on linear models: logistic and its truncated variant.
//!
//! Both are functions of the signed margin `m = label * <x, a>`, so each
//! evaluator returns the value and `dl/dm`; the model gradient is
//! `dl/dm * label * a`, supported on the sample's feature indices.

use crate::error::{Error, Result};
use crate::sparse::SparseVec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Logistic,
    /// `alpha * ln(1 + l / alpha)` applied to the logistic loss `l`.
    TruncatedLogistic {
        alpha: f64,
    },
}

impl LossKind {
    /// Value and derivative with respect to the signed margin.
    #[inline]
    pub fn eval_margin(self, margin: f64) -> (f64, f64) {
        let (l, dl) = logistic_margin(margin);
        match self {
            LossKind::Logistic => (l, dl),
            LossKind::TruncatedLogistic { alpha } => {
                let (phi, dphi) = truncate(l, alpha);
                (phi, dphi * dl)
            }
        }
    }

    /// Upper bound on `|dl/dm|` over all margins.
    pub fn slope_bound(self) -> f64 {
        1.0
    }

    /// Upper bound on `|d²l/dm²|` over all margins.
    pub fn curvature_bound(self) -> f64 {
        match self {
            LossKind::Logistic => 0.25,
            LossKind::TruncatedLogistic { alpha } => 0.25 + 1.0 / alpha,
        }
    }
}

/// `ln(1 + exp(-m))` and its derivative, split at `m = 0` so neither branch
/// exponentiates a positive argument.
#[inline]
pub fn logistic_margin(m: f64) -> (f64, f64) {
    if m >= 0.0 {
        let e = (-m).exp();
        (e.ln_1p(), -e / (1.0 + e))
    } else {
        let e = m.exp();
        (-m + e.ln_1p(), -1.0 / (1.0 + e))
    }
}

/// `phi(l) = alpha * ln(1 + l / alpha)` and `phi'(l) = 1 / (1 + l / alpha)`.
#[inline]
pub fn truncate(l: f64, alpha: f64) -> (f64, f64) {
    (alpha * (l / alpha).ln_1p(), 1.0 / (1.0 + l / alpha))
}

fn check_dims(x: &[f64], features: &SparseVec) -> Result<()> {
    let end = features.support_end();
    if end > x.len() {
        return Err(Error::DimensionMismatch {
            index: end - 1,
            dim: x.len(),
        });
    }
    Ok(())
}

fn loss_and_grad(
    kind: LossKind,
    x: &[f64],
    features: &SparseVec,
    label: f64,
) -> Result<(f64, SparseVec)> {
    check_dims(x, features)?;
    let (value, dm) = kind.eval_margin(label * features.dot(x));
    let grad = features.scaled(dm * label).with_dim(x.len())?;
    Ok((value, grad))
}

/// Logistic loss `ln(1 + exp(-label * <x, features>))` and its gradient in `x`.
pub fn logistic_loss(x: &[f64], features: &SparseVec, label: f64) -> Result<(f64, SparseVec)> {
    loss_and_grad(LossKind::Logistic, x, features, label)
}

/// Truncated logistic loss and its gradient (chain rule through `phi`).
pub fn truncated_loss(
    x: &[f64],
    features: &SparseVec,
    label: f64,
    alpha: f64,
) -> Result<(f64, SparseVec)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "truncation scale {alpha} must be positive"
        )));
    }
    loss_and_grad(LossKind::TruncatedLogistic { alpha }, x, features, label)
}
