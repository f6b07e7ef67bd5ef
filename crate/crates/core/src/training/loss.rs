use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::phase::PhaseState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over samples of `‖q̂ − q‖₁ + ‖p̂ − p‖₁`.
    L1,
    /// Mean over samples of the summed squared residuals.
    Mse,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        }
    }

    #[inline]
    fn value(self, r: f64) -> f64 {
        match self {
            LossKind::L1 => r.abs(),
            LossKind::Mse => r * r,
        }
    }

    /// Derivative of the per-component loss; the L1 subgradient at 0 is 0.
    #[inline]
    fn derivative(self, r: f64) -> f64 {
        match self {
            LossKind::L1 => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Mse => 2.0 * r,
        }
    }
}

pub(crate) fn sample_loss(pred: &PhaseState, target: &PhaseState, kind: LossKind) -> f64 {
    let rq = pred.q().iter().zip(target.q()).map(|(a, b)| kind.value(a - b));
    let rp = pred.p().iter().zip(target.p()).map(|(a, b)| kind.value(a - b));
    rq.chain(rp).sum()
}

/// `scale · ∂(sample loss)/∂(q̂, p̂)`.
pub(crate) fn sample_cotangent(
    pred: &PhaseState,
    target: &PhaseState,
    kind: LossKind,
    scale: f64,
) -> (Vec<f64>, Vec<f64>) {
    let g = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| scale * kind.derivative(x - y)).collect()
    };
    (g(pred.q(), target.q()), g(pred.p(), target.p()))
}

/// Batch loss: mean over samples of the per-sample residual norm.
pub fn loss(pred: &[PhaseState], target: &[PhaseState], kind: LossKind) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dim(pred.len(), target.len())?;
    let mut total = 0.0;
    for (a, b) in pred.iter().zip(target) {
        check_dim(b.dim(), a.dim())?;
        total += sample_loss(a, b, kind);
    }
    Ok(total / pred.len() as f64)
}
