//! Continuous adjoint gradients.
//!
//! With `q̇ = T_p(p)` and `ṗ = −V_q(q)`, the adjoint `a_p` of `q` and `a_q`
//! of `p` run backwards from `a_p(t1) = ∂L/∂q(t1)`, `a_q(t1) = ∂L/∂p(t1)`:
//!
//! ```text
//! da_p/dt =  J_V(q) a_q        ∂L/∂θ_p =  ∫ a_p · ∂T_p/∂θ_p dt
//! da_q/dt = −J_T(p) a_p        ∂L/∂θ_q = −∫ a_q · ∂V_q/∂θ_q dt
//! ```
//!
//! The adjoint system is stepped with Heun's method on the forward time
//! grid and the parameter integrals use the trapezoid rule, so results
//! agree with reverse accumulation up to `O(dt²)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backprop::reduce;
use super::loss::{sample_cotangent, sample_loss, LossKind};
use super::{ModelGrads, ModelPair};
use crate::datagen::SamplePair;
use crate::error::{check_dim, Error, Result};
use crate::integrators::{integrate, IntegrationPlan};
use crate::phase::PhaseState;

/// Adjoint state `(a_p, a_q)`: cotangents of `q` and `p` respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub a_p: Vec<f64>,
    pub a_q: Vec<f64>,
}

/// Which adjoint right-hand side to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjointCoupling {
    /// `da_p/dt = J_V a_q`, `da_q/dt = −J_T a_p`.
    #[default]
    Coupled,
    /// `da_p/dt = −J_T a_p`, `da_q/dt = J_V a_q`. Each adjoint only sees its
    /// own field, which drops the cross terms; kept for comparison.
    Uncoupled,
}

impl AdjointCoupling {
    /// Time derivative of the adjoint given `jt = J_T a_p` and `jv = J_V a_q`.
    fn rhs(self, jt: &[f64], jv: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            AdjointCoupling::Coupled => (jv.to_vec(), jt.iter().map(|v| -v).collect()),
            AdjointCoupling::Uncoupled => (jt.iter().map(|v| -v).collect(), jv.to_vec()),
        }
    }
}

/// Runs the adjoint backwards over a recorded trajectory and returns the
/// adjoint at the initial time. Parameter gradients go into `grads`.
fn solve_backward(
    model: &ModelPair,
    traj: &[PhaseState],
    dt: f64,
    end: AdjointState,
    coupling: AdjointCoupling,
    grads: &mut ModelGrads,
) -> AdjointState {
    let n = model.dim();
    let steps = traj.len() - 1;
    let mut a = end;
    let mut jt = vec![0.0; n];
    let mut jv = vec![0.0; n];
    for k in (0..=steps).rev() {
        let s = &traj[k];
        let w = if steps == 0 {
            0.0
        } else if k == 0 || k == steps {
            0.5 * dt
        } else {
            dt
        };
        model.tp.vjp(s.p(), &a.a_p, w, &mut grads.tp, &mut jt);
        model.vq.vjp(s.q(), &a.a_q, -w, &mut grads.vq, &mut jv);
        if k == 0 {
            break;
        }
        let (k1p, k1q) = coupling.rhs(&jt, &jv);
        let pred = AdjointState {
            a_p: a.a_p.iter().zip(&k1p).map(|(x, d)| x - dt * d).collect(),
            a_q: a.a_q.iter().zip(&k1q).map(|(x, d)| x - dt * d).collect(),
        };
        let prev = &traj[k - 1];
        model.tp.jacobian_vec(prev.p(), &pred.a_p, &mut jt);
        model.vq.jacobian_vec(prev.q(), &pred.a_q, &mut jv);
        let (k2p, k2q) = coupling.rhs(&jt, &jv);
        for i in 0..n {
            a.a_p[i] -= 0.5 * dt * (k1p[i] + k2p[i]);
            a.a_q[i] -= 0.5 * dt * (k1q[i] + k2q[i]);
        }
    }
    a
}

/// Loss and gradients via the coupled adjoint equations.
pub fn adjoint_gradients(
    model: &ModelPair,
    batch: &[SamplePair],
    plan: &IntegrationPlan,
    kind: LossKind,
) -> Result<(f64, ModelGrads)> {
    adjoint_gradients_with(model, batch, plan, kind, AdjointCoupling::Coupled)
}

pub fn adjoint_gradients_with(
    model: &ModelPair,
    batch: &[SamplePair],
    plan: &IntegrationPlan,
    kind: LossKind,
    coupling: AdjointCoupling,
) -> Result<(f64, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    plan.validate()?;
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, ModelGrads)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            check_dim(model.dim(), pair.initial.dim()).map_err(|e| e.at_sample(i))?;
            check_dim(model.dim(), pair.final_state.dim()).map_err(|e| e.at_sample(i))?;
            let fwd = integrate(&model.tp, &model.vq, &pair.initial, plan, true).map_err(|e| e.at_sample(i))?;
            let traj = fwd.trajectory.expect("recorded trajectory");
            let l = sample_loss(&fwd.final_state, &pair.final_state, kind);
            let (gq, gp) = sample_cotangent(&fwd.final_state, &pair.final_state, kind, scale);
            let mut g = ModelGrads::zeros(model);
            let start = solve_backward(model, &traj, plan.dt, AdjointState { a_p: gq, a_q: gp }, coupling, &mut g);
            if start.a_p.iter().chain(&start.a_q).any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure { step: 0, substep: 0 }.at_sample(i));
            }
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    Ok(reduce(model, parts, scale))
}
