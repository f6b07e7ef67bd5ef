//! Reverse accumulation through the unrolled integrator.

use rayon::prelude::*;

use super::loss::{sample_cotangent, sample_loss, LossKind};
use super::{ModelGrads, ModelPair};
use crate::datagen::SamplePair;
use crate::error::{check_dim, Error, Result};
use crate::integrators::{at_step, forest_ruth_coefficients, step_in_place, IntegrationPlan, StepScratch};
use crate::phase::PhaseState;

/// A forward rollout together with the field inputs needed to run it backwards.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub final_state: PhaseState,
    /// Input of every field evaluation, in evaluation order.
    trace: Vec<f64>,
    steps: usize,
    dt: f64,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Integrates the learned fields from `s0`, recording the inputs of every
/// substep. The forward numerics are those of [`crate::integrate`].
pub fn rollout(model: &ModelPair, s0: &PhaseState, plan: &IntegrationPlan) -> Result<Rollout> {
    plan.validate()?;
    check_dim(model.dim(), s0.dim())?;
    let n = plan.steps();
    let coeffs = forest_ruth_coefficients();
    let (mut q, mut p) = s0.clone().into_parts();
    let mut scratch = StepScratch::new(s0.dim());
    let mut trace = Vec::with_capacity(n * 7 * s0.dim());
    for i in 1..=n {
        step_in_place(&model.tp, &model.vq, &coeffs, &mut q, &mut p, plan.dt, &mut scratch, Some(&mut trace))
            .map_err(|e| at_step(e, i))?;
    }
    Ok(Rollout { final_state: PhaseState::from_parts(q, p), trace, steps: n, dt: plan.dt })
}

/// Pulls the cotangent `(gq, gp)` of the final state back through the
/// rollout, accumulating parameter gradients into `grads`.
pub(crate) fn backward(model: &ModelPair, ro: &Rollout, mut gq: Vec<f64>, mut gp: Vec<f64>, grads: &mut ModelGrads) {
    let n = model.dim();
    let coeffs = forest_ruth_coefficients();
    let mut tmp = vec![0.0; n];
    let mut end = ro.trace.len();
    for _ in 0..ro.steps {
        for j in (0..4).rev() {
            if coeffs.d[j] != 0.0 {
                // p_out = p − h V(q)
                let h = coeffs.d[j] * ro.dt;
                end -= n;
                let q = &ro.trace[end..end + n];
                model.vq.vjp(q, &gp, -h, &mut grads.vq, &mut tmp);
                for (a, b) in gq.iter_mut().zip(&tmp) {
                    *a -= h * b;
                }
            }
            // q_out = q + h T(p)
            let h = coeffs.c[j] * ro.dt;
            end -= n;
            let p = &ro.trace[end..end + n];
            model.tp.vjp(p, &gq, h, &mut grads.tp, &mut tmp);
            for (a, b) in gp.iter_mut().zip(&tmp) {
                *a += h * b;
            }
        }
    }
    debug_assert_eq!(end, 0);
}

/// Loss of the model over `batch` and its exact gradient with respect to
/// every parameter of both networks.
pub fn backprop_gradients(
    model: &ModelPair,
    batch: &[SamplePair],
    plan: &IntegrationPlan,
    kind: LossKind,
) -> Result<(f64, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<(f64, ModelGrads)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            check_dim(model.dim(), pair.final_state.dim()).map_err(|e| e.at_sample(i))?;
            let ro = rollout(model, &pair.initial, plan).map_err(|e| e.at_sample(i))?;
            let l = sample_loss(&ro.final_state, &pair.final_state, kind);
            let (gq, gp) = sample_cotangent(&ro.final_state, &pair.final_state, kind, scale);
            let mut g = ModelGrads::zeros(model);
            backward(model, &ro, gq, gp, &mut g);
            Ok((l, g))
        })
        .collect::<Result<_>>()?;
    Ok(reduce(model, per_sample, scale))
}

/// Sums per-sample results in sample order.
pub(crate) fn reduce(model: &ModelPair, parts: Vec<(f64, ModelGrads)>, scale: f64) -> (f64, ModelGrads) {
    let mut total = 0.0;
    let mut grads = ModelGrads::zeros(model);
    for (l, g) in parts {
        total += l;
        grads.add(&g);
    }
    (total * scale, grads)
}
