//! Fourth-order Forest–Ruth symplectic integration for separable systems,
//! generic over any pair of gradient providers, plus a classical RK4
//! stepper used as a non-symplectic baseline.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::phase::{GradientField, PhaseState};

/// Drift weights `c_j` and kick weights `d_j` of a four-stage splitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymplecticCoefficients {
    pub c: [f64; 4],
    pub d: [f64; 4],
}

pub fn forest_ruth_coefficients() -> SymplecticCoefficients {
    let s = 2f64.cbrt();
    let c1 = 1.0 / (2.0 * (2.0 - s));
    let c2 = (1.0 - s) / (2.0 * (2.0 - s));
    let d1 = 1.0 / (2.0 - s);
    let d2 = -s / (2.0 - s);
    SymplecticCoefficients { c: [c1, c2, c2, c1], d: [d1, d2, d1, 0.0] }
}

/// Time span and step of a fixed-step integration. The step count is
/// `floor((t_end − t0)/dt)`; any fractional remainder of the span is not
/// integrated, so `dt` should divide the span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationPlan {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl IntegrationPlan {
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        let plan = IntegrationPlan { t0, t_end, dt };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan covering `n` steps of `dt` from `t0`.
    pub fn with_steps(t0: f64, dt: f64, n: usize) -> Result<Self> {
        Self::new(t0, t0 + dt * n as f64, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t0.is_finite() && self.t_end.is_finite()) || self.t_end < self.t0 {
            return Err(Error::Config(format!("bad time span [{}, {}]", self.t0, self.t_end)));
        }
        Ok(())
    }

    /// Number of steps. A ratio within 1e-9 (relative) below an integer is
    /// counted as that integer so that e.g. a span of 0.3 at dt 0.1 gives 3.
    pub fn steps(&self) -> usize {
        let ratio = (self.t_end - self.t0) / self.dt;
        let up = ratio.ceil();
        if up - ratio <= 1e-9 * up.max(1.0) {
            up as usize
        } else {
            ratio.floor() as usize
        }
    }
}

fn ensure_finite(v: &[f64], substep: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure { step: 0, substep })
    }
}

/// Scratch buffer for [`step_in_place`].
pub(crate) struct StepScratch(Vec<f64>);

impl StepScratch {
    pub(crate) fn new(dim: usize) -> Self {
        StepScratch(vec![0.0; dim])
    }
}

/// One Forest–Ruth step on `(q, p)` in place. For each stage `j` the drift
/// `q += c_j dt T_p(p)` runs before the kick `p −= d_j dt V_q(q)`. Kicks
/// with `d_j = 0` are skipped. When `trace` is given, the input of every
/// field evaluation is appended to it in evaluation order.
pub(crate) fn step_in_place<T, V>(
    grad_t: &T,
    grad_v: &V,
    coeffs: &SymplecticCoefficients,
    q: &mut [f64],
    p: &mut [f64],
    dt: f64,
    scratch: &mut StepScratch,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<()>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    let buf = &mut scratch.0;
    for j in 0..4 {
        if let Some(t) = trace.as_deref_mut() {
            t.extend_from_slice(p);
        }
        grad_t.eval_into(p, buf).map_err(|e| tag_substep(e, j + 1))?;
        ensure_finite(buf, j + 1)?;
        let h = coeffs.c[j] * dt;
        for (qi, g) in q.iter_mut().zip(buf.iter()) {
            *qi += h * g;
        }

        if coeffs.d[j] == 0.0 {
            continue;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.extend_from_slice(q);
        }
        grad_v.eval_into(q, buf).map_err(|e| tag_substep(e, j + 1))?;
        ensure_finite(buf, j + 1)?;
        let h = coeffs.d[j] * dt;
        for (pi, g) in p.iter_mut().zip(buf.iter()) {
            *pi -= h * g;
        }
    }
    Ok(())
}

fn tag_substep(e: Error, substep: usize) -> Error {
    match e {
        Error::NumericFailure { step, .. } => Error::NumericFailure { step, substep },
        other => other,
    }
}

fn check_fields<T, V>(grad_t: &T, grad_v: &V, s: &PhaseState) -> Result<()>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    check_dim(s.dim(), grad_t.dim())?;
    check_dim(s.dim(), grad_v.dim())
}

/// One Forest–Ruth step of size `dt`.
pub fn symplectic_step<T, V>(grad_t: &T, grad_v: &V, s: &PhaseState, dt: f64) -> Result<PhaseState>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    check_fields(grad_t, grad_v, s)?;
    let (mut q, mut p) = s.clone().into_parts();
    let mut scratch = StepScratch::new(s.dim());
    step_in_place(grad_t, grad_v, &forest_ruth_coefficients(), &mut q, &mut p, dt, &mut scratch, None)?;
    Ok(PhaseState::from_parts(q, p))
}

/// Result of [`integrate`].
#[derive(Debug, Clone)]
pub struct Integration {
    pub final_state: PhaseState,
    /// All `n + 1` states including the initial one, when recording.
    pub trajectory: Option<Vec<PhaseState>>,
}

/// Applies [`symplectic_step`] exactly `plan.steps()` times.
pub fn integrate<T, V>(
    grad_t: &T,
    grad_v: &V,
    s0: &PhaseState,
    plan: &IntegrationPlan,
    record: bool,
) -> Result<Integration>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    plan.validate()?;
    check_fields(grad_t, grad_v, s0)?;
    let n = plan.steps();
    let coeffs = forest_ruth_coefficients();
    let (mut q, mut p) = s0.clone().into_parts();
    let mut scratch = StepScratch::new(s0.dim());
    let mut trajectory = record.then(|| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(s0.clone());
        v
    });
    for i in 1..=n {
        step_in_place(grad_t, grad_v, &coeffs, &mut q, &mut p, plan.dt, &mut scratch, None)
            .map_err(|e| at_step(e, i))?;
        if let Some(t) = trajectory.as_mut() {
            t.push(PhaseState::from_parts(q.clone(), p.clone()));
        }
    }
    Ok(Integration { final_state: PhaseState::from_parts(q, p), trajectory })
}

pub(crate) fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NumericFailure { substep, .. } => Error::NumericFailure { step, substep },
        other => other,
    }
}

/// A joint phase-space vector field `(q, p) ↦ (dq/dt, dp/dt)`.
pub trait PhaseField: Sync {
    fn dim(&self) -> usize;
    fn eval_into(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()>;
}

/// Hamilton's equations for a separable system: `dq = T_p(p)`, `dp = −V_q(q)`.
pub struct Separable<T, V> {
    pub grad_t: T,
    pub grad_v: V,
}

impl<T: GradientField, V: GradientField> PhaseField for Separable<T, V> {
    fn dim(&self) -> usize {
        self.grad_t.dim()
    }

    fn eval_into(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        self.grad_t.eval_into(p, dq)?;
        self.grad_v.eval_into(q, dp)?;
        dp.iter_mut().for_each(|x| *x = -*x);
        Ok(())
    }
}

/// Closure adapter for [`PhaseField`].
pub struct FnPhaseField<F> {
    dim: usize,
    f: F,
}

impl<F> FnPhaseField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnPhaseField { dim, f }
    }
}

impl<F> PhaseField for FnPhaseField<F>
where
    F: Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) -> Result<()> {
        (self.f)(q, p, dq, dp);
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta step on the joint field.
pub fn rk4_step<F: PhaseField + ?Sized>(field: &F, s: &PhaseState, dt: f64) -> Result<PhaseState> {
    check_dim(field.dim(), s.dim())?;
    let n = s.dim();
    let (q0, p0) = (s.q(), s.p());
    let mut kq = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut kp = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut qs = q0.to_vec();
    let mut ps = p0.to_vec();
    let weights = [0.0, 0.5, 0.5, 1.0];
    for stage in 0..4 {
        if stage > 0 {
            let h = weights[stage] * dt;
            for i in 0..n {
                qs[i] = q0[i] + h * kq[stage - 1][i];
                ps[i] = p0[i] + h * kp[stage - 1][i];
            }
        }
        let (dq, dp) = (&mut kq[stage], &mut kp[stage]);
        field.eval_into(&qs, &ps, dq, dp)?;
        ensure_finite(dq, stage + 1)?;
        ensure_finite(dp, stage + 1)?;
    }
    let q = (0..n)
        .map(|i| q0[i] + dt / 6.0 * (kq[0][i] + 2.0 * kq[1][i] + 2.0 * kq[2][i] + kq[3][i]))
        .collect();
    let p = (0..n)
        .map(|i| p0[i] + dt / 6.0 * (kp[0][i] + 2.0 * kp[1][i] + 2.0 * kp[2][i] + kp[3][i]))
        .collect();
    Ok(PhaseState::from_parts(q, p))
}

/// `plan.steps()` RK4 steps.
pub fn rk4_integrate<F: PhaseField + ?Sized>(
    field: &F,
    s0: &PhaseState,
    plan: &IntegrationPlan,
) -> Result<PhaseState> {
    plan.validate()?;
    let mut s = s0.clone();
    for i in 1..=plan.steps() {
        s = rk4_step(field, &s, plan.dt).map_err(|e| at_step(e, i))?;
    }
    Ok(s)
}
