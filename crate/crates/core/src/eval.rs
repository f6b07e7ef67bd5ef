//! Long-horizon prediction error, energy behaviour and structure defects.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrators::{
    at_step, forest_ruth_coefficients, integrate, rk4_step, step_in_place, IntegrationPlan, PhaseField,
    StepScratch,
};
use crate::phase::{GradientField, PhaseState};
use crate::systems::HamiltonianSystem;
use crate::taylor::TaylorGradNet;

/// Per-step prediction errors of a learned model against the analytic flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub dt: f64,
    pub t_predict: f64,
    /// Mean L1 state error over the test set after step `n`, for `n = 1..`.
    pub errors: Vec<f64>,
    /// Mean analytic energy of the predicted states after step `n`.
    pub energy: Vec<f64>,
    pub epsilon_mean: f64,
    /// Largest `|H(ŝ_n) − H(s_0)|` over all samples and steps.
    pub max_energy_dev: f64,
    /// False when the model rollout failed; the series then stop at the
    /// last step every sample reached.
    pub complete: bool,
    pub failure: Option<String>,
}

impl PredictionReport {
    pub fn steps(&self) -> usize {
        self.errors.len()
    }
}

struct SampleTrace {
    errors: Vec<f64>,
    energy: Vec<f64>,
    max_dev: f64,
    failure: Option<Error>,
}

fn predict_one<T, V>(
    grad_t: &T,
    grad_v: &V,
    system: &HamiltonianSystem,
    s0: &PhaseState,
    steps: usize,
    dt: f64,
) -> Result<SampleTrace>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    let coeffs = forest_ruth_coefficients();
    let (truth_t, truth_v) = (system.kinetic_field(), system.potential_field());
    let (mut q, mut p) = s0.clone().into_parts();
    let (mut tq, mut tp) = s0.clone().into_parts();
    let mut scratch = StepScratch::new(s0.dim());
    let h0 = system.energy(s0)?;
    let mut out = SampleTrace {
        errors: Vec::with_capacity(steps),
        energy: Vec::with_capacity(steps),
        max_dev: 0.0,
        failure: None,
    };
    for i in 1..=steps {
        step_in_place(&truth_t, &truth_v, &coeffs, &mut tq, &mut tp, dt, &mut scratch, None)
            .map_err(|e| at_step(e, i))?;
        if let Err(e) = step_in_place(grad_t, grad_v, &coeffs, &mut q, &mut p, dt, &mut scratch, None) {
            out.failure = Some(at_step(e, i));
            break;
        }
        let h = match system.energy(&PhaseState::from_parts(q.clone(), p.clone())) {
            Ok(h) => h,
            Err(e) => {
                out.failure = Some(at_step(e, i));
                break;
            }
        };
        let err: f64 = q.iter().zip(&tq).chain(p.iter().zip(&tp)).map(|(a, b)| (a - b).abs()).sum();
        out.errors.push(err);
        out.energy.push(h);
        out.max_dev = out.max_dev.max((h - h0).abs());
    }
    Ok(out)
}

/// Rolls out the learned fields and the analytic system from every test
/// state for `⌊t_predict/dt⌋` steps and averages the L1 error per step.
pub fn prediction_errors<T, V>(
    grad_t: &T,
    grad_v: &V,
    system: &HamiltonianSystem,
    tests: &[PhaseState],
    t_predict: f64,
    dt: f64,
) -> Result<PredictionReport>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    if tests.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dim(system.dim(), grad_t.dim())?;
    check_dim(system.dim(), grad_v.dim())?;
    let steps = IntegrationPlan::new(0.0, t_predict, dt)?.steps();
    let traces: Vec<SampleTrace> = tests
        .par_iter()
        .enumerate()
        .map(|(i, s0)| {
            check_dim(system.dim(), s0.dim()).map_err(|e| e.at_sample(i))?;
            predict_one(grad_t, grad_v, system, s0, steps, dt).map_err(|e| e.at_sample(i))
        })
        .collect::<Result<_>>()?;

    let reached = traces.iter().map(|t| t.errors.len()).min().unwrap_or(0);
    let failure = traces
        .iter()
        .enumerate()
        .find_map(|(i, t)| t.failure.as_ref().map(|e| format!("sample {i}: {e}")));
    let n = traces.len() as f64;
    let mut errors = vec![0.0; reached];
    let mut energy = vec![0.0; reached];
    for t in &traces {
        for k in 0..reached {
            errors[k] += t.errors[k];
            energy[k] += t.energy[k];
        }
    }
    errors.iter_mut().for_each(|e| *e /= n);
    energy.iter_mut().for_each(|e| *e /= n);
    let epsilon_mean = if reached == 0 { 0.0 } else { errors.iter().sum::<f64>() / reached as f64 };
    Ok(PredictionReport {
        dt,
        t_predict,
        errors,
        energy,
        epsilon_mean,
        max_energy_dev: traces.iter().fold(0.0, |m, t| m.max(t.max_dev)),
        complete: failure.is_none(),
        failure,
    })
}

/// Writes `step,t,epsilon,H` rows.
pub fn write_report_csv<W: std::io::Write>(writer: W, report: &PredictionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "t", "epsilon", "H"])?;
    for (k, (e, h)) in report.errors.iter().zip(&report.energy).enumerate() {
        let step = k + 1;
        w.write_record([
            step.to_string(),
            format!("{:.16e}", step as f64 * report.dt),
            format!("{e:.16e}"),
            format!("{h:.16e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The JSON summary written next to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub epsilon_mean: f64,
    pub max_energy_dev: f64,
    pub symplecticity_defect: f64,
    pub steps: usize,
    pub complete: bool,
    pub failure: Option<String>,
    /// Largest `|H − H0|` along the single energy-probe trajectory.
    pub probe_energy_dev: f64,
    /// Least-squares slope of `H` along the probe trajectory, per unit time.
    pub probe_energy_slope: f64,
}

/// Analytic energy along the rollout of `(grad_t, grad_v)` from `s0`,
/// including the initial state.
pub fn energy_series<T, V>(
    grad_t: &T,
    grad_v: &V,
    system: &HamiltonianSystem,
    s0: &PhaseState,
    plan: &IntegrationPlan,
) -> Result<Vec<f64>>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    let run = integrate(grad_t, grad_v, s0, plan, true)?;
    run.trajectory.expect("recorded").iter().map(|s| system.energy(s)).collect()
}

/// Least-squares slope of `values[i]` against `t = i·dt`.
pub fn linear_trend(values: &[f64], dt: f64) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let t_mean = dt * (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dtm = i as f64 * dt - t_mean;
        sxy += dtm * (y - y_mean);
        sxx += dtm * dtm;
    }
    sxy / sxx
}

/// Fourth-order central-difference Jacobian with step `fd_h·(1 + |x_c|)`
/// per column.
pub fn fd_jacobian<F>(f: F, x: &[f64], fd_h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = f(x)?.len();
    let mut j = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for c in 0..x.len() {
        let h = fd_h * (1.0 + x[c].abs());
        let mut eval = |k: f64| {
            probe[c] = x[c] + k * h;
            let y = f(&probe);
            probe[c] = x[c];
            y
        };
        let (p2, p1, m1, m2) = (eval(2.0)?, eval(1.0)?, eval(-1.0)?, eval(-2.0)?);
        for r in 0..m {
            j[(r, c)] = (8.0 * (p1[r] - m1[r]) - (p2[r] - m2[r])) / (12.0 * h);
        }
    }
    Ok(j)
}

/// `Ω = [[0, I], [−I, 0]]` for `(q, p)` ordering.
pub fn canonical_omega(n: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        o[(i, n + i)] = 1.0;
        o[(n + i, i)] = -1.0;
    }
    o
}

/// `‖JᵀΩJ − Ω‖_max` for the finite-difference Jacobian of a map on flat
/// `(q, p)` vectors.
pub fn symplecticity_defect<F>(step_map: F, x: &[f64], fd_h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(1e-7..=1e-4).contains(&fd_h) {
        return Err(Error::Config(format!("fd_h must be in [1e-7, 1e-4], got {fd_h}")));
    }
    if !x.len().is_multiple_of(2) {
        return Err(Error::InvalidState(format!("odd phase-space length {}", x.len())));
    }
    let j = fd_jacobian(step_map, x, fd_h)?;
    check_dim(x.len(), j.nrows())?;
    let omega = canonical_omega(x.len() / 2);
    Ok((j.transpose() * &omega * j - omega).amax())
}

/// One Forest–Ruth step as a map on flat `(q, p)` vectors.
pub fn symplectic_step_map<'a, T, V>(grad_t: &'a T, grad_v: &'a V, dt: f64) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    move |x| {
        let s = PhaseState::from_flat(x)?;
        Ok(crate::integrators::symplectic_step(grad_t, grad_v, &s, dt)?.to_flat())
    }
}

/// One RK4 step as a map on flat `(q, p)` vectors.
pub fn rk4_step_map<'a, F>(field: &'a F, dt: f64) -> impl Fn(&[f64]) -> Result<Vec<f64>> + 'a
where
    F: PhaseField + ?Sized,
{
    move |x| Ok(rk4_step(field, &PhaseState::from_flat(x)?, dt)?.to_flat())
}

/// `‖J − Jᵀ‖_max` of the network's analytic Jacobian at `x`.
pub fn symmetry_defect(net: &TaylorGradNet, x: &[f64]) -> Result<f64> {
    let j = net.jacobian(x)?;
    Ok((&j - j.transpose()).amax())
}

/// `‖J − Jᵀ‖_max` of the finite-difference Jacobian of an arbitrary map.
pub fn fd_symmetry_defect<F>(f: F, x: &[f64], fd_h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let j = fd_jacobian(f, x, fd_h)?;
    Ok((&j - j.transpose()).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_system, SystemName};

    #[test]
    fn identity_map_has_zero_defect() {
        let x = [0.3, -1.2, 2.5, 0.0];
        assert!(symplecticity_defect(|v: &[f64]| Ok(v.to_vec()), &x, 1e-5).unwrap() < 1e-10);
        assert!(symplecticity_defect(|v: &[f64]| Ok(v.to_vec()), &x, 1e-2).is_err());
    }

    #[test]
    fn oracle_model_has_zero_error() {
        let sys = builtin_system(SystemName::Pendulum);
        let tests = vec![PhaseState::new(vec![1.0], vec![1.0]).unwrap(), PhaseState::new(vec![-0.5], vec![0.2]).unwrap()];
        let r = prediction_errors(&sys.kinetic_field(), &sys.potential_field(), &sys, &tests, 1.0, 0.01).unwrap();
        assert_eq!(r.steps(), 100);
        assert!(r.complete);
        assert!(r.errors.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn report_length_for_long_horizon() {
        let sys = builtin_system(SystemName::Pendulum);
        let tests = vec![PhaseState::new(vec![0.1], vec![0.0]).unwrap()];
        let r = prediction_errors(
            &sys.kinetic_field(),
            &sys.potential_field(),
            &sys,
            &tests,
            20.0 * std::f64::consts::PI,
            0.01,
        )
        .unwrap();
        assert_eq!(r.steps(), 6283);
        assert!(r.epsilon_mean < 1e-12);
    }

    #[test]
    fn trend_of_a_line() {
        let v: Vec<f64> = (0..50).map(|i| 2.0 + 0.5 * i as f64 * 0.1).collect();
        assert!((linear_trend(&v, 0.1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn failure_yields_partial_report() {
        let sys = builtin_system(SystemName::Pendulum);
        let bad = crate::phase::FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = if x[0] > 0.05 { f64::NAN } else { x[0] };
        });
        let tests = vec![PhaseState::new(vec![0.0], vec![1.0]).unwrap()];
        let r = prediction_errors(&bad, &sys.potential_field(), &sys, &tests, 1.0, 0.01).unwrap();
        assert!(!r.complete);
        assert!(r.steps() < 100);
        assert!(r.failure.unwrap().contains("numeric failure"));
    }
}
