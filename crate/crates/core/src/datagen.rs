//! Endpoint-pair datasets: random initial states pushed through the analytic
//! flow, keeping only the first and last state of each trajectory.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrators::{integrate, symplectic_step, IntegrationPlan};
use crate::phase::PhaseState;
use crate::rng::{item_seed, rng_from};
use crate::systems::{builtin_system, HamiltonianSystem, SystemName};

const MAX_REJECTIONS: usize = 100_000;
const MAX_ESCAPES: usize = 10_000;

/// Where evaluation states come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TestDomain {
    /// Plain draws from the sampling box.
    Box,
    /// Draws whose analytic orbit stays inside the sampling box for the
    /// whole prediction horizon.
    #[default]
    Contained,
}

/// One training record: a state and where the flow takes it after the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub initial: PhaseState,
    #[serde(rename = "final")]
    pub final_state: PhaseState,
}

impl SamplePair {
    pub fn new(initial: PhaseState, final_state: PhaseState) -> Result<Self> {
        check_dim(initial.dim(), final_state.dim())?;
        Ok(SamplePair { initial, final_state })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub system: SystemName,
    pub n_samples: usize,
    pub horizon: f64,
    pub gt_dt: f64,
    #[serde(default)]
    pub noise_std_q: f64,
    #[serde(default)]
    pub noise_std_p: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gt_dt.is_finite() && self.gt_dt > 0.0) {
            return Err(Error::Config(format!("gt_dt must be positive, got {}", self.gt_dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::Config(format!("horizon must be >= 0, got {}", self.horizon)));
        }
        if self.horizon > 0.0 && self.gt_dt > self.horizon {
            return Err(Error::Config(format!(
                "gt_dt {} exceeds horizon {}",
                self.gt_dt, self.horizon
            )));
        }
        for s in [self.noise_std_q, self.noise_std_p] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("noise std must be finite and >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Uniform draw from the system's sampling box. Systems with bodies redraw
/// positions until every pair is at least `min_separation` apart.
pub fn sample_initial(system: &HamiltonianSystem, rng: &mut ChaCha8Rng) -> Result<PhaseState> {
    let draw = |rng: &mut ChaCha8Rng, b: &[(f64, f64)]| -> Vec<f64> {
        b.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()
    };
    let q = match (system.min_separation(), system.bodies()) {
        (Some(min), Some((d, n))) => {
            let mut attempt = 0;
            loop {
                let q = draw(rng, system.q_box());
                if min_pair_distance(&q, d, n) >= min {
                    break q;
                }
                attempt += 1;
                if attempt >= MAX_REJECTIONS {
                    return Err(Error::Config(format!(
                        "no configuration with separation >= {min} after {MAX_REJECTIONS} draws"
                    )));
                }
            }
        }
        _ => draw(rng, system.q_box()),
    };
    let p = draw(rng, system.p_box());
    PhaseState::new(q, p)
}

pub(crate) fn min_pair_distance(q: &[f64], d: usize, n: usize) -> f64 {
    let mut min = f64::INFINITY;
    for j in 0..n {
        for k in j + 1..n {
            let r = (0..d).map(|c| (q[j * d + c] - q[k * d + c]).powi(2)).sum::<f64>().sqrt();
            min = min.min(r);
        }
    }
    min
}

/// Samples `n` initial states, each from its own stream `item_seed(seed, i)`.
pub fn sample_initial_states(system: &HamiltonianSystem, n: usize, seed: u64) -> Result<Vec<PhaseState>> {
    (0..n)
        .into_par_iter()
        .map(|i| sample_initial(system, &mut rng_from(item_seed(seed, i as u64))).map_err(|e| e.at_sample(i)))
        .collect()
}

/// True when the analytic orbit from `s0` stays in the sampling box for
/// `horizon`, checked at every step of size `dt`.
pub fn orbit_contained(system: &HamiltonianSystem, s0: &PhaseState, horizon: f64, dt: f64) -> Result<bool> {
    let inside = |s: &PhaseState| {
        let within = |x: &[f64], b: &[(f64, f64)]| x.iter().zip(b).all(|(v, &(lo, hi))| (lo..=hi).contains(v));
        within(s.q(), system.q_box()) && within(s.p(), system.p_box())
    };
    let plan = IntegrationPlan::new(0.0, horizon, dt)?;
    let (gt, gv) = (system.kinetic_field(), system.potential_field());
    let mut s = s0.clone();
    for _ in 0..plan.steps() {
        if !inside(&s) {
            return Ok(false);
        }
        s = match symplectic_step(&gt, &gv, &s, dt) {
            Ok(next) => next,
            Err(Error::NumericFailure { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
    }
    Ok(inside(&s))
}

/// Samples `n` evaluation states. With [`TestDomain::Contained`] each item
/// redraws from its own stream until its orbit stays in the box.
pub fn sample_test_states(
    system: &HamiltonianSystem,
    n: usize,
    domain: TestDomain,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<PhaseState>> {
    if domain == TestDomain::Box {
        return sample_initial_states(system, n, seed);
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(item_seed(seed, i as u64));
            for _ in 0..MAX_ESCAPES {
                let s = sample_initial(system, &mut rng)?;
                if orbit_contained(system, &s, horizon, dt)? {
                    return Ok(s);
                }
            }
            Err(Error::Config(format!("no contained orbit after {MAX_ESCAPES} draws")).at_sample(i))
        })
        .collect()
}

/// Pushes each initial state through the analytic flow for `horizon`.
pub fn flow_endpoints(
    system: &HamiltonianSystem,
    initial: Vec<PhaseState>,
    horizon: f64,
    gt_dt: f64,
) -> Result<Vec<SamplePair>> {
    let plan = IntegrationPlan::new(0.0, horizon, gt_dt)?;
    let (gt, gv) = (system.kinetic_field(), system.potential_field());
    initial
        .into_par_iter()
        .enumerate()
        .map(|(i, s0)| {
            let end = integrate(&gt, &gv, &s0, &plan, false).map_err(|e| e.at_sample(i))?;
            Ok(SamplePair { initial: s0, final_state: end.final_state })
        })
        .collect()
}

/// Builds a dataset for an arbitrary system; noise is drawn from the
/// stream `item_seed(seed, n)` after all samples.
pub fn generate_for(
    system: &HamiltonianSystem,
    n_samples: usize,
    horizon: f64,
    gt_dt: f64,
    noise: (f64, f64),
    seed: u64,
) -> Result<Vec<SamplePair>> {
    let initial = sample_initial_states(system, n_samples, seed)?;
    let mut data = flow_endpoints(system, initial, horizon, gt_dt)?;
    if noise.0 > 0.0 || noise.1 > 0.0 {
        let mut rng = rng_from(item_seed(seed, n_samples as u64));
        data = add_noise(data, noise.0, noise.1, &mut rng)?;
    }
    Ok(data)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    let system = builtin_system(spec.system);
    generate_for(
        &system,
        spec.n_samples,
        spec.horizon,
        spec.gt_dt,
        (spec.noise_std_q, spec.noise_std_p),
        spec.seed,
    )
}

/// Adds Gaussian noise with standard deviation `sigma_q` to every final
/// position and `sigma_p` to every final momentum. Initial states are kept.
pub fn add_noise(
    dataset: Vec<SamplePair>,
    sigma_q: f64,
    sigma_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SamplePair>> {
    let nq = Normal::new(0.0, sigma_q).map_err(|e| Error::Config(e.to_string()))?;
    let np = Normal::new(0.0, sigma_p).map_err(|e| Error::Config(e.to_string()))?;
    if sigma_q == 0.0 && sigma_p == 0.0 {
        return Ok(dataset);
    }
    dataset
        .into_iter()
        .map(|pair| {
            let (mut q, mut p) = pair.final_state.into_parts();
            q.iter_mut().for_each(|v| *v += nq.sample(rng));
            p.iter_mut().for_each(|v| *v += np.sample(rng));
            Ok(SamplePair { initial: pair.initial, final_state: PhaseState::new(q, p)? })
        })
        .collect()
}

fn header(dim: usize) -> Vec<String> {
    ["q0", "p0", "qn", "pn"]
        .iter()
        .flat_map(|pre| (0..dim).map(move |i| format!("{pre}_{i}")))
        .collect()
}

/// Writes a dataset as CSV with 17 significant digits per value.
pub fn write_csv<W: Write>(writer: W, data: &[SamplePair]) -> Result<()> {
    let dim = data.first().map(|d| d.initial.dim()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(dim))?;
    for pair in data {
        check_dim(dim, pair.initial.dim())?;
        let row = [pair.initial.q(), pair.initial.p(), pair.final_state.q(), pair.final_state.p()];
        w.write_record(row.iter().flat_map(|v| v.iter()).map(|x| format!("{x:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SamplePair>> {
    let mut r = csv::Reader::from_reader(reader);
    let cols = r.headers()?.len();
    if cols == 0 || cols % 4 != 0 {
        return Err(Error::Config(format!("dataset has {cols} columns, expected a multiple of 4")));
    }
    let dim = cols / 4;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("row {i}: {e}")))?;
        check_dim(cols, vals.len())?;
        let part = |k: usize| vals[k * dim..(k + 1) * dim].to_vec();
        let pair = SamplePair::new(PhaseState::new(part(0), part(1))?, PhaseState::new(part(2), part(3))?)
            .map_err(|e| e.at_sample(i))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_csv_file(path: &Path, data: &[SamplePair]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, data)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<SamplePair>> {
    read_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(system: SystemName, n: usize, horizon: f64) -> DatasetSpec {
        DatasetSpec { system, n_samples: n, horizon, gt_dt: 1e-3, noise_std_q: 0.0, noise_std_p: 0.0, seed: 5 }
    }

    #[test]
    fn pendulum_draws_stay_in_box() {
        let sys = builtin_system(SystemName::Pendulum);
        let mut rng = rng_from(1);
        for _ in 0..10_000 {
            let s = sample_initial(&sys, &mut rng).unwrap();
            assert!(s.q()[0].abs() <= 2.0 && s.p()[0].abs() <= 2.0);
        }
    }

    #[test]
    fn kepler_draws_are_separated() {
        let sys = builtin_system(SystemName::Kepler);
        let mut rng = rng_from(2);
        for _ in 0..2_000 {
            let s = sample_initial(&sys, &mut rng).unwrap();
            assert!(min_pair_distance(s.q(), 2, 2) >= 4.0);
        }
    }

    #[test]
    fn first_draw_is_reproducible() {
        let sys = builtin_system(SystemName::HenonHeiles);
        let a = sample_initial(&sys, &mut rng_from(77)).unwrap();
        let b = sample_initial(&sys, &mut rng_from(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contained_pendulum_states_stay_below_box_energy() {
        let sys = builtin_system(SystemName::Pendulum);
        let horizon = 20.0 * std::f64::consts::PI;
        let states = sample_test_states(&sys, 50, TestDomain::Contained, horizon, 0.01, 9).unwrap();
        // An orbit reaching |q| = 2 has H >= -cos 2.
        let edge = -(2.0f64).cos();
        for s in &states {
            assert!(sys.energy(s).unwrap() < edge + 1e-3);
        }
        assert_eq!(states, sample_test_states(&sys, 50, TestDomain::Contained, horizon, 0.01, 9).unwrap());
        let plain = sample_test_states(&sys, 50, TestDomain::Box, horizon, 0.01, 9).unwrap();
        assert_eq!(plain, sample_initial_states(&sys, 50, 9).unwrap());
    }

    #[test]
    fn zero_horizon_keeps_initial() {
        for pair in generate_dataset(&spec(SystemName::Kepler, 8, 0.0)).unwrap() {
            assert_eq!(pair.initial, pair.final_state);
        }
    }

    #[test]
    fn pendulum_endpoints_match_fine_reference() {
        let sys = builtin_system(SystemName::Pendulum);
        let data = generate_dataset(&spec(SystemName::Pendulum, 10, 0.01)).unwrap();
        let fine = IntegrationPlan::new(0.0, 0.01, 1e-5).unwrap();
        for pair in &data {
            let reference =
                integrate(&sys.kinetic_field(), &sys.potential_field(), &pair.initial, &fine, false).unwrap();
            assert!(pair.final_state.l1_distance(&reference.final_state) < 1e-10);
            let de = sys.energy(&pair.final_state).unwrap() - sys.energy(&pair.initial).unwrap();
            assert!(de.abs() < 1e-8);
        }
    }

    #[test]
    fn ground_truth_conserves_energy_for_all_systems() {
        for name in SystemName::ALL {
            let sys = builtin_system(name);
            for pair in generate_dataset(&spec(name, 20, 0.01)).unwrap() {
                let de = sys.energy(&pair.final_state).unwrap() - sys.energy(&pair.initial).unwrap();
                assert!(de.abs() < 1e-8, "{name}: {de}");
            }
        }
    }

    #[test]
    fn noise_statistics_and_reproducibility() {
        let s = PhaseState::new(vec![0.0; 10], vec![0.0; 10]).unwrap();
        let data: Vec<_> = (0..5_000).map(|_| SamplePair { initial: s.clone(), final_state: s.clone() }).collect();
        let noisy = add_noise(data.clone(), 0.1, 0.1, &mut rng_from(3)).unwrap();
        let again = add_noise(data.clone(), 0.1, 0.1, &mut rng_from(3)).unwrap();
        assert_eq!(noisy, again);
        let diffs: Vec<f64> = noisy.iter().flat_map(|p| p.final_state.to_flat()).collect();
        assert_eq!(diffs.len(), 100_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((std - 0.1).abs() / 0.1 < 0.03, "std {std}");
        assert!(noisy.iter().all(|p| p.initial == s));
        assert_eq!(add_noise(data.clone(), 0.0, 0.0, &mut rng_from(3)).unwrap(), data);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let data = generate_dataset(&spec(SystemName::Kepler, 5, 0.01)).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("q0_0,q0_1,q0_2,q0_3,p0_0"));
        assert_eq!(text.lines().next().unwrap().split(',').count(), 16);
        assert_eq!(read_csv(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(SystemName::Pendulum, 3, 0.01);
        s.gt_dt = 0.1;
        assert!(generate_dataset(&s).is_err());
        s.gt_dt = 1e-3;
        s.noise_std_p = f64::NAN;
        assert!(generate_dataset(&s).is_err());
    }
}
