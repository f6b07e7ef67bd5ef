//! Gravitational N-body prediction from a model trained on two bodies.
//!
//! The pair model sees the positions of two bodies and returns the gradient
//! of their interaction potential. An N-body field is assembled by summing
//! that gradient over every unordered pair, weighted by `m_j m_k`.

use serde::{Deserialize, Serialize};

use crate::datagen::sample_initial;
use crate::error::{check_dim, Error, Result};
use crate::integrators::{integrate, IntegrationPlan};
use crate::phase::{GradientField, PhaseState};
use crate::rng::{item_seed, rng_from};
use crate::systems::{builtin_system, HamiltonianSystem, SystemName};
use crate::taylor::TaylorGradNet;
use crate::training::{make_datasets, train, EpochRecord, ModelPair, TrainConfig};

/// Minimum pairwise distance of sampled N-body states.
pub const NBODY_MIN_SEPARATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NBodyConfig {
    pub n_body: usize,
    pub space_dim: usize,
    pub masses: Vec<f64>,
}

impl NBodyConfig {
    /// `n_body` unit masses in the plane.
    pub fn unit(n_body: usize) -> Self {
        NBodyConfig { n_body, space_dim: 2, masses: vec![1.0; n_body] }
    }

    /// Phase-space dimension `n_body * space_dim`.
    pub fn dim(&self) -> usize {
        self.n_body * self.space_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_body < 2 || self.space_dim == 0 {
            return Err(Error::Config(format!(
                "need n_body >= 2 and space_dim >= 1, got {} and {}",
                self.n_body, self.space_dim
            )));
        }
        if self.masses.len() != self.n_body {
            return Err(Error::Config(format!("{} masses for {} bodies", self.masses.len(), self.n_body)));
        }
        if self.masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Config("masses must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Analytic ground truth for `cfg`.
pub fn nbody_system(cfg: &NBodyConfig) -> Result<HamiltonianSystem> {
    cfg.validate()?;
    HamiltonianSystem::gravity(cfg.space_dim, cfg.masses.clone(), Some(NBODY_MIN_SEPARATION))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KineticMode {
    /// `p_j / m_j` per body.
    #[default]
    Analytic,
    /// The pair model's kinetic network, averaged over the `n_body - 1`
    /// pairs each body belongs to.
    LearnedPairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub kinetic: KineticMode,
    /// Also evaluate each pair with the bodies swapped and average.
    pub symmetrize: bool,
    /// Evaluate each pair about its midpoint. The pair term becomes
    /// `V(q_j - c, q_k - c)` with `c = (q_j + q_k)/2`, which is translation
    /// invariant and gives equal and opposite forces.
    pub centered: bool,
}

impl Composition {
    /// Midpoint-centered and label-symmetrized pair terms with the analytic
    /// kinetic gradient.
    pub fn invariant() -> Self {
        Composition { kinetic: KineticMode::Analytic, symmetrize: true, centered: true }
    }
}

/// Composed `∂V/∂q` over all unordered pairs.
#[derive(Debug, Clone)]
pub struct PairwisePotential<'a> {
    net: &'a TaylorGradNet,
    space_dim: usize,
    masses: Vec<f64>,
    symmetrize: bool,
    centered: bool,
}

/// Composed `∂T/∂p`.
#[derive(Debug, Clone)]
pub enum PairwiseKinetic<'a> {
    Analytic { space_dim: usize, masses: Vec<f64> },
    Learned { net: &'a TaylorGradNet, space_dim: usize, n_body: usize },
}

fn pair_state(x: &[f64], d: usize, j: usize, k: usize, buf: &mut [f64]) {
    buf[..d].copy_from_slice(&x[j * d..(j + 1) * d]);
    buf[d..].copy_from_slice(&x[k * d..(k + 1) * d]);
}

fn finite(out: &[f64]) -> Result<()> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure { step: 0, substep: 0 })
    }
}

impl GradientField for PairwisePotential<'_> {
    fn dim(&self) -> usize {
        self.space_dim * self.masses.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.space_dim;
        let n = self.masses.len();
        let mut pair = vec![0.0; 2 * d];
        let mut g = vec![0.0; 2 * d];
        let mut swapped = vec![0.0; 2 * d];
        out.fill(0.0);
        for j in 0..n {
            for k in j + 1..n {
                pair_state(x, d, j, k, &mut pair);
                if self.centered {
                    for c in 0..d {
                        let half = 0.5 * (pair[d + c] - pair[c]);
                        pair[c] = -half;
                        pair[d + c] = half;
                    }
                }
                self.net.forward_unchecked(&pair, &mut g);
                if self.symmetrize {
                    let (a, b) = pair.split_at_mut(d);
                    a.swap_with_slice(b);
                    self.net.forward_unchecked(&pair, &mut swapped);
                    for c in 0..d {
                        g[c] = 0.5 * (g[c] + swapped[d + c]);
                        g[d + c] = 0.5 * (g[d + c] + swapped[c]);
                    }
                }
                if self.centered {
                    for c in 0..d {
                        let half = 0.5 * (g[c] - g[d + c]);
                        g[c] = half;
                        g[d + c] = -half;
                    }
                }
                let w = self.masses[j] * self.masses[k];
                for c in 0..d {
                    out[j * d + c] += w * g[c];
                    out[k * d + c] += w * g[d + c];
                }
            }
        }
        finite(out)
    }
}

impl GradientField for PairwiseKinetic<'_> {
    fn dim(&self) -> usize {
        match self {
            PairwiseKinetic::Analytic { space_dim, masses } => space_dim * masses.len(),
            PairwiseKinetic::Learned { space_dim, n_body, .. } => space_dim * n_body,
        }
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            PairwiseKinetic::Analytic { space_dim, masses } => {
                for (j, m) in masses.iter().enumerate() {
                    for c in 0..*space_dim {
                        out[j * space_dim + c] = x[j * space_dim + c] / m;
                    }
                }
            }
            PairwiseKinetic::Learned { net, space_dim, n_body } => {
                let d = *space_dim;
                let mut pair = vec![0.0; 2 * d];
                let mut g = vec![0.0; 2 * d];
                out.fill(0.0);
                for j in 0..*n_body {
                    for k in j + 1..*n_body {
                        pair_state(x, d, j, k, &mut pair);
                        net.forward_unchecked(&pair, &mut g);
                        for c in 0..d {
                            out[j * d + c] += g[c];
                            out[k * d + c] += g[d + c];
                        }
                    }
                }
                if *n_body > 2 {
                    let share = 1.0 / (*n_body - 1) as f64;
                    out.iter_mut().for_each(|v| *v *= share);
                }
            }
        }
        finite(out)
    }
}

/// Builds N-body gradient fields from a model trained on two bodies.
pub fn compose_pairwise<'a>(
    model: &'a ModelPair,
    cfg: &NBodyConfig,
    how: Composition,
) -> Result<(PairwiseKinetic<'a>, PairwisePotential<'a>)> {
    cfg.validate()?;
    check_dim(2 * cfg.space_dim, model.dim())?;
    let kinetic = match how.kinetic {
        KineticMode::Analytic => PairwiseKinetic::Analytic { space_dim: cfg.space_dim, masses: cfg.masses.clone() },
        KineticMode::LearnedPairwise => {
            if cfg.masses.iter().any(|&m| m != 1.0) {
                return Err(Error::Config("learned pairwise kinetic term needs unit masses".into()));
            }
            PairwiseKinetic::Learned { net: &model.tp, space_dim: cfg.space_dim, n_body: cfg.n_body }
        }
    };
    let potential = PairwisePotential {
        net: &model.vq,
        space_dim: cfg.space_dim,
        masses: cfg.masses.clone(),
        symmetrize: how.symmetrize,
        centered: how.centered,
    };
    Ok((kinetic, potential))
}

/// Settings for the two-body pair model: Kepler network and optimizer
/// settings with a 0.08 horizon and 40 samples.
pub fn pairwise_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_system(SystemName::Kepler);
    cfg.t_train = 0.08;
    cfg.dt = cfg.t_train / 10.0;
    cfg.n_train = 40;
    cfg.epochs = 100;
    cfg.seed = seed;
    cfg
}

/// Trains the pair model on two-body data generated from `cfg`.
pub fn train_pairwise(cfg: &TrainConfig) -> Result<(ModelPair, Vec<EpochRecord>)> {
    let system = builtin_system(SystemName::Kepler);
    let (train_set, validation_set) = make_datasets(&system, cfg, (0.0, 0.0))?;
    let model = ModelPair::from_config(system.dim(), cfg)?;
    train(&system, model, &train_set, &validation_set, cfg)
}

/// Symplectic rollout of the composed model, one state per grid point.
pub fn predict_nbody(
    model: &ModelPair,
    cfg: &NBodyConfig,
    how: Composition,
    s0: &PhaseState,
    plan: &IntegrationPlan,
) -> Result<Vec<PhaseState>> {
    check_dim(cfg.dim(), s0.dim())?;
    let (gt, gv) = compose_pairwise(model, cfg, how)?;
    Ok(integrate(&gt, &gv, s0, plan, true)?.trajectory.unwrap_or_default())
}

/// Analytic trajectory on the same grid as [`predict_nbody`].
pub fn true_nbody(system: &HamiltonianSystem, s0: &PhaseState, plan: &IntegrationPlan) -> Result<Vec<PhaseState>> {
    let (gt, gv) = (system.kinetic_field(), system.potential_field());
    Ok(integrate(&gt, &gv, s0, plan, true)?.trajectory.unwrap_or_default())
}

/// Draws an N-body state with pairwise separation at least
/// [`NBODY_MIN_SEPARATION`], positions in `[-3,3]` and momenta in
/// `[-p_max, p_max]`.
pub fn sample_nbody_state(cfg: &NBodyConfig, p_max: f64, seed: u64, index: u64) -> Result<PhaseState> {
    let system = nbody_system(cfg)?;
    let s = sample_initial(&system, &mut rng_from(item_seed(seed, index)))?;
    let (q, p) = s.into_parts();
    PhaseState::new(q, p.into_iter().map(|v| v * p_max / 2.0).collect())
}

/// `n_body` unit masses evenly spaced on a circle of radius `radius`
/// about the origin, moving on the circular relative equilibrium.
pub fn ring_state(n_body: usize, radius: f64) -> Result<PhaseState> {
    if n_body < 2 || !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Config(format!("ring needs >= 2 bodies and radius > 0, got {n_body} and {radius}")));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let pull: f64 = (1..n_body).map(|k| 0.25 / (std::f64::consts::PI * k as f64 / n_body as f64).sin()).sum();
    let v = (pull / radius).sqrt();
    let mut q = Vec::with_capacity(2 * n_body);
    let mut p = Vec::with_capacity(2 * n_body);
    for j in 0..n_body {
        let a = tau * j as f64 / n_body as f64;
        q.extend([radius * a.cos(), radius * a.sin()]);
        p.extend([-v * a.sin(), v * a.cos()]);
    }
    PhaseState::new(q, p)
}

/// Mean over grid points of the L1 distance between two trajectories.
pub fn mean_l1_error(predicted: &[PhaseState], truth: &[PhaseState]) -> Result<f64> {
    check_dim(truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total = predicted.iter().zip(truth).map(|(a, b)| a.l1_distance(b)).sum::<f64>();
    Ok(total / truth.len() as f64)
}

/// Relabels bodies: body `j` of the result is body `perm[j]` of `s`.
pub fn permute_bodies(s: &PhaseState, space_dim: usize, perm: &[usize]) -> Result<PhaseState> {
    check_dim(s.dim(), perm.len() * space_dim)?;
    let pick = |x: &[f64]| perm.iter().flat_map(|&b| x[b * space_dim..(b + 1) * space_dim].to_vec()).collect();
    PhaseState::new(pick(s.q()), pick(s.p()))
}
