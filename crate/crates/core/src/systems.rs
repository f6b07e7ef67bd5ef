//! Analytic separable Hamiltonians `H(q, p) = T(p) + V(q)` used as ground
//! truth and as test oracles.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::phase::{GradientField, PhaseState};

/// The four built-in benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Pendulum,
    LotkaVolterra,
    Kepler,
    HenonHeiles,
}

impl SystemName {
    pub const ALL: [SystemName; 4] = [
        SystemName::Pendulum,
        SystemName::LotkaVolterra,
        SystemName::Kepler,
        SystemName::HenonHeiles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemName::Pendulum => "pendulum",
            SystemName::LotkaVolterra => "lotka_volterra",
            SystemName::Kepler => "kepler",
            SystemName::HenonHeiles => "henon_heiles",
        }
    }
}

impl std::fmt::Display for SystemName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    /// `T = p²/2`, `V = −cos q`.
    Pendulum,
    /// `T = p − eᵖ`, `V = 2q − e^q`.
    LotkaVolterra,
    /// `T = ½|p|²`, `V = ½|q|² + q₁²q₂ − q₂³/3`.
    HenonHeiles,
    /// `T = Σ |p_i|²/(2 m_i)`, `V = −Σ_{j<k} m_j m_k / |q_j − q_k|`.
    Gravity { space_dim: usize, masses: Vec<f64> },
}

/// Uniform sampling interval for one phase-space component.
pub type Interval = (f64, f64);

/// An analytic separable Hamiltonian together with its sampling box.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSystem {
    name: String,
    model: Model,
    dim: usize,
    q_box: Vec<Interval>,
    p_box: Vec<Interval>,
    min_separation: Option<f64>,
}

pub fn builtin_system(name: SystemName) -> HamiltonianSystem {
    let boxed = |dim: usize, q: Interval, p: Interval| (vec![q; dim], vec![p; dim]);
    let (model, dim, (q_box, p_box), min_separation) = match name {
        SystemName::Pendulum => (Model::Pendulum, 1, boxed(1, (-2.0, 2.0), (-2.0, 2.0)), None),
        SystemName::LotkaVolterra => {
            (Model::LotkaVolterra, 1, boxed(1, (-2.0, 2.0), (-2.0, 2.0)), None)
        }
        SystemName::Kepler => (
            Model::Gravity { space_dim: 2, masses: vec![1.0, 1.0] },
            4,
            boxed(4, (-3.0, 3.0), (-2.0, 2.0)),
            Some(4.0),
        ),
        SystemName::HenonHeiles => {
            (Model::HenonHeiles, 2, boxed(2, (-0.5, 0.5), (-0.5, 0.5)), None)
        }
    };
    HamiltonianSystem { name: name.as_str().to_owned(), model, dim, q_box, p_box, min_separation }
}

impl HamiltonianSystem {
    /// Gravitational N-body system in `space_dim` dimensions. Positions are
    /// sampled from `[-3,3]` and momenta from `[-2,2]` per component.
    pub(crate) fn gravity(
        space_dim: usize,
        masses: Vec<f64>,
        min_separation: Option<f64>,
    ) -> Result<Self> {
        if space_dim == 0 || masses.len() < 2 {
            return Err(Error::Config("need at least two bodies in >= 1 dimension".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Config("masses must be positive and finite".into()));
        }
        let dim = space_dim * masses.len();
        Ok(HamiltonianSystem {
            name: format!("nbody{}", masses.len()),
            model: Model::Gravity { space_dim, masses },
            dim,
            q_box: vec![(-3.0, 3.0); dim],
            p_box: vec![(-2.0, 2.0); dim],
            min_separation,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q_box(&self) -> &[Interval] {
        &self.q_box
    }

    pub fn p_box(&self) -> &[Interval] {
        &self.p_box
    }

    /// Minimum initial separation between bodies, when the system has bodies.
    pub fn min_separation(&self) -> Option<f64> {
        self.min_separation
    }

    /// `(space_dim, n_body)` for gravitational systems.
    pub fn bodies(&self) -> Option<(usize, usize)> {
        match &self.model {
            Model::Gravity { space_dim, masses } => Some((*space_dim, masses.len())),
            _ => None,
        }
    }

    pub fn kinetic(&self, p: &[f64]) -> Result<f64> {
        check_dim(self.dim, p.len())?;
        Ok(match &self.model {
            Model::Pendulum | Model::HenonHeiles => 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
            Model::LotkaVolterra => p[0] - p[0].exp(),
            Model::Gravity { space_dim, masses } => p
                .chunks(*space_dim)
                .zip(masses)
                .map(|(pi, m)| pi.iter().map(|x| x * x).sum::<f64>() / (2.0 * m))
                .sum(),
        })
    }

    pub fn potential(&self, q: &[f64]) -> Result<f64> {
        check_dim(self.dim, q.len())?;
        Ok(match &self.model {
            Model::Pendulum => -q[0].cos(),
            Model::LotkaVolterra => 2.0 * q[0] - q[0].exp(),
            Model::HenonHeiles => {
                let (x, y) = (q[0], q[1]);
                0.5 * (x * x + y * y) + x * x * y - y * y * y / 3.0
            }
            Model::Gravity { space_dim, masses } => {
                let mut v = 0.0;
                for j in 0..masses.len() {
                    for k in j + 1..masses.len() {
                        let r = separation(q, *space_dim, j, k);
                        if r == 0.0 {
                            return Err(Error::SingularPotential(j, k));
                        }
                        v -= masses[j] * masses[k] / r;
                    }
                }
                v
            }
        })
    }

    pub fn energy(&self, s: &PhaseState) -> Result<f64> {
        check_dim(self.dim, s.dim())?;
        Ok(self.kinetic(s.p())? + self.potential(s.q())?)
    }

    /// `∂T/∂p`.
    pub fn grad_t(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, p.len())?;
        let mut out = vec![0.0; self.dim];
        self.grad_t_into(p, &mut out);
        Ok(out)
    }

    /// `∂V/∂q`.
    pub fn grad_v(&self, q: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, q.len())?;
        let mut out = vec![0.0; self.dim];
        self.grad_v_into(q, &mut out)?;
        Ok(out)
    }

    fn grad_t_into(&self, p: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Pendulum | Model::HenonHeiles => out.copy_from_slice(p),
            Model::LotkaVolterra => out[0] = 1.0 - p[0].exp(),
            Model::Gravity { space_dim, masses } => {
                for ((o, pi), m) in out.chunks_mut(*space_dim).zip(p.chunks(*space_dim)).zip(masses)
                {
                    for (a, b) in o.iter_mut().zip(pi) {
                        *a = b / m;
                    }
                }
            }
        }
    }

    fn grad_v_into(&self, q: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.model {
            Model::Pendulum => out[0] = q[0].sin(),
            Model::LotkaVolterra => out[0] = 2.0 - q[0].exp(),
            Model::HenonHeiles => {
                let (x, y) = (q[0], q[1]);
                out[0] = x + 2.0 * x * y;
                out[1] = y + x * x - y * y;
            }
            Model::Gravity { space_dim, masses } => {
                let d = *space_dim;
                out.fill(0.0);
                for j in 0..masses.len() {
                    for k in j + 1..masses.len() {
                        let r = separation(q, d, j, k);
                        if r == 0.0 {
                            return Err(Error::SingularPotential(j, k));
                        }
                        let s = masses[j] * masses[k] / (r * r * r);
                        for c in 0..d {
                            let f = s * (q[j * d + c] - q[k * d + c]);
                            out[j * d + c] += f;
                            out[k * d + c] -= f;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `∂T/∂p` as a [`GradientField`].
    pub fn kinetic_field(&self) -> KineticField<'_> {
        KineticField(self)
    }

    /// `∂V/∂q` as a [`GradientField`].
    pub fn potential_field(&self) -> PotentialField<'_> {
        PotentialField(self)
    }
}

fn separation(q: &[f64], d: usize, j: usize, k: usize) -> f64 {
    (0..d).map(|c| (q[j * d + c] - q[k * d + c]).powi(2)).sum::<f64>().sqrt()
}

pub struct KineticField<'a>(&'a HamiltonianSystem);

impl GradientField for KineticField<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.grad_t_into(x, out);
        Ok(())
    }
}

pub struct PotentialField<'a>(&'a HamiltonianSystem);

impl GradientField for PotentialField<'_> {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.grad_v_into(x, out)
    }
}
