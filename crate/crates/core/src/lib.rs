//! Learning separable Hamiltonian dynamics with symmetric Taylor-series
//! gradient networks driven by a fourth-order symplectic integrator.
//!
//! The pieces:
//!
//! * [`systems`]: analytic benchmark Hamiltonians (pendulum, Lotka–Volterra,
//!   Kepler, Hénon–Heiles) with exact gradients.
//! * [`integrators`]: the Forest–Ruth splitting integrator and an RK4 baseline.
//! * [`taylor`]: the symmetric gradient network and its Jacobian.
//! * [`training`]: differentiable rollouts, gradient engines, Adam, schedules.
//! * [`datagen`]: endpoint-pair datasets and noise injection.
//! * [`eval`]: long-horizon prediction error and structure diagnostics.
//! * [`nbody`]: composing a learned two-body model into N-body dynamics.
//! * [`cli`]: the `symtaylor` command-line runner.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod integrators;
pub mod nbody;
pub mod phase;
pub mod rng;
pub mod systems;
pub mod taylor;
pub mod training;

pub use error::{Error, Result};
pub use integrators::{
    forest_ruth_coefficients, integrate, rk4_integrate, rk4_step, symplectic_step, Integration,
    IntegrationPlan, SymplecticCoefficients,
};
pub use phase::{GradientField, PhaseState};
pub use systems::{builtin_system, HamiltonianSystem, SystemName};
pub use taylor::{init_net, taylor_term, Activation, TaylorGradNet};
