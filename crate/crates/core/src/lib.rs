//! Pseudo-spectral solver for three-dimensional incompressible MHD on the
//! periodic box `[0, 2π)³` with a nonlinear velocity damping term, plus
//! numerical checks of the energy inequalities that govern it.
//!
//! Conventions used throughout:
//!
//! * Fields are stored as Fourier coefficients `ĉ(k)` with
//!   `f(x) = Σ_k ĉ(k) e^{ik·x}` and `ĉ(k) = N⁻³ Σ_x f(x) e^{−ik·x}`.
//! * Norms carry the box volume: `‖f‖² = (2π)³ Σ_k |ĉ(k)|²`.
//! * Arrays are row-major `[i₀][i₁][i₂]` with `i₀` along `x₁`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

mod par;

pub mod checkpoint;
pub mod energy;
pub mod error;
pub mod integrator;
pub mod lemmas;
pub mod nonlinear;
pub mod spectral;
pub mod twin;

pub use energy::{CheckReport, Ledger, LedgerRow, Verdict};
pub use error::{Error, Result};
pub use integrator::{run, InitialCondition, MhdState, RunOutput, Simulation, SolverConfig};
pub use nonlinear::{DampingFn, DampingSpec};
pub use spectral::{GridSpec, PhysicalVectorField, SpectralVectorField, Transform};
pub use twin::{twin_run, TwinRunResult};
