//! Variable-step Crank-Nicolson solver for the time-fractional Allen-Cahn
//! equation
//!
//! The equation `∂_t^α u = ε² Δu − (u³ − u)` on a periodic square is
//! integrated in its Riemann-Liouville form `∂_t u = ∂_t^{1−α} (ε²Δu − f(u))`
//! with an L1-type discretization of the fractional derivative on arbitrary
//! nonuniform time meshes. The integrator dissipates a discrete variational
//! energy unconditionally and preserves the maximum bound `|u| ≤ 1` under an
//! explicit step restriction.
//!
//! Module map:
//! * [`mesh`] — graded / graded-uniform / graded-random time meshes and the
//!   feed-forward adaptive step controller.
//! * [`kernels`] — the four discrete convolution kernel families (`a`, `q`,
//!   `theta`, `p`) on nonuniform meshes, with their orthogonality and
//!   complementarity identities.
//! * [`soe`] — certified sum-of-exponentials compression of the power kernel
//!   `ω_α` and the exponential history recursion behind the fast stepper.
//! * [`grid`] — periodic square-grid fields, the five-point Laplacian, and
//!   discrete norms.
//! * [`bulk`] — the double-well potential and the two-point bulk force used
//!   by the Crank-Nicolson step.
//! * [`stepper`] — the time integrator (direct and fast history paths),
//!   Newton solve, energy monitors and step-restriction checks.
//! * [`manufactured`] — the forced test problem with a closed-form solution.
//! * [`experiments`] — reproducible experiment drivers shared by the CLI and
//!   the examples, with CSV emission.
//!
//! See the crate `examples/` directory for one runnable program per
//! capability and the `tfac` binary for the command-line interface.

pub mod bulk;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod manufactured;
pub mod mesh;
pub mod rng;
pub mod soe;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{GridField, GridSpec};
pub use mesh::{AdaptiveController, TimeMesh};
pub use soe::SoeApprox;
pub use stepper::{ModelConfig, NewtonOptions, SolveRecord, TfacSolver};
