//! Monotone probabilistic time discretizations and a probabilistic max-plus solver for
//! finite-horizon Hamilton–Jacobi–Bellman equations with switching and continuous controls.

pub mod cli;
pub mod decomp;
pub mod error;
pub mod expect;
pub mod gridsolve;
pub mod linalg;
pub mod maxplus;
pub mod problem;
pub mod schemes;
pub mod weights;

pub use decomp::Decomposition;
pub use error::{HjbError, Result};
pub use expect::{Engine, Estimate, Measure};
pub use gridsolve::{solve_grid, GridSpec, ValueGrid};
pub use maxplus::{solve_maxplus, MaxPlusValue, QuadraticForm, SamplePlan};
pub use problem::{registry, ControlProblem, HamiltonianPoint};
pub use schemes::{Scheme, SchemeConfig, Variant};

