//! Two-stage solver for the asymmetric binary perceptron: find
//! `chi in {-1, +1}^N` with `<X_i, chi> / sqrt(N) >= kappa` for a Gaussian
//! matrix `X`.
//!
//! Stage one solves a linear relaxation over the cube and returns a vertex;
//! stage two fixes the remaining fractional coordinates with repeated
//! edge-walk partial colourings, then rounds. Alongside the solver sit the
//! analytic predictions for both stages, capacity bounds and the overlap
//! gap exponent.

pub mod analytics;
pub mod capacity;
pub mod edge_walk;
pub mod error;
pub mod exec;
pub mod gauss;
pub mod lp;
pub mod model;
pub mod ogp;
pub mod pipeline;
pub mod quad;
pub mod rng;
pub mod schedules;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{generate_instance, margins, verify_solution, Instance, SolutionReport};

/// Crate version, stamped into every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
