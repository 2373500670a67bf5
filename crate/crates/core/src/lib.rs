//! Exact Information Bottleneck and dual Information Bottleneck solvers for
//! discrete distributions.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the command-line
//! tool uses.

pub mod anneal;
pub mod cli;
pub mod critical;
pub mod dual;
pub mod error;
pub mod error_exp;
pub mod expfam;
pub mod ib;
pub mod prob;
pub mod scalar;
pub mod solve;
pub mod state;

pub use dual::{dual_decomposition, dual_distortion, dual_encoder_update, dual_solve, DualDecomposition};
pub use error::{Error, Result};
pub use ib::{ib_distortion, ib_encoder_update, ib_solve};
pub use prob::{bayes_decoder, entropy, geometric_decoder, geometric_mixture, kl_divergence, mutual_information, Var};
pub use scalar::Real;
pub use solve::{solve, SolveOptions};
pub use state::Framework;

pub type Joint = prob::JointDistribution<f64>;
pub type Conditional = prob::ConditionalDistribution<f64>;
pub type State = state::BottleneckState<f64>;
pub type Report = solve::SolveReport<f64>;
