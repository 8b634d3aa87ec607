//! Graduated optimization for composite objectives `F(w) = h(w) + f(w)`,
//! where `h` is convex and `f` is smooth but nonconvex.
//!
//! The nonconvex part is smoothed over a shrinking Euclidean ball while `h`
//! is left untouched, and each smoothed subproblem is minimized over a shrunk
//! decision set with a projected SVRG or projected proximal SVRG inner loop.
//! GradOpt (suffix-SGD inner loop) and a nonconvex proximal SVRG are provided
//! as baselines, along with an experiment harness that writes CSV traces.

pub mod datasets;
pub mod error;
pub mod geometry;
pub mod goa;
pub mod harness;
pub mod problem;
pub mod problems;
pub mod smoothing;
pub mod solvers;
pub mod validate;
pub mod vecops;

pub use error::{GoaError, Result};
pub use geometry::ConvexSet;
pub use goa::{run_goa, run_gradopt_baseline, shrink_set, EpochBudget, GoaConfig, GoaRun, InnerSolver};
pub use harness::{Algorithm, ConvergenceTrace, ExperimentConfig, PassRecord, SuccessSummary};
pub use problem::{CompositeProblem, ConvexPart, NonconvexPart};
pub use smoothing::{AnchorMode, BallSampler, SmoothingParams, VrAnchor};
pub use solvers::{EpochResult, OutputRule, SvrgConfig};
