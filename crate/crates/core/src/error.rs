//! Error type shared by all modules.
//!
//! Errors split into two classes: *validation* errors (bad arguments,
//! malformed inputs, guard violations detectable before any numerics run) and
//! *numerical* errors (an algorithm started and failed to reach its stated
//! tolerance). The CLI maps the former to exit code 2 and the latter to 3.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Input value outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Mismatched dimensions between coupled objects.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// Anti-aliasing guard: a projection grid must cover at least twice the
    /// requested support box on every axis.
    #[error("aliasing guard: axis {axis} grid has {grid} points, needs at least {need} for cutoff {cutoff}")]
    AliasingGuard {
        axis: usize,
        grid: usize,
        need: usize,
        cutoff: i32,
    },

    /// A matrix that must be trace-free (or a series of them) is not.
    #[error("matrix is not trace-free: |trace| = {trace:.3e} exceeds {tol:.3e}")]
    NotTraceFree { trace: f64, tol: f64 },

    /// A matrix family that must have unit determinant does not.
    #[error("determinant deviates from 1 by {dev:.3e} at probe point {at:?}")]
    NotUnimodular { dev: f64, at: Vec<f64> },

    /// A declared winding degree disagrees with the sampled winding.
    #[error("declared degree {declared} but sampled winding is {sampled} on axis {axis}")]
    DegreeMismatch {
        declared: i64,
        sampled: i64,
        axis: usize,
    },

    /// Winding could not be tracked because adjacent samples rotate too fast.
    #[error("grid too coarse for winding: step rotation {step:.3} turns at sample {at} (limit 0.25)")]
    WindingGridTooCoarse { step: f64, at: usize },

    /// Requested operation needs a zero-degree cocycle.
    #[error("operation requires homotopy degree 0, cocycle has {0:?}")]
    NonzeroDegree(Vec<i64>),

    /// Perturbation too large for the contraction argument to apply.
    #[error("perturbation size {eps:.3e} exceeds the solvable threshold {limit:.3e} ({context})")]
    ThresholdExceeded {
        eps: f64,
        limit: f64,
        context: &'static str,
    },

    /// Newton-type iteration stopped making progress.
    #[error("iteration diverged after {iterations} steps; residual history tail: {tail:?}")]
    Diverged { iterations: usize, tail: Vec<f64> },

    /// Iteration hit its step budget before reaching tolerance.
    #[error("no convergence within {max_iter} iterations; last residual {residual:.3e} vs tol {tol:.3e}")]
    MaxIterations {
        max_iter: usize,
        residual: f64,
        tol: f64,
    },

    /// Adaptive integrator drove the step below the useful floor.
    #[error("integrator step underflow at t = {t:.6e} (step {step:.3e}); tolerance unreachable")]
    StepUnderflow { t: f64, step: f64 },

    /// A conjugacy fails its defining intertwining relation.
    #[error("conjugation residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    ConjugacyMismatch { residual: f64, tol: f64 },

    /// Generic numerical failure with context.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors that arise *during* a numerical computation, as
    /// opposed to input validation. The CLI uses this split for exit codes.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ThresholdExceeded { .. }
                | Error::Diverged { .. }
                | Error::MaxIterations { .. }
                | Error::StepUnderflow { .. }
                | Error::Numerical(_)
                | Error::WindingGridTooCoarse { .. }
        )
    }
}
