//! Numerical toolkit for analytic quasi-periodic SL(2,R) cocycles over
//! irrational torus translations: continued-fraction arithmetic, truncated
//! Fourier series on tori, sl(2,R)/su(1,1) normal forms, structure-preserving
//! flow integration, cocycle diagnostics (rotation number, Lyapunov exponent,
//! hyperbolicity certificates), and the constructive local embedding of a
//! near-constant cocycle as the time-one map of a quasi-periodic linear flow.
//!
//! Conventions used throughout:
//! - angles and rotation numbers are measured in turns (full revolutions);
//! - tori have per-axis period 1 or 2; frequencies on period-2 axes are kept
//!   on the doubled integer lattice and weighted by their physical magnitude;
//! - analytic norms are coefficient sums weighted by `exp(2*pi*|k|*h)`.

pub mod acceptance;
pub mod algebra;
pub mod arithmetic;
pub mod cocycles;
pub mod embedding;
pub mod error;
pub mod flows;
pub mod fourier;
pub mod instances;
pub mod mat2;
pub(crate) mod quadrature;

pub use error::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Schema tag stamped on every JSON document emitted by this workspace.
pub const SCHEMA: &str = "qpembed/1";
