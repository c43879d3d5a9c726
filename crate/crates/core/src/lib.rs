//! Rank-(r1, r2) Hadamard decompositions `X ≈ (W1 H1ᵀ) ∘ (W2 H2ᵀ)`.

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod extrapolation;
pub mod factors;
pub mod grad;
pub mod init;
pub mod io;
pub mod manifold;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod solver;
pub mod svd;
pub mod synthetic;

pub use baselines::{bcd, scaled_gd};
pub use error::{Error, Result};
pub use factors::HadamardFactors;
pub use init::{initialize, InitKind};
pub use matrix::{face_split, factored_error, hadamard, CsrMatrix, MatrixHandle};
pub use solver::{manbcd, projbcd, rgd_standard, RunRecord, SolverConfig, StopReason};
pub use svd::{tsvd, SvdTriple};
pub use synthetic::{gen_synthetic, SyntheticKind};
