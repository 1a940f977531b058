//! Low-rank tensor completion by simultaneous low-rank matrix factorization
//! of every mode-n unfolding, with fixed, decreasing, or increasing factor
//! ranks, plus matrix-completion baselines, synthetic problem generators,
//! and a phase-diagram harness.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{relerr, DenseTensor, Matrix, ObservationSet};
