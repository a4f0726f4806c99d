//! Exact conditional tests for a group of coefficients `H: beta_{1:k} = 0`
//! in a Gaussian linear model.

pub mod classic;
pub mod error;
pub mod ltest;
pub mod mcfree;
pub mod model;
pub mod mtp;
pub mod outcome;
pub mod quadrature;
pub mod simlab;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
pub use model::{build_model, sufficient_state, Design, ModelContext, SufficientState};
pub use outcome::{Method, OutcomeMeta, TestOutcome};
pub use solver::{GroupLassoFit, TuningChoice};

/// Version of this crate, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
