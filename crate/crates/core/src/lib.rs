//! Distribution-free goodness-of-fit tests for parametric conditional
//! intensities of counting processes.
//!
//! The pipeline: fit a family by maximum likelihood, compensate the observed
//! path, map it through a chain of reflections onto the space of a fixed
//! homogeneous-Poisson target, and compare KS/CvM/AD functionals with a
//! simulated target null table.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod estimators;
pub mod gof;
pub mod hilbert;
pub mod io;
pub mod mcharness;
pub mod legendre;
pub mod models;
pub mod nulldist;
pub mod par;
pub mod path;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
pub use gof::{ProcessPath, StatTriple, Statistic, TestReport};
pub use nulldist::NullTable;
pub use models::{Censoring, Family, ModelSpec, ParamVector};
pub use path::ObservedPath;
