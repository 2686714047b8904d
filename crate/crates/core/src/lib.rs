//! Differential Bayesian neural nets.
//!
//! A neural SDE on activation maps whose drift and diffusion are both
//! Bayesian MLPs. Inputs enter as the initial state `h(0) = x`, the state is
//! pushed through Euler-Maruyama paths for a flow time `T`, and the terminal
//! states feed a Gaussian likelihood. The marginal over paths is estimated by
//! Monte Carlo (the simulated likelihood) and the weight posterior is sampled
//! with SGLD under a halving step-size schedule.
//!
//! The crate is `no_std` + `alloc`. File formats, configuration and the CLI
//! live in the `dbnn` crate.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod grad;
pub mod likelihood;
pub mod math;
pub mod nets;
pub mod params;
pub mod predict;
pub mod rng;
pub mod sde;
pub mod sgld;

pub use error::{Error, Result};
pub use grad::{Graph, NodeId, Shape};
pub use nets::{ArchSpec, DbnnArch, DiffusionForm, InitSpec, MlpSpec};
pub use params::{BlockId, BlockKind, ParamLayout, ParamSet};
pub use sde::{SdeConfig, WienerNoise};
pub use sgld::{PosteriorSamples, SgldConfig};
