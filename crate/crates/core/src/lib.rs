//! Learning the dissipative operator and free-energy density of a 1D
//! Arrhenius lattice gas from short-time stochastic simulations, with
//! epistemic uncertainty, and integrating the learned gradient flow.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation;
//! file formats, the command line and thread-level parallelism live in the
//! companion `gradflow-cli` crate.
//!
//! Module map:
//!
//! | module       | contents                                                      |
//! |--------------|---------------------------------------------------------------|
//! | [`lattice`]  | BKL kinetic Monte Carlo and the exact master-equation oracle  |
//! | [`fe`]       | finite-element projection, fluctuation estimator, datasets    |
//! | [`nn`]       | dense MLPs with exact parameter/input gradients, Adam         |
//! | [`diffusion`]| variance schedules, DDPM/DDIM updates, strided sampling       |
//! | [`models`]   | the conditional K1 and free-energy models, operator assembly  |
//! | [`epinet`]   | epistemic augmentation and distillation training              |
//! | [`continuum`]| RK4 integration of the learned flow and ensemble statistics   |
//! | [`lrm`]      | the analytic long-range continuum model                       |
//! | [`metrics`]  | relative L2 error and interval coverage                       |
#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod continuum;
pub mod diffusion;
pub mod epinet;
pub mod error;
pub mod fe;
pub mod lattice;
pub mod linalg;
pub mod lrm;
pub mod math;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
