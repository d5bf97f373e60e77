//! Expectation propagation (EP) and assumed-density filtering (ADF) as a
//! moment-matching engine over Gaussian and fully factorized discrete
//! families.
//!
//! The crate is organised by capability:
//!
//! * [`gaussian`] – spherical and full-covariance Gaussians, sites in natural
//!   parameters, and the stable scalar special functions (probit, Mills ratio).
//! * [`engine`] – the generic ADF/EP driver, damping, and the fixed-point
//!   energy diagnostics.
//! * [`clutter`] – the Gaussian-in-clutter mean estimation problem.
//! * [`bpm`] – the linear Bayes point machine with probit sites.
//! * [`factor_graph`] – discrete networks, Boyen–Koller ADF and loopy belief
//!   propagation as EP with a disconnected family.
//! * [`oracles`] – brute-force ground truth: mixture enumeration, adaptive
//!   quadrature, importance sampling and exhaustive discrete enumeration.
//! * [`harness`] – experiment runners that emit CSV result tables.
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory (`cargo run --example clutter_adf_vs_ep`, ...).

pub mod bpm;
pub mod clutter;
pub mod engine;
pub mod error;
pub mod factor_graph;
pub mod gaussian;
pub mod harness;
pub mod oracles;

pub use error::{Error, Result};
