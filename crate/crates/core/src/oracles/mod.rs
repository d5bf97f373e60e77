//! Brute-force ground truth for the analytic code paths.
//!
//! Everything here is deliberately computed by a different route from the
//! inference code: enumeration, numerical integration, or sampling.

mod enumeration;
mod exact_clutter;
mod quadrature;
mod sampling;

pub use enumeration::{enumerate_discrete, DiscreteExact, MAX_JOINT_STATES};
pub use exact_clutter::{exact_clutter, exact_clutter_components, ClutterComponent, ExactPosteriorSummary, MAX_EXACT_OBSERVATIONS};
pub use quadrature::{
    bpm_tilted_quadrature, clutter_tilted_quadrature, integrate, tilted_moments_quadrature,
    tilted_moments_quadrature_with, QuadratureOptions, TiltedMoments,
};
pub use sampling::{importance_sampler, ImportanceEstimate, SampleEstimate};
