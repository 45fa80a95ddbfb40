//! Certified transfer-operator computations for one-dimensional maps
//! perturbed by additive bounded-variation noise.
//!
//! The pipeline: assemble an interval enclosure of the Ulam-projected
//! transfer operator ([`ulam`]), compose it with the reflecting-boundary
//! noise step ([`noise`]), certify a contraction rate on zero-average
//! densities ([`contraction`]) — transferable across resolutions and noise
//! amplitudes — compute the stationary density with a certified L1 error
//! ([`certify`]), integrate the expansion observable against it
//! ([`observable`]), and derive quantitative stability constants
//! ([`stability`]). [`sweep`] drives the whole chain over a list of noise
//! amplitudes and is exposed by the `ulamcert` binary.
//!
//! See the crate examples for one runnable program per capability.

pub mod contraction;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod interval;
pub mod certify;
pub mod noise;
pub mod observable;
pub mod stability;
pub mod sweep;
pub mod ulam;

pub use error::Error;
pub use interval::IntervalScalar;
