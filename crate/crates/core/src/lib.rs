//! Simulation and verification primitives for central limit behaviour of
//! martingale difference sequences.
//!
//! The crate provides four built-in difference families with tracked
//! conditional moments ([`family`]), exact Wasserstein-1 and Kolmogorov
//! distances from discrete laws to the standard normal ([`distance`]), a
//! variance-completion construction that extends a stopped path to total
//! conditional variance exactly `s_n^2` ([`completion`]), and evaluations of
//! the normal-approximation bound kernels the experiments compare against
//! ([`bounds`]). All randomness flows through counter-based streams
//! ([`stream`]), so every result is reproducible from one master seed.

pub mod bounds;
pub mod completion;
pub mod distance;
pub mod family;
pub mod normal;
pub mod stream;
