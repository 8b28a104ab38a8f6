//! Experiment harness: sweeps difference families over a grid of lengths,
//! measures distances to normal, evaluates every applicable bound kernel,
//! fits convergence rates, and checks the explicit-constant inequalities.

pub mod config;
pub mod experiment;
pub mod fit;
pub mod output;
