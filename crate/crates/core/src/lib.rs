//! Delayed-feedback tracking control for linear plants.
//!
//! The controller combines a binomial delayed difference of the measured
//! state with an integral state whose dynamics carry an extra
//! `K2 (q(t) - q(t - τ_q))` term. This crate assembles the resulting delay
//! system, locates its rightmost characteristic roots, simulates it, tunes its
//! parameters by simulated annealing and predicts its steady-state behaviour
//! under polynomial references and disturbances.

pub mod analysis;
pub mod case_study;
pub mod error;
pub mod linalg;
pub mod model;
pub mod signal;
pub mod simulator;
pub mod spectrum;
pub mod tuner;

pub use error::{Error, Result};
pub use model::{
    binomial_weights, build_augmented, build_closed_loop, ClosedLoopDDE, DelayedFeedbackController, Plant,
};
pub use signal::{Signal, SignalPiece};
pub use spectrum::{rightmost_roots, SpectrumOptions, SpectrumResult};
