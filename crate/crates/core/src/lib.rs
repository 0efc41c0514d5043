//! Tabular MDPs, discrete causal adjustment, exact converged partial models
//! and a stochastic MiniPacman.

pub mod bears;
pub mod causal;
pub mod dist;
pub mod error;
pub mod exact;
pub mod mdp;
pub mod minipacman;
pub mod stats;

pub use error::{Error, Result};
