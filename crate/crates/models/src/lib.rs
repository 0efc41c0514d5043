//! Learned partial models, planners and Dyna-style policy learning.

pub mod checkpoint;
pub mod clustering;
pub mod dyna;
pub mod error;
pub mod gradcheck;
pub mod minipacman;
pub mod model;
pub mod nn;
pub mod planner;
pub mod simulate;
pub mod tables;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
