//! Repeated public-goods game: structural model, evolutionary dynamics and
//! the panel estimators used to look for regime bifurcation in contribution data.

pub mod adaptive;
pub mod backout;
pub mod calibration;
pub mod error;
pub mod glm;
pub mod iv;
pub mod moran;
pub mod numerics;
pub mod panel;
pub mod regime;
pub mod stage_game;

pub use error::{Error, Result};
