//! Numerical observability analysis for visual- and lidar-inertial navigation.

pub mod battery;
pub mod dynamics;
pub mod error;
pub mod jet;
pub mod lie;
pub mod observability;
pub mod ocvins;
pub mod scenario;
pub mod state;

pub use error::{Error, Result};
