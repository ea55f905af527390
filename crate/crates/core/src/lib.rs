//! Occupancy, condition-map rendering and conditioning primitives for
//! 4D-conditioned video world models.

pub mod actionprep;
pub mod camalign;
pub mod condmath;
pub mod error;
pub mod geometry;
pub mod io;
pub mod labelspace;
pub mod metrics;
pub mod occupancy;
pub mod renderer;

pub use error::{Error, Result};
