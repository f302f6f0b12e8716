//! Weakly supervised video anomaly scoring on precomputed clip features.
//!
//! The network amplifies features with their own magnitudes, attends
//! globally across clips (glance), refines channels locally (focus), and is
//! trained with a magnitude-contrastive objective on top-k clip magnitudes.

pub mod error;
pub mod fam;
pub mod focus;
pub mod glance;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod synthgen;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
