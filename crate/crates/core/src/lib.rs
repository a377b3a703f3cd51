//! Binaural personal-sound-zone filter design.
//!
//! The crate synthesises acoustic transfer functions for a loudspeaker array
//! and two listeners (image-source room model, piston directivity, rigid-sphere
//! heads), trains a pose-conditioned network that emits per-loudspeaker
//! filters for four program channels, and scores the result with inter-zone,
//! inter-program and crosstalk-cancellation metrics.

pub mod acoustic;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod nn;
pub mod par;
pub mod room;
pub mod specfun;
pub mod spectral;
pub mod training;

pub use error::{BsannError, Result};
