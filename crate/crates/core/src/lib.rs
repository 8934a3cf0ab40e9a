//! Numerical laboratory for two-photon speckle.
//!
//! Spatially entangled photon pairs from a thin SPDC crystal are sent through
//! a thin random phase diffuser in one of two imaging configurations, detected
//! on simulated photon-counting cameras, and analyzed by twin-image
//! cross-correlation.
//!
//! * [`grid`]: sampled fields and centered unitary transforms.
//! * [`diffuser`]: random phase screens and coherent laser speckle.
//! * [`spdc`]: stochastic twin fields in the symmetric-ordering representation.
//! * [`optics`]: the far-field (A) and near-field (B) detection geometries.
//! * [`oracle`]: closed-form biphoton wavefunction and correlation function.
//! * [`pairs`]: photon-pair emission sampler producing twin frames.
//! * [`emccd`]: thresholded photon-counting camera model.
//! * [`correlator`]: cross-correlation analysis and entanglement metrics.

pub mod config;
pub mod correlator;
pub mod diffuser;
pub mod emccd;
pub mod error;
pub mod exec;
pub mod fstack;
pub mod grid;
pub mod image;
pub mod optics;
pub mod pipeline;
pub mod pairs;
pub mod oracle;
pub mod rng;
pub mod spdc;

pub use error::{Error, Result};
