//! Identification of nonlinear normal modes from broadband input/output data.
//!
//! The crate covers the full chain: a finite-element beam with grounded
//! nonlinear springs ([`model`]), periodic multisine and stepped-sine forcing
//! ([`excitation`]), nonlinear Newmark simulation with decimation and noise
//! ([`simulate`]), frequency-domain nonlinear subspace identification
//! ([`fnsi`]), conversion to an undamped modal model ([`modal`]), shooting
//! with pseudo-arclength continuation ([`continuation`]) and a virtual
//! phase-resonance test ([`phaseres`]). [`pipeline`] chains identification
//! from a measured record to the modal model.

pub mod continuation;
pub mod dsp;
pub mod error;
pub mod excitation;
pub mod fnsi;
pub mod linalg;
pub mod modal;
pub mod model;
pub mod phaseres;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
