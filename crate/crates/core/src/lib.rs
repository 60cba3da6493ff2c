//! Physics and learning core for probing how much lensless-imaging physics a
//! learned phase-retrieval network has absorbed.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure function
//! of its inputs; file formats, the CLI, and orchestration live in the
//! `wotf-probe` companion crate.
//!
//! Module map:
//!
//! * [`optics`]: Fresnel forward model, weak-object linearization, WOTF.
//! * [`datasets`]: 8-bit images, Shannon entropy, entropy-controlled generators.
//! * [`nn`]: tensors, a reverse-mode encoder-decoder, NPCC loss, Adam, training.
//! * [`recon`]: regularized WOTF inverse and affine-corrected network reconstruction.
//! * [`diagnostics`]: learned-WOTF extraction and star-pattern null tests.
//! * [`registration`]: NMI affine registration with a Nelder-Mead simplex.
//! * [`evaluation`]: PCC/MAE scoring and the cross-domain score table.
#![no_std]
#![warn(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datasets;
pub mod diagnostics;
pub mod evaluation;
pub mod fft;
pub mod grid;
pub mod nn;
pub mod optics;
pub mod recon;
pub mod registration;
pub mod rng;

mod error;

pub use error::{Error, Result};
pub use grid::{Grid, IntensityMap, PhaseMap};
pub use optics::OpticalConfig;
