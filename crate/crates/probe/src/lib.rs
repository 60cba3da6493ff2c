//! Files, orchestration, and the command-line front end for `wotf-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod output;
pub mod pipeline;

pub use error::{ProbeError, Result};
