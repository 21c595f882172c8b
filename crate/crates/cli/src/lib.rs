//! Library surface of the pipeline CLI, used by the binary and the
//! acceptance suite.

pub mod config;
pub mod io_util;
pub mod pipeline;
pub mod synth;
