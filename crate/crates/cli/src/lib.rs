//! Library side of the `eaf` command-line tool: config parsing, file
//! formats and the four subcommands.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod manifest;
pub mod report;
pub mod training;
