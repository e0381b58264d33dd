//! Library half of the `clmn` command: option handling and the pipeline
//! steps behind each subcommand.

pub mod cli;
pub mod settings;
pub mod workflow;
