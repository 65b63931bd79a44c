//! Command implementations behind the `vihoi` binary. Each subcommand reads
//! a plain-text run configuration, resolves every key it understands against
//! a recorded default, rejects leftovers, runs, validates its declared
//! outputs, and writes a `run.json` alongside them.

pub mod ablate;
pub mod config;
pub mod evaluate;
pub mod gen_data;
pub mod render;
pub mod runmeta;
pub mod sample;
pub mod setup;
pub mod sources;
pub mod train;
pub mod train_evaluator;
