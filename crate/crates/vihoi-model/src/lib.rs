//! Conditional HOI motion diffusion: a frozen toy multimodal encoder with
//! layer-indexed access, Q-Former prior adapters, a transformer denoiser with
//! a DDPM schedule, and the evaluation metric battery.

pub mod backend;
pub mod checkpoint;
pub mod denoiser;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod evaluator;
pub mod metrics;
pub mod nn;
pub mod prompts;
pub mod qformer;
pub mod schedule;
pub mod tokenizer;

pub use error::{Error, Result};
