//! Speaker-consistent speech-to-speech translation through discrete units.
pub mod audio_dsp;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod fusion;
pub mod nnet;
pub mod pipeline;
pub mod quantizer;
pub mod s2ut;
pub mod speaker;
pub mod trainer;
pub mod u2m;
pub use error::{Error, Result};
