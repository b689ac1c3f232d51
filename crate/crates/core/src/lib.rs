//! Multi-resolution looped transformers.
//!
//! A looped model runs one shared core block several times. Here each pass
//! runs at its own temporal resolution: token states are pooled into chunks,
//! the core processes the shorter chunk sequence, and the result is spread
//! back to tokens, shifted right so no token sees its own chunk's future.
//!
//! ```
//! use mrloop::{parse_allocation, Model, ModelConfig};
//!
//! let config = ModelConfig::new(parse_allocation("1+1×{1/4,1/2,1}+1").unwrap())
//!     .with_dims(32, 4, 64);
//! let model = Model::new(config, 0).unwrap();
//! let out = model.forward(&[1, 2, 3, 4, 5, 6, 7, 8], false).unwrap();
//! assert_eq!(out.h_out.shape(), (8, 32));
//! assert_eq!(out.loop_lengths, vec![2, 4, 8]);
//! ```

pub mod analysis;
pub mod config;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod resolution;
pub mod tensor;
pub mod topology;
pub mod transformer;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/resolution.md")]
    mod resolution {}
    #[doc = include_str!("../../../book/src/topology.md")]
    mod topology {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/causality.md")]
    mod causality {}
    #[doc = include_str!("../../../book/src/probes.md")]
    mod probes {}
    #[doc = include_str!("../../../book/src/cost.md")]
    mod cost {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

pub use config::{parse_allocation, Allocation, ModelConfig, Resolution, RopePositions};
pub use decoder::{generate, trigger_positions, DecodeState};
pub use engine::{forward, init_weights, ForwardOutput, Model, Weights};
pub use error::{Error, Result};
pub use resolution::{ChunkMap, DownscaleMode, MeanDivisor, UpscaleMode};
pub use tensor::{Matrix, Precision};
pub use topology::Topology;
