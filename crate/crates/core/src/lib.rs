//! Subband speech enhancement with interactive subband modules.
//!
//! The guide in `book/` walks through the pipeline; its snippets run as doc tests.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod subband;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stft.md")]
    mod stft {}
    #[doc = include_str!("../../../book/src/subband.md")]
    mod subband {}
    #[doc = include_str!("../../../book/src/subinter.md")]
    mod subinter {}
    #[doc = include_str!("../../../book/src/cirm.md")]
    mod cirm {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
