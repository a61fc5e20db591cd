//! Completion of sparse rating x tenor yield surfaces with thin plate splines
//! and denoising autoencoders.
//!
//! The guide in `book/` walks through each piece; its snippets run as
//! doc-tests of this crate.

pub mod corruption;
pub mod dae;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod surface;
pub mod tps;

pub use error::{Error, Result};

// Chapters of the guide, compiled so their snippets stay in sync.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/surfaces.md")]
    mod surfaces {}
    #[doc = include_str!("../../../book/src/tps.md")]
    mod tps {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/autoencoders.md")]
    mod autoencoders {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
