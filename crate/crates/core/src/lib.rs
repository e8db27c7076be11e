//! Brain and language-model alignment analyses.
//!
//! Encoding models map per-layer word features of a language model onto
//! fMRI responses; the group statistics, cortical maps, intrinsic dimension
//! and surprisal modules summarize the results across subjects, layers and
//! languages. The guide in `book/` walks through each stage.

pub mod design;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod groupstats;
pub mod io;
pub mod maps;
pub mod rng;
pub mod simulate;
pub mod surprisal;

pub use error::{Error, ErrorClass, Result};
/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/formats.md")]
    pub mod formats {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/design.md")]
    pub mod design {}
    #[doc = include_str!("../../../book/src/encoding.md")]
    pub mod encoding {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    pub mod statistics {}
    #[doc = include_str!("../../../book/src/maps.md")]
    pub mod maps {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub mod geometry {}
    #[doc = include_str!("../../../book/src/surprisal.md")]
    pub mod surprisal {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    pub mod reproducibility {}
}
