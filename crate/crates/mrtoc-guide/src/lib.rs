//! Compiles the book's chapters as Rust documentation so their code
//! blocks run under `cargo test --doc`. Each module below is one
//! chapter of `book/`; editing a chapter and forgetting to update the
//! library (or the other way round) fails this crate's doc-tests.
#![doc = include_str!("../../../book/src/intro.md")]

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/channel.md")]
pub mod channel {}

#[doc = include_str!("../../../book/src/codebook.md")]
pub mod codebook {}

#[doc = include_str!("../../../book/src/tape.md")]
pub mod tape {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
