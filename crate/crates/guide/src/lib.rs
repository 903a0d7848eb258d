//! The book's chapters, compiled as documentation so `cargo test` runs
//! every listing in them. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/offline.md")]
pub mod offline {}
#[doc = include_str!("../../../book/src/generators.md")]
pub mod generators {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/learning_curves.md")]
pub mod learning_curves {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
