//! The guide's chapters, compiled so `cargo test` runs their listings.
//!
//! mdbook cannot test listings that depend on workspace crates, so each
//! chapter becomes the documentation of an empty module here and rustdoc
//! runs its code blocks as doctests. A failing doctest names the module,
//! which names the chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/scenes.md")]
pub mod scenes {}
#[doc = include_str!("../../../book/src/distributions.md")]
pub mod distributions {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
