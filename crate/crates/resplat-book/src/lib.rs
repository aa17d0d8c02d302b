//! Runs every Rust snippet in the guide (`book/`) as a doc-test, so the
//! book and the library cannot drift apart: `cargo test -p resplat-book`
//! fails whenever a chapter's example stops compiling or asserting.
//!
//! Each module embeds one chapter verbatim; the chapters are written for
//! mdbook, whose `rust` code fences and `#`-hidden lines mean the same
//! thing to rustdoc.

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/grids-and-affines.md")]
pub mod grids_and_affines {}

#[doc = include_str!("../../../book/src/pull-and-push.md")]
pub mod pull_and_push {}

#[doc = include_str!("../../../book/src/mean-space.md")]
pub mod mean_space {}

#[doc = include_str!("../../../book/src/pipelines.md")]
pub mod pipelines {}

#[doc = include_str!("../../../book/src/volume-files.md")]
pub mod volume_files {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
