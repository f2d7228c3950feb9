//! The `book/` chapters, compiled here so their examples run as doc-tests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/robust-inner.md")]
pub mod robust_inner {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/rmab.md")]
pub mod rmab {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
