//! Guide chapters, compiled so their snippets run under `cargo test`.
//!
//! Each chapter of `book/src` is the documentation of one module below.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/log-format.md")]
pub mod log_format {}
#[doc = include_str!("../../../book/src/synchronization.md")]
pub mod synchronization {}
#[doc = include_str!("../../../book/src/windowing.md")]
pub mod windowing {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/realtime.md")]
pub mod realtime {}
#[doc = include_str!("../../../book/src/scheduling.md")]
pub mod scheduling {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
