//! Runs the code listings of the book as doc-tests. Each chapter gets its own
//! module so a failure points at the file it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/classical.md")]
pub mod classical {}
#[doc = include_str!("../../../book/src/quantum.md")]
pub mod quantum {}
#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
