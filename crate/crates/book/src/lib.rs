//! Code listings of the guide in `book/`, compiled and run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quantization.md")]
pub mod quantization {}
#[doc = include_str!("../../../book/src/rule_tables.md")]
pub mod rule_tables {}
#[doc = include_str!("../../../book/src/fitness.md")]
pub mod fitness {}
#[doc = include_str!("../../../book/src/evolution.md")]
pub mod evolution {}
#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine {}
#[doc = include_str!("../../../book/src/kalman.md")]
pub mod kalman {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
