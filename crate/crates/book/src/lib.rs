//! mdbook cannot run listings that depend on workspace crates, so every
//! chapter is pulled in here and `cargo test --doc` checks it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ink.md")]
pub mod ink {}
#[doc = include_str!("../../../book/src/signatures.md")]
pub mod signatures {}
#[doc = include_str!("../../../book/src/discriminator.md")]
pub mod discriminator {}
#[doc = include_str!("../../../book/src/generators.md")]
pub mod generators {}
#[doc = include_str!("../../../book/src/adversarial.md")]
pub mod adversarial {}
#[doc = include_str!("../../../book/src/checkpoints.md")]
pub mod checkpoints {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
