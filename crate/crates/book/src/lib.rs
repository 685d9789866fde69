// mdbook can't run snippets that depend on a workspace crate, so each
// chapter becomes the doc comment of an empty module and `cargo test --doc`
// runs them instead.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/excursions.md")]
pub mod excursions {}
#[doc = include_str!("../../../book/src/likelihood.md")]
pub mod likelihood {}
#[doc = include_str!("../../../book/src/drifts.md")]
pub mod drifts {}
#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
