//! The book chapters, included verbatim so that `cargo test` runs their code.
#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/hinge-basis.md")]
pub mod hinge_basis {}

#[doc = include_str!("../../../book/src/lasso.md")]
pub mod lasso {}

#[doc = include_str!("../../../book/src/nuisances.md")]
pub mod nuisances {}

#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}

#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
