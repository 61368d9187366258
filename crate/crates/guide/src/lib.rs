//! The book under `book/` is the narrative guide to `eraser-core`. mdbook
//! does not run chapter snippets against workspace dependencies, so each
//! chapter is also included here as rustdoc: `cargo test --doc -p
//! eraser-guide` compiles and executes every code block in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/waves.md")]
pub mod waves {}

#[doc = include_str!("../../../book/src/counting.md")]
pub mod counting {}

#[doc = include_str!("../../../book/src/trajectories.md")]
pub mod trajectories {}

#[doc = include_str!("../../../book/src/qubits.md")]
pub mod qubits {}

#[doc = include_str!("../../../book/src/checks.md")]
pub mod checks {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
