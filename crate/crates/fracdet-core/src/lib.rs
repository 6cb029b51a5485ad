//! Dense-tensor engine with reverse-mode autodiff, plus the Dual-Focus
//! Attention block, the Multi-scale Calibration head, complexity accounting,
//! and a desk-scale synthetic-fracture detector built on top of them.
//!
//! Everything in this crate is pure computation over row-major `f64` buffers:
//! no IO, no threads, no platform-dependent math (transcendentals are routed
//! through `libm` so identical seeds give bit-identical results everywhere).
//! File formats and the CLI live in the companion `fracdet-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod complexity;
pub mod detector;
pub mod dfa;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod math;
pub mod mc;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckResult};
pub use graph::{Gradients, Graph, NodeId};
pub use rng::Rng;
pub use tensor::Tensor;
