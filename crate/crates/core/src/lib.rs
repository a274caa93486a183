//! Graph-level toolkit for squeezing large diffusion models onto mobile
//! GPU delegates.
//!
//! The crate provides a small NHWC tensor IR ([`graph`]), a reference
//! interpreter with bit-accurate binary16 emulation ([`interp`]), the
//! delegation-enabling rewrites ([`passes`]), a delegate partition and cost
//! simulator ([`delegation`]), weight compression ([`compression`]), a
//! memory-budgeted component scheduler ([`schedule`]) and deterministic demo
//! graphs ([`demo`]).

pub mod compression;
pub mod delegation;
pub mod demo;
pub mod error;
pub mod f16;
pub mod graph;
pub mod interp;
pub mod passes;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Node, Op, Padding};
pub use tensor::{DType, Tensor};
