//! Neural-network weight steganography and the permutation defense against it.
//!
//! This crate is `no_std` and only needs `alloc`. It holds the data model
//! and checkpoint codec, a small deterministic inference/training engine, the
//! LSB and spread-spectrum embedding schemes, the defenses (channel
//! permutation with hooks, cascaded permutation, magnitude pruning and
//! retraining), and the integrity metrics. File IO, the CLI and the
//! experiment harness live in the `nnperm` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod defense;
pub mod metrics;
pub mod nn;
pub mod permutation;
pub mod rng;
pub mod stego;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use tensor::{flatten_view, Position, StateDict, Tensor};
