//! Cryptographic primitive classification from dynamic traces.
//!
//! Each pipeline stage lives in its own module:
//!
//! - [`isa`]: a small deterministic instruction set with a textual assembly format.
//! - [`synth`]: procedural synthesis of labelled, obfuscated crypto programs.
//! - [`tracer`]: interpretation, basic-block carving and entropy scoring of memory writes.
//! - [`features`]: conversion of carved blocks into a variable-length sentence matrix.
//! - [`dcnn`]: a dynamic convolutional network (wide convolution, folding, dynamic k-max
//!   pooling) with hand-derived gradients, a training loop and random hyperparameter search.

pub mod dcnn;
pub mod features;
pub mod isa;
pub mod label;
pub mod rng;
pub mod synth;
pub mod tracer;

pub use label::ClassLabel;
