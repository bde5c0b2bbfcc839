//! Forward-pass Conformer and Fast Conformer speech encoders.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense f32 tensors and the primitives the encoder needs, each
//!   reporting multiply-accumulates into a [`tensor::MacCounter`].
//! - [`attention`]: full relative-position attention, sliding-window attention
//!   over overlapping chunks, and sliding-window attention with a global token.
//! - [`encoder`]: subsampling schemas, Conformer blocks, the A0–A4 presets,
//!   weight initialisation and the `FCWT` weight container.
//! - [`profiler`]: closed-form parameter / MAC / memory accounting, reference
//!   schema profiles, CTC length feasibility and maximum-duration estimates.
//! - [`longform`]: buffer planning, buffered encoding, greedy CTC decoding,
//!   utterance concatenation and the `FCFT` feature container.

pub mod attention;
pub mod encoder;
pub mod error;
pub mod longform;
pub mod profiler;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{MacCounter, Tensor};
