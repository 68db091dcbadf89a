//! Selective encryption of convolutional network weights.
//!
//! The pipeline has four stages. [`pss`] scores every weight of a layer by
//! optimizing relaxed removal gates ([`gates`]) and ranks the layer into
//! importance tiers. [`dprm`] masks the selected weights with a forward-secure
//! key stream and maps the result back onto the layer's Gaussian fit, so the
//! ciphertext looks like ordinary weights. [`permission`] hands out nested
//! credentials that unlock the first `m` tiers, and [`dprm::decrypt`] applies
//! them. [`attacks`] and [`analysis`] evaluate the protected model.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the command
//! line live in the `selcrypt` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod dprm;
pub mod error;
pub mod gates;
pub mod math;
pub mod nn;
pub mod permission;
pub mod pss;
pub mod tensor;

pub use error::{Error, Result};
pub use nn::{Dataset, Layer, LayerKind, Model, Target, Task};
pub use tensor::Tensor;
