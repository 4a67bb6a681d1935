//! Cross-modal alignment through a learnable knowledge bank.
//!
//! Two toy encoders map raw image features and report text into a shared
//! `d`-dimensional space. A bank of `K` learnable basis vectors reconstructs
//! features of both modalities through softmax attention; training minimises
//! a weighted sum of the reconstruction error, InfoNCE on the raw features and
//! InfoNCE on the reconstructions. Every backward pass is written by hand and
//! checked against central finite differences.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the remote
//! summarizer client and the command line live in the `xmalign` crate.

#![no_std]
// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cmki;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod synthdata;
pub mod textpipe;
pub mod trainer;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Which side of the image/text pair a vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}
