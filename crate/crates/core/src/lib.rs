//! Analysis and improvement of multi-modal embeddings on the unit hypersphere.
//!
//! Everything operates on L2-normalized embedding rows. The crate provides:
//!
//! - [`sphere`]: unit vectors, batches, geodesic (slerp) and linear mixup;
//! - [`metrics`]: relative alignment, uniformity, modality gap, retrieval
//!   recall, calibration (ECE), hard-negative diagnostics, embedding
//!   arithmetic;
//! - [`losses`]: the CLIP contrastive loss and its geodesic-mixup variants
//!   (m2-Mix, V/L/VL-Mix, combined m3-Mix) with closed-form gradients;
//! - [`vmf`]: von Mises-Fisher machinery on the circle (Bessel functions,
//!   sampling, KL divergences) for validating the hardness guarantee of
//!   mixed negatives;
//! - [`synth`]: a synthetic bipartite-embedding generator reproducing the
//!   modality-gap geometry of image/text encoders;
//! - [`trainer`]: projection-head fine-tuning over frozen embeddings with
//!   Adam and finite-difference gradient checking.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature is only needed by downstream IO.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod error;
pub mod grad;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod sphere;
pub mod synth;
pub mod trainer;
pub mod vmf;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use sphere::{EmbeddingBatch, MixRatio, UnitVector};
pub use metrics::PairedEmbeddings;
