//! Camera geometry, warped positional encodings, block-sparse attention,
//! memory retrieval, data curation, a small video diffusion transformer and
//! evaluation metrics for memory-conditioned camera-controlled video
//! generation.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only switches on
//! faster GEMM kernels and `std::error::Error` impls.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attention;
pub mod curation;
pub mod diffusion;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod linalg;
pub mod memory;
pub mod nn;
pub mod pe_warp;
pub mod rng;
