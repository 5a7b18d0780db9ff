//! Open-vocabulary panoptic segmentation of LiDAR voxels fused with frozen
//! per-pixel vision embeddings.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command line
//! and threading live in the companion `ovpano` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assign;
pub mod checks;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod sample;
pub mod scene;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
