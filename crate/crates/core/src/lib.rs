//! Field-aware clustering compression for recommendation embedding tables.
//!
//! Large fields of an embedding model are replaced by a small codebook of
//! representative vectors plus a per-feature mask into it. The codebook is
//! found with k-means and then retrained with gradients averaged over the
//! members of each cluster.

pub mod clustering;
pub mod compression;
pub mod datagen;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod trainer;

pub use error::{Error, Result};
