//! Unsupervised representation learning for 3D skeleton sequences, evaluated
//! on person re-identification.
//!
//! The pipeline masks random frames out of each training sequence, encodes
//! the surviving frames with a small MLP, pools them into subsequence
//! instances, clusters each sampling's instances with DBSCAN to obtain
//! pseudo-class prototypes, and optimizes a prototype-contrastive loss plus a
//! stop-gradient intra-sequence cosine loss. Probe sequences are matched to
//! the gallery by Euclidean distance over the unmasked pooled embeddings.

pub mod ablation;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod mat;
pub mod train;

pub use error::{Error, Result};
