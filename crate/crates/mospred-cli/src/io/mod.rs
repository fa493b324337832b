//! On-disk formats: ratings CSV, binary feature sequences, checkpoints,
//! latent sidecars, and report documents.

pub mod checkpoint;
pub mod corpus_dir;
pub mod features;
pub mod latent;
pub mod ratings;
pub mod report;
