//! IO, file formats, the external embedder, a worker pool and the CLI around
//! [`voxify_core`].

pub mod cli;
pub mod config;
pub mod embedder;
pub mod formats;
pub mod meshio;
pub mod pipeline;
pub mod pool;

pub use voxify_core as core;
