//! Core algorithms for turning a colored triangle mesh into palette-constrained
//! voxel art.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. It contains:
//!
//! - [`geometry`]: meshes, orthographic cameras and a z-buffered rasterizer.
//! - [`pixelart`]: per-cell pixel-art supervision images.
//! - [`palette`]: five palette extraction strategies.
//! - [`voxgrid`]: density / color / logit grids and exact ray-grid traversal.
//! - [`render`]: emission-absorption volume rendering with an analytic adjoint.
//! - [`quantizer`]: Gumbel-Softmax color selection and temperature schedules.
//! - [`losses`]: every training objective with its gradient.
//! - [`embed`]: a deterministic differentiable patch embedder.
//! - [`train`]: the two optimization stages.
//! - [`export`]: final quantization of the trained grids.
//! - [`gradcheck`]: finite-difference suites for the full render path.
//!
//! File formats, mesh loading, the external embedder process and the CLI live
//! in the `voxify` crate.
#![no_std]
// `Float` supplies float math without std; when std is linked its inherent
// methods shadow it.
#![allow(unused_imports)]

extern crate alloc;

pub mod embed;
pub mod export;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod optim;
pub mod palette;
pub mod pixelart;
pub mod quantizer;
pub mod render;
pub mod train;
pub mod voxgrid;

pub use math::{Aabb, Real, Rgb, Vec3};
