//! Gaussian splatting jointly optimized with a hash-grid radiance field.
//!
//! The field supplies splat positions (harvesting from expected depth),
//! view-dependent splat colors, and virtual supervision views; the splats are
//! rendered by a differentiable tile rasterizer.

pub mod geometry;
pub mod densify;
pub mod field;
pub mod io;
pub mod raster;
pub mod train;
pub mod warp;
