//! Online BEV map learning on synthetic scenes: camera and LiDAR encoders,
//! a dense BEV decoder, vectorization into polylines, and IoU/Chamfer/AP
//! evaluation.

pub mod bevnet;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod map;
pub mod metrics;
pub mod numerics;
pub mod pillars;
pub mod presets;
pub mod raster;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
