//! Post-processing toolkit for debris-covered glacier outlines.
//!
//! Takes two binary ablation-zone segmentations (a single-network mask and a
//! fused-network mask), a DEM and multispectral bands, and produces refined
//! ablation outlines plus complete glacier outlines that include the
//! snow-covered accumulation zone.
//!
//! Module map:
//!
//! * [`grid`] raster model, ESRI ASCII / raw f32 I/O, resampling, tiling
//! * [`terrain`] DEM smoothing and geomorphometric layers
//! * [`hydro`] sink filling, D8 routing, accumulation, drainage basins
//! * [`spectral`] NDVI, snow index and a threshold baseline segmenter
//! * [`morphology`] binary components, hole filling, closing, rings
//! * [`terminus`] terminus detection and per-terminus KNN refinement
//! * [`scaz`] snow-covered accumulation zone estimation
//! * [`eval`] confusion counts and the six accuracy indices
//! * [`pipeline`] configuration and stage orchestration
//!
//! Cell-parallel kernels run on rayon when the `parallel` feature is enabled
//! (the default). Results never depend on the worker count.

pub mod error;
pub mod eval;
pub mod grid;
pub mod hydro;
pub mod morphology;
pub mod par;
pub mod pipeline;
pub mod scaz;
pub mod spectral;
pub mod synthetic;
pub mod terminus;
pub mod terrain;

pub use error::{Error, Result};
pub use grid::{Band, Georef, Grid, Labels, Mask, MultiBandStack};
