//! Image-guided radar point densification.
//!
//! Raw 4D radar points are projected into the camera image, the ones that
//! fall on instance masks become foreground points, and new points are
//! sampled inside each mask: Gaussian around foreground points, uniform
//! elsewhere in the mask. Generated points inherit depth, physical features
//! and class from the nearest foreground point and are back-projected to
//! the radar frame. The resulting hybrid set can be encoded three ways and
//! averaged into a BEV pillar grid. [`dsm`] carries the forward math of the
//! dual-sync radar/image fusion block.
//!
//! | module       | what it does                                          |
//! |--------------|-------------------------------------------------------|
//! | [`geometry`] | radar ↔ camera ↔ pixel transforms, calibration files  |
//! | [`masks`]    | instance mask rasters (PGM + JSON class map)          |
//! | [`rhgm`]     | foreground selection, hybrid sampling, attribute copy |
//! | [`points`]   | raw / hybrid point CSV formats                        |
//! | [`encoding`] | concat / differentiable / separate encodings, pillars |
//! | [`dsm`]      | convolution, spatial & modality sync, focal loss      |
//! | [`synth`]    | seeded synthetic scenes with DOA error                |
//! | [`cli`]      | batch commands behind the `hybridgen` binary          |
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod cli;
pub mod dsm;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod masks;
pub mod points;
pub mod rhgm;
pub mod synth;

pub use error::{Error, Result};
