//! Multi-camera instance association.
//!
//! The crate is organized around the stages of a cross-view association run:
//!
//! * [`scene`]: cameras, boxes, views, embedding tables and their file formats.
//! * [`geometry`]: pinhole projection, fundamental matrices, plane homographies.
//! * [`descriptors`]: feature vectors, distances, zoom-out crops and VBoW encoding.
//! * [`association`]: distance matrices, fusion, epipolar penalty, Kuhn-Munkres.
//! * [`metrics`]: AP, FPR at a recall target, IPAA and angle-binned reports.
//! * [`synth`]: a deterministic tabletop simulator with ground truth.

pub mod association;
pub mod descriptors;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
