//! Handwritten numeral string recognition by single-shot digit detection.
//!
//! Strings are treated as sets of objects: a miniature grid detector locates
//! and classifies every digit in one forward pass, and the reading is the
//! left-to-right sequence of surviving detections. The crate covers the whole
//! lifecycle: string synthesis from isolated digits, anchor clustering,
//! training, inference and error attribution.

pub mod anchors;
pub mod cli;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod net;
pub mod raster;

pub use error::{Error, Result};
pub use geometry::{iou, nms, BoundingBox, Detection, DigitAnnotation, DigitClass, StringSample};
pub use raster::GrayImage;
