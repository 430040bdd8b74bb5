//! Virtual-view toolkit for monocular 3D object detection.
//!
//! The crate covers the geometry that turns one camera image into a sweep of
//! depth-normalized virtual views, the box coding used by a single-stage
//! detection head, rotated overlap measures and the KITTI evaluation protocol.
//! Trained network weights are not needed: [`pipeline::OracleDetector`] stands
//! in for the network so the whole chain can be exercised end to end.

pub mod camera;
pub mod classes;
pub mod par;
pub mod raster;
pub mod viewport;
pub mod overlap;
pub mod codec;
pub mod kitti;
pub mod synth;
pub mod eval;
pub mod pipeline;
pub mod config;
