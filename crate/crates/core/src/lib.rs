//! Boundary-aware two-stage detection at desk scale.
//!
//! A proposal is classified and regressed by an ensemble of sub-networks: one
//! for the proposal itself and one per boundary-context region around it
//! (four sides, four vertices, an inner and an outer region). The crate holds
//! everything needed to train and study such a head from scratch:
//!
//! - [`tensor`]: dense tensors, conv/FC/concat kernels, a reverse-mode tape,
//!   finite-difference checks and checkpoints
//! - [`geometry`]: boxes, context regions, IoU, NMS, box regression
//! - [`pooling`]: RoI max pooling and position-sensitive RoI pooling
//! - [`head`]: the context-ensemble head and contribution analysis
//! - [`training`]: losses, labeling, OHEM, SGD, proposals and the training loop
//! - [`data`]: synthetic shapes datasets, PPM/CSV I/O and the detector runner
//! - [`eval`]: VOC- and COCO-style average precision
//! - [`config`] and [`commands`]: the key=value run configuration and the
//!   operations behind the `ban` binary

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod model;
pub mod pooling;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
