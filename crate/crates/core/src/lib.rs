//! Harmonically weighted multi-task loss for 3D object detection, with exact
//! analytic gradients, rotated-box geometry, a KITTI-style evaluation toolkit
//! and a seeded synthetic detection benchmark.

pub mod analysis;
pub mod config;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod kitti;
pub mod losses;

pub use geometry::{bev_iou, decode_box, encode_box, iou_3d, wrap_angle, Box3d, BoxDelta, EncodingMode};
pub use losses::{
    baseline_grads, baseline_loss, harmonic_grads, harmonic_loss, GradRecord, HarmonicWeights,
    LossConfig, LossKind, LossSample, LossTerms, SmoothL1Form,
};
