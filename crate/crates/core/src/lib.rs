//! Feature learning and rigid registration for 6D object pose estimation.
//!
//! The crate covers the full desk-scale pipeline: BOP-format and synthetic
//! data ingestion, voxel quantization, ground-truth correspondence mining
//! with safety-thresholded hardest-negative candidates, a per-point
//! embedding model with hand-derived backpropagation, the three-term
//! hardest contrastive loss, SGD/Adam/AdamW optimizers with exponential
//! and cosine schedules, training-time augmentations, RANSAC + Kabsch
//! registration, and the pose metric suite (ADD, ADD-S, ADD(S)-0.1d,
//! ADD-S AUC, RRE/RTE, FMR, detector deltas).

pub mod augment;
pub mod config;
pub mod data;
pub mod embed;
pub mod features;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod optim;
pub mod pipeline;
pub mod register;
pub mod seeding;
pub mod voxel;

pub use features::FeatureSet;
pub use geometry::{
    cloud_diameter, kabsch_fit, transform_cloud, NeighborIndex, PointCloud, RigidPose,
};
