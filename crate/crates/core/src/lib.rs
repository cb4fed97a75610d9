//! Weight-trajectory recording and Mapper learning graphs.
//!
//! A small bias-free feedforward network is trained with SGD while the
//! incoming weight vector of every neuron is recorded at a fixed cadence.
//! Each layer's recordings form a point cloud that the Mapper pipeline
//! (filter, overlapping cover, per-preimage DBSCAN, nerve) turns into a
//! learning graph; [`analysis`] derives branch counts, branching times,
//! norm curves, confusion evolution and surface coordinate images from it.

pub mod analysis;
pub mod dataset;
pub mod export;
pub mod linalg;
pub mod mapper;
pub mod nn;
pub mod rng;
pub mod snapshot;

pub use dataset::{ImageSet, LabelSet, LabeledImages, PointCloud, PointTag};
pub use linalg::{Matrix, PcaBasis};
pub use mapper::{LearningGraph, MapperParams};
pub use nn::{InitScheme, Network, NetworkSpec, TrainConfig, TrainingLog, TrajectoryCloud};
