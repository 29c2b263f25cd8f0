//! Dual-branch CNN-LSTM gait abnormality classification.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! * [`tensor`] — dense n-dimensional arrays and the deterministic numeric
//!   kernels (conv1d/conv3d, pooling, batch norm, activations).
//! * [`layers`] — differentiable layers with forward/backward contracts.
//! * [`models`] — the two branch architectures (1D joint branch, 3D
//!   silhouette branch) assembled from layers, plus checkpointing.
//! * [`datapipe`] — ingestion, preprocessing, augmentation, SMOTE,
//!   subject-independent splitting, and the seeded synthetic generator.
//! * [`training`] — losses, Adam, early stopping, metrics, the epoch loop,
//!   and random hyperparameter search.
//! * [`explain`] — Grad-CAM spatial maps and Shapley temporal attributions.
//!
//! All randomness flows from a single `u64` seed fanned out through
//! [`rng::subseed`], so every stage is reproducible in isolation.

pub mod datapipe;
pub mod error;
pub mod explain;
pub mod kv;
pub mod layers;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
