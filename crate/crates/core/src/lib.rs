//! Multi-modal (LiDAR + mmWave radar) UAV trajectory prediction.
//!
//! The pipeline runs: session ingestion and nearest-time alignment
//! ([`data_model`]), LiDAR-360 drone-cluster isolation with HDBSCAN and an LSTM
//! classifier ([`clustering`], [`preprocess`]), twin point encoders with
//! channel attention feeding bidirectional cross-attention ([`model`]),
//! Smooth-L1 training ([`training`]), and trajectory post-processing with
//! RMSE metrics ([`postprocess`]). A constant-velocity Kalman tracker
//! ([`kalman`]) serves as the baseline and [`synth`] generates sessions.

pub mod clustering;
pub mod config;
pub mod data_model;
pub mod kalman;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
pub mod preprocess;
pub mod synth;
pub mod training;

pub use data_model::{AlignedSample, Point3, SensorKind, TimedFrame, TruthSample};


