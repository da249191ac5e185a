//! Implicit wearable-user authentication from blood-oxygen saturation (SpO2)
//! and heart-rate (HR) streams.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`ingest`]: parse per-subject CSV files, drop invalid samples, resolve
//!   each subject's maximum heart rate.
//! - [`windowing`]: tag samples with heart-rate zones and cut 10-sample windows.
//! - [`features`]: 21 statistical features per signal plus the window zone.
//! - [`stats`]: Welch t-tests of mean SpO2 between subjects, per zone.
//! - [`selection`]: correlation filter followed by PCA, K-best or low-variance
//!   selection.
//! - [`classifiers`]: random forest, k-NN, Gaussian naive Bayes, SVM and
//!   one-class SVM.
//! - [`evaluation`]: one-valid-user protocol, metrics, radar-polygon area.
//! - [`synth`]: seeded synthetic cohorts standing in for recorded data.

pub mod classifiers;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod selection;
pub mod stats;
pub mod synth;
pub mod windowing;

pub use error::{Error, Result};
