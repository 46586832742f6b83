//! Adversarial attack toolkit: tabular boundary-point oversampling against
//! tree ensembles, and GradCAM-masked gradient attacks against a CNN face
//! recognizer, with before/after evaluation reports.

pub mod attacks;
pub mod metrics;
pub mod oversample;
pub mod tabular;
pub mod tensor;
pub mod trees;
pub mod vision;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
