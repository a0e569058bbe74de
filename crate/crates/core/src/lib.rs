//! Infinite Class Mixup: training objectives that interpolate classifiers
//! rather than labels, the standard Mixup / RegMixup / Remix baselines, and a
//! small deterministic harness for training and analysis.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod mixing;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngState, Vector};
