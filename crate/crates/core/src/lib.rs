//! Deterministic volumetric augmentation and evaluation for multimodal brain MRI.

pub mod augment;
pub mod dataset;
pub mod losses;
pub mod metrics;
pub mod nifti;
pub mod stats;
pub mod volume;

pub use volume::{Case, Geometry, Grade, SegMask, Volume, VolumeError};
