//! In-memory volumetric types shared by every other module.
//!
//! Axis order is fixed to `(channel, z, y, x)` for intensities and `(z, y, x)`
//! for label maps. The x axis is the fastest-varying one, which is also the
//! on-disk order of NIfTI, so converting between the two is a flat copy.

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// BraTS label codes that may appear in a segmentation.
pub const LEGAL_LABELS: [u8; 4] = [0, 1, 2, 4];

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("shape {0:?} has a zero extent")]
    EmptyExtent(Vec<usize>),
    #[error("{count} non-finite voxel(s)")]
    NonFiniteData { count: usize },
    #[error("{names} channel name(s) for {channels} channel(s)")]
    ChannelNameCount { names: usize, channels: usize },
    #[error("spacing {0:?} must be positive and finite")]
    InvalidSpacing([f32; 3]),
    #[error("illegal label {value} ({count} voxel(s))")]
    IllegalLabel { value: f64, count: usize },
    #[error("mask shape {mask:?} does not match volume spatial shape {volume:?}")]
    MaskShapeMismatch {
        mask: [usize; 3],
        volume: [usize; 3],
    },
    #[error("case id must be non-empty")]
    EmptyCaseId,
}

/// Voxel-to-world geometry.
///
/// `affine` follows the NIfTI convention: it maps homogeneous voxel indices
/// `(i, j, k, 1)` with `i` along x, `j` along y and `k` along z to world
/// millimetres. `spacing` is stored in array-axis order `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub spacing: [f32; 3],
    pub affine: [[f32; 4]; 4],
}

impl Default for Geometry {
    fn default() -> Self {
        Self::from_spacing([1.0; 3])
    }
}

impl Geometry {
    /// Axis-aligned geometry with the origin at voxel (0, 0, 0).
    pub fn from_spacing(spacing: [f32; 3]) -> Self {
        let mut affine = [[0.0; 4]; 4];
        affine[0][0] = spacing[2];
        affine[1][1] = spacing[1];
        affine[2][2] = spacing[0];
        affine[3][3] = 1.0;
        Self { spacing, affine }
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(VolumeError::InvalidSpacing(self.spacing))
        }
    }

    /// Geometry of a sub-block starting at voxel `(z, y, x)`; only the origin moves.
    pub fn shifted(&self, corner: [usize; 3]) -> Self {
        let (i, j, k) = (corner[2] as f32, corner[1] as f32, corner[0] as f32);
        let mut affine = self.affine;
        for (row, src) in affine.iter_mut().zip(self.affine.iter()).take(3) {
            row[3] = src[0] * i + src[1] * j + src[2] * k + src[3];
        }
        Self {
            spacing: self.spacing,
            affine,
        }
    }
}

/// Multi-channel intensity volume indexed `(channel, z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array4<f32>,
    geometry: Geometry,
    channel_names: Vec<String>,
}

impl Volume {
    /// Wraps `data` with unit spacing, identity affine and no channel names.
    pub fn new(data: Array4<f32>) -> Result<Self, VolumeError> {
        Self::from_parts(data, Geometry::default(), Vec::new())
    }

    pub fn from_parts(
        data: Array4<f32>,
        geometry: Geometry,
        channel_names: Vec<String>,
    ) -> Result<Self, VolumeError> {
        if data.shape().contains(&0) {
            return Err(VolumeError::EmptyExtent(data.shape().to_vec()));
        }
        let non_finite = data.iter().filter(|v| !v.is_finite()).count();
        if non_finite > 0 {
            return Err(VolumeError::NonFiniteData { count: non_finite });
        }
        if !channel_names.is_empty() && channel_names.len() != data.shape()[0] {
            return Err(VolumeError::ChannelNameCount {
                names: channel_names.len(),
                channels: data.shape()[0],
            });
        }
        geometry.validate()?;
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            geometry,
            channel_names,
        })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// `(channels, z, y, x)`
    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    /// Replaces the voxel data, keeping names and geometry. The new array may
    /// have a different spatial shape (crops) but must keep the channel count.
    pub fn with_data(&self, data: Array4<f32>) -> Result<Self, VolumeError> {
        Self::from_parts(data, self.geometry, self.channel_names.clone())
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Result<Self, VolumeError> {
        geometry.validate()?;
        self.geometry = geometry;
        Ok(self)
    }
}

/// Label map indexed `(z, y, x)` holding BraTS codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    labels: Array3<u8>,
    geometry: Geometry,
}

impl SegMask {
    pub fn new(labels: Array3<u8>) -> Result<Self, VolumeError> {
        Self::from_parts(labels, Geometry::default())
    }

    pub fn from_parts(labels: Array3<u8>, geometry: Geometry) -> Result<Self, VolumeError> {
        if labels.shape().contains(&0) {
            return Err(VolumeError::EmptyExtent(labels.shape().to_vec()));
        }
        let mut illegal: Option<u8> = None;
        let mut count = 0usize;
        for &v in labels.iter() {
            if !LEGAL_LABELS.contains(&v) {
                count += 1;
                illegal = Some(illegal.map_or(v, |m| m.min(v)));
            }
        }
        if let Some(value) = illegal {
            return Err(VolumeError::IllegalLabel {
                value: f64::from(value),
                count,
            });
        }
        geometry.validate()?;
        Ok(Self {
            labels: labels.as_standard_layout().into_owned(),
            geometry,
        })
    }

    pub fn labels(&self) -> &Array3<u8> {
        &self.labels
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.labels.shape();
        [s[0], s[1], s[2]]
    }

    pub fn with_labels(&self, labels: Array3<u8>) -> Result<Self, VolumeError> {
        Self::from_parts(labels, self.geometry)
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Result<Self, VolumeError> {
        geometry.validate()?;
        self.geometry = geometry;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grade {
    #[serde(rename = "HGG")]
    Hgg,
    #[serde(rename = "LGG")]
    Lgg,
    Unknown,
}

impl std::fmt::Display for Grade {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grade::Hgg => "HGG",
            Grade::Lgg => "LGG",
            Grade::Unknown => "Unknown",
        })
    }
}

/// One subject: a multimodal volume, its optional ground truth and its grade.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub volume: Volume,
    pub mask: Option<SegMask>,
    pub grade: Grade,
}

impl Case {
    pub fn new(
        id: impl Into<String>,
        volume: Volume,
        mask: Option<SegMask>,
        grade: Grade,
    ) -> Result<Self, VolumeError> {
        let id = id.into();
        if id.is_empty() {
            return Err(VolumeError::EmptyCaseId);
        }
        if let Some(m) = &mask {
            if m.shape() != volume.spatial_shape() {
                return Err(VolumeError::MaskShapeMismatch {
                    mask: m.shape(),
                    volume: volume.spatial_shape(),
                });
            }
        }
        Ok(Self {
            id,
            volume,
            mask,
            grade,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_extent_is_rejected() {
        let err = Volume::new(Array4::zeros((1, 0, 2, 2))).unwrap_err();
        assert!(matches!(err, VolumeError::EmptyExtent(_)));
    }

    #[test]
    fn non_finite_voxels_are_counted() {
        let mut a = Array4::zeros((1, 2, 2, 2));
        a[[0, 0, 0, 0]] = f32::NAN;
        a[[0, 1, 1, 1]] = f32::INFINITY;
        assert_eq!(
            Volume::new(a).unwrap_err(),
            VolumeError::NonFiniteData { count: 2 }
        );
    }

    #[test]
    fn channel_names_must_match_channel_count() {
        let err = Volume::from_parts(
            Array4::zeros((2, 1, 1, 1)),
            Geometry::default(),
            vec!["T1".into()],
        )
        .unwrap_err();
        assert_eq!(
            err,
            VolumeError::ChannelNameCount {
                names: 1,
                channels: 2
            }
        );
    }

    #[test]
    fn mask_rejects_label_three() {
        let mut l = Array3::zeros((2, 2, 2));
        l[[0, 0, 0]] = 3;
        l[[1, 0, 0]] = 3;
        assert_eq!(
            SegMask::new(l).unwrap_err(),
            VolumeError::IllegalLabel {
                value: 3.0,
                count: 2
            }
        );
    }

    #[test]
    fn case_checks_mask_shape() {
        let v = Volume::new(Array4::zeros((1, 2, 3, 4))).unwrap();
        let m = SegMask::new(Array3::zeros((2, 3, 3))).unwrap();
        assert!(matches!(
            Case::new("a", v.clone(), Some(m), Grade::Hgg),
            Err(VolumeError::MaskShapeMismatch { .. })
        ));
        assert_eq!(
            Case::new("", v, None, Grade::Hgg).unwrap_err(),
            VolumeError::EmptyCaseId
        );
    }

    #[test]
    fn shifted_geometry_moves_origin_only() {
        let g = Geometry::from_spacing([3.0, 2.0, 1.0]);
        let s = g.shifted([1, 2, 3]);
        assert_eq!(s.affine[0][3], 3.0);
        assert_eq!(s.affine[1][3], 4.0);
        assert_eq!(s.affine[2][3], 3.0);
        assert_eq!(s.spacing, g.spacing);
    }
}
