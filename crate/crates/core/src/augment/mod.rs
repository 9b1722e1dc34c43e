//! Seeded, probability-gated augmentation transforms and the pipeline that chains them.
//!
//! Every transform invocation gets its own [`RngStream`] keyed by
//! `(master_seed, case_index, transform_index)`, so results never depend on
//! which thread ran which case.

pub mod elastic;
pub mod intensity;
pub mod mixing;
pub mod pipeline;
mod rng;
pub mod spatial;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::VolumeError;

pub use elastic::{Deformation, ElasticParams};
pub use mixing::{Permutation, ReferencePool};
pub use pipeline::{run_pipeline, CaseSource, InMemoryCases, Pipeline, Provenance, StepRecord};
pub use rng::{RngStream, StreamKey};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("invalid {kind} parameter: {detail}")]
    InvalidParameter { kind: &'static str, detail: String },
    #[error("channel {channel} has non-zero voxels with zero variance")]
    DegenerateChannel { channel: usize },
    #[error("roi {roi:?} does not fit spatial shape {shape:?}")]
    RoiTooLarge { roi: [usize; 3], shape: [usize; 3] },
    #[error(
        "shape {shape:?} with grid spacing {spacing:?} gives fewer than 2 control points per axis"
    )]
    GridTooCoarse {
        shape: [usize; 3],
        spacing: [usize; 3],
    },
    #[error("reference pool has no eligible case")]
    EmptyPool,
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("permutation built for plane {permutation:?}, volume plane is {plane:?}")]
    PermutationShapeMismatch {
        permutation: [usize; 2],
        plane: [usize; 2],
    },
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("transform {index} ({kind}): {source}")]
    Transform {
        index: usize,
        kind: &'static str,
        source: Box<AugmentError>,
    },
    #[error("case source: {0}")]
    Source(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl AugmentError {
    pub(crate) fn invalid(kind: &'static str, detail: impl Into<String>) -> Self {
        Self::InvalidParameter {
            kind,
            detail: detail.into(),
        }
    }
}

/// Transform kind with its kind-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum TransformKind {
    NormalizeNonzero,
    RandScaleIntensity {
        factor_range: f64,
        #[serde(default)]
        per_channel: bool,
    },
    RandShiftIntensity {
        offset_range: f64,
        #[serde(default)]
        per_channel: bool,
    },
    RandSpatialCrop {
        roi: [usize; 3],
    },
    RandFlipZ,
    RandElasticAffine(ElasticParams),
    GaussianNoise {
        sigma: f64,
    },
    Msr {
        alpha: f64,
        #[serde(default)]
        allow_self: bool,
    },
    Spn {
        alpha: f64,
    },
}

impl TransformKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NormalizeNonzero => "normalize_nonzero",
            Self::RandScaleIntensity { .. } => "rand_scale_intensity",
            Self::RandShiftIntensity { .. } => "rand_shift_intensity",
            Self::RandSpatialCrop { .. } => "rand_spatial_crop",
            Self::RandFlipZ => "rand_flip_z",
            Self::RandElasticAffine(_) => "rand_elastic_affine",
            Self::GaussianNoise { .. } => "gaussian_noise",
            Self::Msr { .. } => "msr",
            Self::Spn { .. } => "spn",
        }
    }

    /// Spatial transforms move the mask along with the volume.
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            Self::RandSpatialCrop { .. } | Self::RandFlipZ | Self::RandElasticAffine(_)
        )
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let name = self.name();
        let non_negative = |what: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(AugmentError::invalid(
                    name,
                    format!("{what} must be finite and >= 0, got {v}"),
                ))
            }
        };
        match self {
            Self::NormalizeNonzero | Self::RandFlipZ => Ok(()),
            Self::RandScaleIntensity { factor_range, .. } => {
                non_negative("factor_range", *factor_range)?;
                if *factor_range == 0.0 {
                    return Err(AugmentError::invalid(name, "factor_range must be > 0"));
                }
                Ok(())
            }
            Self::RandShiftIntensity { offset_range, .. } => {
                non_negative("offset_range", *offset_range)
            }
            Self::RandSpatialCrop { roi } => {
                if roi.contains(&0) {
                    Err(AugmentError::invalid(name, "roi entries must be positive"))
                } else {
                    Ok(())
                }
            }
            Self::RandElasticAffine(p) => p.validate(),
            Self::GaussianNoise { sigma } => non_negative("sigma", *sigma),
            Self::Msr { alpha, .. } | Self::Spn { alpha } => mixing::check_alpha(name, *alpha),
        }
    }
}

/// One pipeline stage: a kind, its application probability and an optional
/// explicit position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(flatten)]
    pub kind: TransformKind,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<i64>,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, p: f64) -> Result<Self, AugmentError> {
        let spec = Self {
            kind,
            p,
            order: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(AugmentError::invalid(
                self.kind.name(),
                format!("p {} outside [0, 1]", self.p),
            ));
        }
        self.kind.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub master_seed: u64,
    #[serde(default)]
    pub spn_permutation_seed: u64,
    #[serde(default)]
    pub reference_pool: Vec<String>,
    #[serde(default, rename = "transform")]
    pub transforms: Vec<TransformSpec>,
}

impl PipelineSpec {
    pub fn new(master_seed: u64, transforms: Vec<TransformSpec>) -> Self {
        Self {
            master_seed,
            spn_permutation_seed: 0,
            reference_pool: Vec::new(),
            transforms,
        }
    }

    /// Parses and validates a config.
    pub fn from_toml_str(s: &str) -> Result<Self, AugmentError> {
        let spec = Self::parse(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Parses without validating, so fields such as the reference pool can be
    /// filled in first. Blocks carrying `order` are sorted by it (stably);
    /// blocks without it keep their file position.
    pub fn parse(s: &str) -> Result<Self, AugmentError> {
        let mut spec: Self = toml::from_str(s).map_err(|e| AugmentError::Config(e.to_string()))?;
        if spec.transforms.iter().any(|t| t.order.is_some()) {
            if spec.transforms.iter().any(|t| t.order.is_none()) {
                return Err(AugmentError::Config(
                    "either every transform block has an order or none does".into(),
                ));
            }
            spec.transforms.sort_by_key(|t| t.order);
        }
        Ok(spec)
    }

    /// Serializes with explicit, sequential `order` fields.
    pub fn to_toml(&self) -> Result<String, AugmentError> {
        let mut out = self.clone();
        for (i, t) in out.transforms.iter_mut().enumerate() {
            t.order = Some(i as i64);
        }
        toml::to_string(&out).map_err(|e| AugmentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (index, t) in self.transforms.iter().enumerate() {
            t.validate().map_err(|e| AugmentError::Transform {
                index,
                kind: t.kind.name(),
                source: Box::new(e),
            })?;
        }
        let has_msr = self
            .transforms
            .iter()
            .any(|t| matches!(t.kind, TransformKind::Msr { .. }));
        if has_msr && self.reference_pool.is_empty() {
            return Err(AugmentError::Config(
                "reference_pool must be non-empty when an msr transform is present".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_reference_pool(mut self, pool: Vec<String>) -> Self {
        self.reference_pool = pool;
        self
    }
}

/// Shipped configurations.
pub mod presets {
    use super::{AugmentError, PipelineSpec};

    pub const BASELINE: &str = include_str!("../../presets/baseline.toml");
    pub const BASELINE_MSR: &str = include_str!("../../presets/baseline_msr.toml");
    pub const BASELINE_SPN: &str = include_str!("../../presets/baseline_spn.toml");
    pub const BASELINE_GAUSSIAN: &str = include_str!("../../presets/baseline_gaussian.toml");

    pub const NAMES: [&str; 4] = [
        "baseline",
        "baseline_msr",
        "baseline_spn",
        "baseline_gaussian",
    ];

    /// Preset text by name.
    pub fn text(name: &str) -> Option<&'static str> {
        match name {
            "baseline" => Some(BASELINE),
            "baseline_msr" => Some(BASELINE_MSR),
            "baseline_spn" => Some(BASELINE_SPN),
            "baseline_gaussian" => Some(BASELINE_GAUSSIAN),
            _ => None,
        }
    }

    /// Parses a preset. The MSR preset ships with an empty pool, which is
    /// filled in before validation.
    pub fn load(name: &str, reference_pool: &[String]) -> Result<PipelineSpec, AugmentError> {
        let text =
            text(name).ok_or_else(|| AugmentError::Config(format!("unknown preset {name}")))?;
        let mut spec = PipelineSpec::parse(text)?;
        if spec.reference_pool.is_empty() {
            spec.reference_pool = reference_pool.to_vec();
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in presets::NAMES {
            let spec = presets::load(name, &pool()).unwrap();
            assert!(!spec.transforms.is_empty(), "{name}");
        }
    }

    #[test]
    fn baseline_order_and_probabilities() {
        let spec = presets::load("baseline", &[]).unwrap();
        let names: Vec<_> = spec.transforms.iter().map(|t| t.kind.name()).collect();
        assert_eq!(
            names,
            [
                "normalize_nonzero",
                "rand_scale_intensity",
                "rand_shift_intensity",
                "rand_spatial_crop",
                "rand_flip_z",
                "rand_elastic_affine"
            ]
        );
        let p: Vec<_> = spec.transforms.iter().map(|t| t.p).collect();
        assert_eq!(p, [1.0, 0.3, 0.3, 1.0, 0.3, 0.3]);
        assert_eq!(
            spec.transforms[2].kind,
            TransformKind::RandShiftIntensity {
                offset_range: 0.1,
                per_channel: false
            }
        );
        assert_eq!(
            spec.transforms[3].kind,
            TransformKind::RandSpatialCrop { roi: [128; 3] }
        );
    }

    #[test]
    fn mixing_presets_carry_published_defaults() {
        let msr = presets::load("baseline_msr", &pool()).unwrap();
        let last = msr.transforms.last().unwrap();
        assert_eq!(last.p, 0.5);
        assert_eq!(
            last.kind,
            TransformKind::Msr {
                alpha: 1e-4,
                allow_self: false
            }
        );
        let spn = presets::load("baseline_spn", &[]).unwrap();
        let last = spn.transforms.last().unwrap();
        assert_eq!(last.p, 1.0);
        assert_eq!(last.kind, TransformKind::Spn { alpha: 1e-7 });
        let g = presets::load("baseline_gaussian", &[]).unwrap();
        assert_eq!(
            g.transforms.last().unwrap().kind,
            TransformKind::GaussianNoise { sigma: 0.1 }
        );
    }

    #[test]
    fn toml_round_trip() {
        let spec = presets::load("baseline_msr", &pool())
            .unwrap()
            .with_seed(77);
        let text = spec.to_toml().unwrap();
        let back = PipelineSpec::from_toml_str(&text).unwrap();
        assert_eq!(back.to_toml().unwrap(), text);
        let mut expected = spec.clone();
        for (i, t) in expected.transforms.iter_mut().enumerate() {
            t.order = Some(i as i64);
        }
        assert_eq!(back, expected);
    }

    #[test]
    fn order_field_reorders_blocks() {
        let text = r#"
master_seed = 1

[[transform]]
kind = "rand_flip_z"
p = 0.3
order = 2

[[transform]]
kind = "normalize_nonzero"
p = 1.0
order = 1
"#;
        let spec = PipelineSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.transforms[0].kind, TransformKind::NormalizeNonzero);
        assert_eq!(spec.transforms[1].kind, TransformKind::RandFlipZ);
    }

    #[test]
    fn gaussian_sigma_is_mandatory() {
        let text = "master_seed = 1\n[[transform]]\nkind = \"gaussian_noise\"\np = 1.0\n[transform.params]\n";
        assert!(matches!(
            PipelineSpec::from_toml_str(text),
            Err(AugmentError::Config(_))
        ));
    }

    #[test]
    fn validation_failures() {
        assert!(TransformSpec::new(TransformKind::RandFlipZ, 1.5).is_err());
        assert!(TransformSpec::new(
            TransformKind::Msr {
                alpha: -0.1,
                allow_self: false
            },
            0.5
        )
        .is_err());
        assert!(TransformSpec::new(TransformKind::GaussianNoise { sigma: -1.0 }, 0.5).is_err());
        assert!(
            TransformSpec::new(TransformKind::RandSpatialCrop { roi: [0, 1, 1] }, 1.0).is_err()
        );
        let msr = TransformSpec::new(
            TransformKind::Msr {
                alpha: 1e-4,
                allow_self: false,
            },
            0.5,
        )
        .unwrap();
        assert!(matches!(
            PipelineSpec::new(0, vec![msr]).validate(),
            Err(AugmentError::Config(_))
        ));
    }
}
