use serde::{Deserialize, Serialize};

use super::elastic::{draw_deformation, warp};
use super::intensity::{
    add_gaussian_noise, draw_symmetric, normalize_nonzero, scale_intensity, shift_intensity,
};
use super::mixing::{draw_reference, make_spn_permutation, mix, shuffle_plane};
use super::spatial::{crop, draw_crop_corner, flip_z};
use super::{AugmentError, PipelineSpec, RngStream, StreamKey, TransformKind};
use crate::volume::Case;

/// Where the pipeline fetches MSR reference cases from.
pub trait CaseSource: Sync {
    /// Stable index of `id`, used to key the reference's own RNG streams.
    fn case_index(&self, id: &str) -> Option<u64>;
    fn load(&self, id: &str) -> Result<Case, AugmentError>;
}

/// Cases held in memory; a case's index is its position.
#[derive(Debug, Clone, Default)]
pub struct InMemoryCases {
    pub cases: Vec<Case>,
}

impl InMemoryCases {
    pub fn new(cases: Vec<Case>) -> Self {
        Self { cases }
    }
}

impl CaseSource for InMemoryCases {
    fn case_index(&self, id: &str) -> Option<u64> {
        self.cases.iter().position(|c| c.id == id).map(|i| i as u64)
    }

    fn load(&self, id: &str) -> Result<Case, AugmentError> {
        self.cases
            .iter()
            .find(|c| c.id == id)
            .cloned()
            .ok_or_else(|| AugmentError::UnknownCase(id.into()))
    }
}

/// What a transform drew once its gate accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Draw {
    None,
    Factors { values: Vec<f64> },
    Offsets { values: Vec<f64> },
    Corner { corner: [usize; 3] },
    Elastic { kernel_sigma: f64, shear: [f64; 6] },
    Reference { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub kind: String,
    pub p: f64,
    pub applied: bool,
    pub stream: StreamKey,
    pub draw: Draw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub case_id: String,
    pub case_index: u64,
    pub master_seed: u64,
    pub spn_permutation_seed: u64,
    pub steps: Vec<StepRecord>,
}

pub struct Pipeline<'a, S: CaseSource + ?Sized> {
    spec: &'a PipelineSpec,
    source: &'a S,
}

impl<'a, S: CaseSource + ?Sized> Pipeline<'a, S> {
    pub fn new(spec: &'a PipelineSpec, source: &'a S) -> Result<Self, AugmentError> {
        spec.validate()?;
        Ok(Self { spec, source })
    }

    pub fn spec(&self) -> &PipelineSpec {
        self.spec
    }

    pub fn run(&self, case: &Case, case_index: u64) -> Result<(Case, Provenance), AugmentError> {
        self.run_prefix(case, case_index, self.spec.transforms.len())
    }

    /// Applies the first `upto` transforms.
    fn run_prefix(
        &self,
        case: &Case,
        case_index: u64,
        upto: usize,
    ) -> Result<(Case, Provenance), AugmentError> {
        let mut cur = case.clone();
        let mut steps = Vec::with_capacity(upto);
        for (index, t) in self.spec.transforms.iter().take(upto).enumerate() {
            let mut rng = RngStream::derive(self.spec.master_seed, case_index, index as u64);
            let stream = rng.key();
            let applied = rng.gate(t.p);
            let draw = if applied {
                self.apply(&mut cur, index, &t.kind, &mut rng)
                    .map_err(|e| AugmentError::Transform {
                        index,
                        kind: t.kind.name(),
                        source: Box::new(e),
                    })?
            } else {
                Draw::None
            };
            steps.push(StepRecord {
                index,
                kind: t.kind.name().into(),
                p: t.p,
                applied,
                stream,
                draw,
            });
        }
        Ok((
            cur,
            Provenance {
                case_id: case.id.clone(),
                case_index,
                master_seed: self.spec.master_seed,
                spn_permutation_seed: self.spec.spn_permutation_seed,
                steps,
            },
        ))
    }

    fn apply(
        &self,
        case: &mut Case,
        index: usize,
        kind: &TransformKind,
        rng: &mut RngStream,
    ) -> Result<Draw, AugmentError> {
        let v = &case.volume;
        let m = case.mask.as_ref();
        let draw = match kind {
            TransformKind::NormalizeNonzero => {
                case.volume = normalize_nonzero(v)?;
                Draw::None
            }
            TransformKind::RandScaleIntensity {
                factor_range,
                per_channel,
            } => {
                let values = draw_symmetric(rng, *factor_range, v.channels(), *per_channel);
                case.volume = scale_intensity(v, &values);
                Draw::Factors { values }
            }
            TransformKind::RandShiftIntensity {
                offset_range,
                per_channel,
            } => {
                let values = draw_symmetric(rng, *offset_range, v.channels(), *per_channel);
                case.volume = shift_intensity(v, &values);
                Draw::Offsets { values }
            }
            TransformKind::RandSpatialCrop { roi } => {
                let corner = draw_crop_corner(rng, v.spatial_shape(), *roi)?;
                (case.volume, case.mask) = crop(v, m, corner, *roi)?;
                Draw::Corner { corner }
            }
            TransformKind::RandFlipZ => {
                (case.volume, case.mask) = flip_z(v, m)?;
                Draw::None
            }
            TransformKind::RandElasticAffine(params) => {
                let (def, kernel_sigma) = draw_deformation(rng, v.spatial_shape(), params)?;
                (case.volume, case.mask) = warp(v, m, &def)?;
                let s = def.matrix;
                Draw::Elastic {
                    kernel_sigma,
                    shear: [s[0][1], s[0][2], s[1][0], s[1][2], s[2][0], s[2][1]],
                }
            }
            TransformKind::GaussianNoise { sigma } => {
                case.volume = add_gaussian_noise(v, rng, *sigma);
                Draw::None
            }
            TransformKind::Msr { alpha, allow_self } => {
                let id =
                    draw_reference(rng, &self.spec.reference_pool, Some(&case.id), *allow_self)?;
                let reference = self.source.load(id)?;
                let ref_index = self
                    .source
                    .case_index(id)
                    .ok_or_else(|| AugmentError::UnknownCase(id.into()))?;
                let (xr, _) = self.run_prefix(&reference, ref_index, index)?;
                case.volume = mix(v, &xr.volume, *alpha)?;
                Draw::Reference { id: id.into() }
            }
            TransformKind::Spn { alpha } => {
                let perm = make_spn_permutation(v.spatial_shape(), self.spec.spn_permutation_seed);
                case.volume = mix(v, &shuffle_plane(v, &perm)?, *alpha)?;
                Draw::None
            }
        };
        Ok(draw)
    }
}

/// Runs `spec` on one case. A pure function of its arguments.
pub fn run_pipeline<S: CaseSource + ?Sized>(
    case: &Case,
    spec: &PipelineSpec,
    case_index: u64,
    source: &S,
) -> Result<(Case, Provenance), AugmentError> {
    Pipeline::new(spec, source)?.run(case, case_index)
}
