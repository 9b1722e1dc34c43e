//! Control-grid elastic deformation composed with a sheared affine.
//!
//! An output voxel `p` (in `(z, y, x)` index space) samples the input at
//! `c + M (p - c) + t + d(p)`, where `c` is the volume centre and `d` is the
//! control-grid displacement interpolated trilinearly.

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::{AugmentError, RngStream};
use crate::volume::{SegMask, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    /// Control-point offset magnitude, as a fraction of the grid spacing.
    pub offset_range: [f64; 2],
    /// Smoothing σ for the offset grid, in voxels.
    pub kernel_sigma_range: [f64; 2],
    /// Magnitude of each off-diagonal affine entry.
    pub shear_range: [f64; 2],
    /// Control-point spacing in voxels, `(z, y, x)`.
    pub grid_spacing: [usize; 3],
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            offset_range: [0.1, 0.3],
            kernel_sigma_range: [0.1, 0.3],
            shear_range: [0.1, 0.3],
            grid_spacing: [32, 32, 32],
        }
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ranges = [
            ("offset_range", self.offset_range),
            ("kernel_sigma_range", self.kernel_sigma_range),
            ("shear_range", self.shear_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(AugmentError::invalid(
                    "rand_elastic_affine",
                    format!("{name} must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"),
                ));
            }
        }
        if self.grid_spacing.contains(&0) {
            return Err(AugmentError::invalid(
                "rand_elastic_affine",
                "grid_spacing entries must be positive",
            ));
        }
        Ok(())
    }
}

/// Number of control points per axis covering `shape` at `spacing`.
pub fn control_grid_shape(
    shape: [usize; 3],
    spacing: [usize; 3],
) -> Result<[usize; 3], AugmentError> {
    if shape.iter().any(|&s| s < 2) || spacing.contains(&0) {
        return Err(AugmentError::GridTooCoarse { shape, spacing });
    }
    Ok(std::array::from_fn(|a| {
        (shape[a] - 1).div_ceil(spacing[a]) + 1
    }))
}

/// A fully drawn deformation for one spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Deformation {
    pub shape: [usize; 3],
    pub spacing: [usize; 3],
    /// Control-point displacements in voxels, indexed `(axis, gz, gy, gx)`.
    pub grid: Array4<f64>,
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Deformation {
    pub fn identity(shape: [usize; 3], spacing: [usize; 3]) -> Result<Self, AugmentError> {
        let g = control_grid_shape(shape, spacing)?;
        Ok(Self {
            shape,
            spacing,
            grid: Array4::zeros((3, g[0], g[1], g[2])),
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        })
    }

    /// Moves content by `delta` voxels along `(z, y, x)`.
    pub fn shift(
        shape: [usize; 3],
        spacing: [usize; 3],
        delta: [f64; 3],
    ) -> Result<Self, AugmentError> {
        let mut d = Self::identity(shape, spacing)?;
        d.translation = delta.map(|v| -v);
        Ok(d)
    }

    fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let g = self.grid.shape();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let u = p[a] / self.spacing[a] as f64;
            let i = (u.floor() as usize).min(g[a + 1] - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let w: f64 = (0..3)
                .map(|a| if off[a] == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            if w == 0.0 {
                continue;
            }
            for (axis, o) in out.iter_mut().enumerate() {
                *o += w * self.grid[[axis, base[0] + off[0], base[1] + off[1], base[2] + off[2]]];
            }
        }
        out
    }

    /// Input coordinate sampled by output voxel `p`.
    pub fn source(&self, p: [usize; 3]) -> [f64; 3] {
        let c: [f64; 3] = std::array::from_fn(|a| (self.shape[a] as f64 - 1.0) / 2.0);
        let q: [f64; 3] = std::array::from_fn(|a| p[a] as f64 - c[a]);
        let pf = p.map(|v| v as f64);
        let d = self.displacement(pf);
        std::array::from_fn(|a| {
            c[a] + (0..3).map(|b| self.matrix[a][b] * q[b]).sum::<f64>()
                + self.translation[a]
                + d[a]
        })
    }
}

/// Separable Gaussian over control points; tap `j` sits `j * spacing` voxels away.
fn smooth_grid(grid: &mut Array4<f64>, spacing: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    for (a, &step) in spacing.iter().enumerate() {
        let step = step as f64;
        let radius = (4.0 * sigma / step).ceil() as isize;
        let weights: Vec<f64> = (-radius..=radius)
            .map(|j| (-(j as f64 * step).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        for mut comp in grid.axis_iter_mut(Axis(0)) {
            for mut lane in comp.lanes_mut(Axis(a)) {
                let src = lane.to_vec();
                let n = src.len() as isize;
                for (i, v) in lane.iter_mut().enumerate() {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for (k, w) in weights.iter().enumerate() {
                        let j = i as isize + k as isize - radius;
                        if (0..n).contains(&j) {
                            acc += w * src[j as usize];
                            norm += w;
                        }
                    }
                    *v = acc / norm;
                }
            }
        }
    }
}

/// Draws a deformation; call after the probability gate.
pub fn draw_deformation(
    rng: &mut RngStream,
    shape: [usize; 3],
    params: &ElasticParams,
) -> Result<(Deformation, f64), AugmentError> {
    params.validate()?;
    let mut def = Deformation::identity(shape, params.grid_spacing)?;
    let sigma = rng.uniform(params.kernel_sigma_range[0], params.kernel_sigma_range[1]);
    let [lo, hi] = params.offset_range;
    for ((axis, _, _, _), v) in def.grid.indexed_iter_mut() {
        *v = rng.signed_uniform(lo, hi) * params.grid_spacing[axis] as f64;
    }
    smooth_grid(&mut def.grid, params.grid_spacing, sigma);
    let [lo, hi] = params.shear_range;
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                def.matrix[a][b] = rng.signed_uniform(lo, hi);
            }
        }
    }
    Ok((def, sigma))
}

fn trilinear(ch: &[f32], shape: [usize; 3], s: [f64; 3]) -> f64 {
    let f = s.map(f64::floor);
    let t: [f64; 3] = std::array::from_fn(|a| s[a] - f[a]);
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
        let w: f64 = (0..3)
            .map(|a| if off[a] == 1 { t[a] } else { 1.0 - t[a] })
            .product();
        if w == 0.0 {
            continue;
        }
        let idx: [f64; 3] = std::array::from_fn(|a| f[a] + off[a] as f64);
        if (0..3).all(|a| idx[a] >= 0.0 && idx[a] < shape[a] as f64) {
            let [z, y, x] = idx.map(|v| v as usize);
            acc += w * f64::from(ch[(z * shape[1] + y) * shape[2] + x]);
        }
    }
    acc
}

fn nearest(shape: [usize; 3], s: [f64; 3]) -> Option<usize> {
    let r = s.map(f64::round);
    if (0..3).all(|a| r[a] >= 0.0 && r[a] < shape[a] as f64) {
        let [z, y, x] = r.map(|v| v as usize);
        Some((z * shape[1] + y) * shape[2] + x)
    } else {
        None
    }
}

/// Resamples the volume trilinearly and the mask by nearest neighbour.
pub fn warp(
    v: &Volume,
    m: Option<&SegMask>,
    def: &Deformation,
) -> Result<(Volume, Option<SegMask>), AugmentError> {
    let shape = v.spatial_shape();
    if shape != def.shape || m.is_some_and(|m| m.shape() != shape) {
        return Err(AugmentError::ShapeMismatch {
            expected: def.shape.to_vec(),
            got: shape.to_vec(),
        });
    }
    let src = v.data().as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let n = shape.iter().product::<usize>();
    let channels = v.channels();
    let mut out = Array4::<f32>::zeros(v.data().raw_dim());
    let mut labels = m.map(|_| Array3::<u8>::zeros(shape));
    let mask_src = m.map(|m| m.labels().as_standard_layout().into_owned());
    {
        let dst = out.as_slice_mut().expect("fresh array");
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let s = def.source([z, y, x]);
                    let i = (z * shape[1] + y) * shape[2] + x;
                    for c in 0..channels {
                        dst[c * n + i] = trilinear(&src[c * n..(c + 1) * n], shape, s) as f32;
                    }
                    if let (Some(l), Some(ms)) = (labels.as_mut(), mask_src.as_ref()) {
                        if let Some(j) = nearest(shape, s) {
                            l.as_slice_mut().unwrap()[i] = ms.as_slice().unwrap()[j];
                        }
                    }
                }
            }
        }
    }
    let mask = match (m, labels) {
        (Some(m), Some(l)) => Some(m.with_labels(l)?),
        _ => None,
    };
    Ok((v.with_data(out)?, mask))
}

pub fn rand_elastic_affine(
    v: &Volume,
    m: Option<&SegMask>,
    rng: &mut RngStream,
    params: &ElasticParams,
    p: f64,
) -> Result<(Volume, Option<SegMask>), AugmentError> {
    params.validate()?;
    control_grid_shape(v.spatial_shape(), params.grid_spacing)?;
    if !rng.gate(p) {
        return Ok((v.clone(), m.cloned()));
    }
    let (def, _) = draw_deformation(rng, v.spatial_shape(), params)?;
    warp(v, m, &def)
}
