//! Convex mixing with another subject (MSR) or with a pixel-shuffled copy (SPN).

use ndarray::{Axis, Zip};
use rand::seq::SliceRandom;

use super::rng::spn_rng;
use super::{AugmentError, RngStream};
use crate::volume::Volume;

/// `(1 - alpha) * x + alpha * x_r` voxelwise, evaluated in f64.
pub fn mix(x: &Volume, xr: &Volume, alpha: f64) -> Result<Volume, AugmentError> {
    if x.shape() != xr.shape() {
        return Err(AugmentError::ShapeMismatch {
            expected: x.shape().to_vec(),
            got: xr.shape().to_vec(),
        });
    }
    let mut data = x.data().clone();
    Zip::from(&mut data).and(xr.data()).for_each(|a, &b| {
        *a = ((1.0 - alpha) * f64::from(*a) + alpha * f64::from(b)) as f32;
    });
    Ok(x.with_data(data)?)
}

/// Read access to the reference volumes MSR draws from.
pub trait ReferencePool {
    fn ids(&self) -> &[String];
    fn reference(&self, id: &str) -> Result<Volume, AugmentError>;
}

/// Pool ids eligible for case `own`.
pub fn candidates<'a>(pool: &'a [String], own: Option<&str>, allow_self: bool) -> Vec<&'a str> {
    pool.iter()
        .map(String::as_str)
        .filter(|id| allow_self || Some(*id) != own)
        .collect()
}

/// Picks a reference id; call after the probability gate.
pub fn draw_reference<'a>(
    rng: &mut RngStream,
    pool: &'a [String],
    own: Option<&str>,
    allow_self: bool,
) -> Result<&'a str, AugmentError> {
    let c = candidates(pool, own, allow_self);
    if c.is_empty() {
        return Err(AugmentError::EmptyPool);
    }
    Ok(c[rng.index(c.len())])
}

/// With probability `p`, mixes `x` with a reference drawn uniformly from the pool.
/// `own` is excluded from the draw unless `allow_self` is set.
pub fn msr(
    x: &Volume,
    own: Option<&str>,
    pool: &impl ReferencePool,
    rng: &mut RngStream,
    alpha: f64,
    p: f64,
    allow_self: bool,
) -> Result<Volume, AugmentError> {
    check_alpha("msr", alpha)?;
    if !rng.gate(p) {
        return Ok(x.clone());
    }
    let id = draw_reference(rng, pool.ids(), own, allow_self)?;
    mix(x, &pool.reference(id)?, alpha)
}

pub(crate) fn check_alpha(kind: &'static str, alpha: f64) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(AugmentError::invalid(
            kind,
            format!("alpha {alpha} outside [0, 1]"),
        ))
    }
}

/// A permutation of the flattened `(y, x)` plane: output pixel `i` takes
/// input pixel `indices[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub plane: [usize; 2],
    pub indices: Vec<usize>,
}

impl Permutation {
    pub fn identity(plane: [usize; 2]) -> Self {
        Self {
            plane,
            indices: (0..plane[0] * plane[1]).collect(),
        }
    }
}

/// Uniform random in-plane permutation for volumes of spatial shape `(z, y, x)`.
pub fn make_spn_permutation(shape: [usize; 3], seed: u64) -> Permutation {
    let mut p = Permutation::identity([shape[1], shape[2]]);
    p.indices.shuffle(&mut spn_rng(seed));
    p
}

/// Applies `perm` to the `(y, x)` plane of every slice of every channel.
pub fn shuffle_plane(x: &Volume, perm: &Permutation) -> Result<Volume, AugmentError> {
    let [_, _, ny, nx] = x.shape();
    if perm.plane != [ny, nx] || perm.indices.len() != ny * nx {
        return Err(AugmentError::PermutationShapeMismatch {
            permutation: perm.plane,
            plane: [ny, nx],
        });
    }
    let mut data = x.data().clone();
    for c in 0..x.channels() {
        for (mut dst, src) in data
            .index_axis_mut(Axis(0), c)
            .axis_iter_mut(Axis(0))
            .zip(x.data().index_axis(Axis(0), c).axis_iter(Axis(0)))
        {
            for (i, &j) in perm.indices.iter().enumerate() {
                dst[[i / nx, i % nx]] = src[[j / nx, j % nx]];
            }
        }
    }
    Ok(x.with_data(data)?)
}

/// With probability `p`, mixes `x` with its in-plane shuffle.
pub fn spn(
    x: &Volume,
    perm: &Permutation,
    rng: &mut RngStream,
    alpha: f64,
    p: f64,
) -> Result<Volume, AugmentError> {
    check_alpha("spn", alpha)?;
    let xr = shuffle_plane(x, perm)?;
    if !rng.gate(p) {
        return Ok(x.clone());
    }
    mix(x, &xr, alpha)
}
