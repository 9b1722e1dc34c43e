//! Voxelwise intensity transforms. None of these touch the label map.

use ndarray::{Axis, Zip};
use rand_distr::{Distribution, Normal};

use super::{AugmentError, RngStream};
use crate::volume::Volume;

/// Mean and population standard deviation of the non-zero voxels per channel;
/// `None` for an all-zero channel.
pub fn nonzero_stats(v: &Volume) -> Vec<Option<(f64, f64)>> {
    v.data()
        .axis_iter(Axis(0))
        .map(|ch| {
            let (mut n, mut sum) = (0usize, 0.0f64);
            for &x in ch.iter().filter(|x| **x != 0.0) {
                n += 1;
                sum += f64::from(x);
            }
            if n == 0 {
                return None;
            }
            let mean = sum / n as f64;
            let var = ch
                .iter()
                .filter(|x| **x != 0.0)
                .map(|&x| (f64::from(x) - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            Some((mean, var.sqrt()))
        })
        .collect()
}

/// Standardizes each channel using statistics of its non-zero voxels only.
/// Zero voxels stay exactly zero and all-zero channels pass through.
pub fn normalize_nonzero(v: &Volume) -> Result<Volume, AugmentError> {
    let stats = nonzero_stats(v);
    let mut data = v.data().clone();
    for (c, (mut ch, s)) in data.axis_iter_mut(Axis(0)).zip(&stats).enumerate() {
        let Some((mean, std)) = *s else { continue };
        if std == 0.0 || !std.is_finite() {
            return Err(AugmentError::DegenerateChannel { channel: c });
        }
        ch.mapv_inplace(|x| {
            if x == 0.0 {
                0.0
            } else {
                ((f64::from(x) - mean) / std) as f32
            }
        });
    }
    Ok(v.with_data(data)?)
}

/// Multiplies channel `c` by `1 + factors[c]`; a single factor applies to all.
pub fn scale_intensity(v: &Volume, factors: &[f64]) -> Volume {
    per_channel(v, factors, |x, s| (f64::from(x) * (1.0 + s)) as f32)
}

/// Adds `offsets[c]` to channel `c`; a single offset applies to all.
pub fn shift_intensity(v: &Volume, offsets: &[f64]) -> Volume {
    per_channel(v, offsets, |x, o| (f64::from(x) + o) as f32)
}

fn per_channel(v: &Volume, values: &[f64], f: impl Fn(f32, f64) -> f32) -> Volume {
    let mut data = v.data().clone();
    for (c, mut ch) in data.axis_iter_mut(Axis(0)).enumerate() {
        let s = if values.len() == 1 {
            values[0]
        } else {
            values[c]
        };
        ch.mapv_inplace(|x| f(x, s));
    }
    v.with_data(data).expect("finite inputs stay finite")
}

/// One draw from `Uniform[-range, range]`, or one per channel.
pub fn draw_symmetric(
    rng: &mut RngStream,
    range: f64,
    channels: usize,
    per_channel: bool,
) -> Vec<f64> {
    let n = if per_channel { channels } else { 1 };
    (0..n).map(|_| rng.uniform(-range, range)).collect()
}

/// With probability `p`, multiplies every voxel by `1 + s`,
/// `s ~ Uniform[-factor_range, factor_range]`, one draw for all channels.
pub fn rand_scale_intensity(v: &Volume, rng: &mut RngStream, factor_range: f64, p: f64) -> Volume {
    if !rng.gate(p) {
        return v.clone();
    }
    scale_intensity(v, &draw_symmetric(rng, factor_range, v.channels(), false))
}

/// With probability `p`, adds `o ~ Uniform[-offset_range, offset_range]`.
pub fn rand_shift_intensity(v: &Volume, rng: &mut RngStream, offset_range: f64, p: f64) -> Volume {
    if !rng.gate(p) {
        return v.clone();
    }
    shift_intensity(v, &draw_symmetric(rng, offset_range, v.channels(), false))
}

/// Adds i.i.d. `N(0, sigma²)` noise drawn from `rng`, in memory order.
pub fn add_gaussian_noise(v: &Volume, rng: &mut RngStream, sigma: f64) -> Volume {
    if sigma == 0.0 {
        return v.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative and finite");
    let mut data = v.data().clone();
    Zip::from(&mut data).for_each(|x| {
        *x = (f64::from(*x) + normal.sample(rng)) as f32;
    });
    v.with_data(data).expect("finite noise")
}

pub fn gaussian_noise(v: &Volume, rng: &mut RngStream, sigma: f64, p: f64) -> Volume {
    if rng.gate(p) {
        add_gaussian_noise(v, rng, sigma)
    } else {
        v.clone()
    }
}
