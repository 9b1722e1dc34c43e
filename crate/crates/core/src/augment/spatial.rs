//! Crop and flip. The volume and its label map always move together.

use ndarray::{s, Axis};

use super::{AugmentError, RngStream};
use crate::volume::{SegMask, Volume};

pub type Spatial = (Volume, Option<SegMask>);

fn check_mask(v: &Volume, m: Option<&SegMask>) -> Result<(), AugmentError> {
    match m {
        Some(m) if m.shape() != v.spatial_shape() => Err(AugmentError::ShapeMismatch {
            expected: v.spatial_shape().to_vec(),
            got: m.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

/// Uniform corner over every valid crop position.
pub fn draw_crop_corner(
    rng: &mut RngStream,
    shape: [usize; 3],
    roi: [usize; 3],
) -> Result<[usize; 3], AugmentError> {
    if roi.iter().zip(shape).any(|(&r, s)| r == 0 || r > s) {
        return Err(AugmentError::RoiTooLarge { roi, shape });
    }
    let mut corner = [0; 3];
    for a in 0..3 {
        corner[a] = rng.index(shape[a] - roi[a] + 1);
    }
    Ok(corner)
}

/// Extracts the `roi` window starting at `corner` from all channels and the mask.
pub fn crop(
    v: &Volume,
    m: Option<&SegMask>,
    corner: [usize; 3],
    roi: [usize; 3],
) -> Result<Spatial, AugmentError> {
    check_mask(v, m)?;
    let shape = v.spatial_shape();
    if (0..3).any(|a| roi[a] == 0 || corner[a] + roi[a] > shape[a]) {
        return Err(AugmentError::RoiTooLarge { roi, shape });
    }
    let [z, y, x] = corner;
    let [dz, dy, dx] = roi;
    let data = v
        .data()
        .slice(s![.., z..z + dz, y..y + dy, x..x + dx])
        .to_owned();
    let geometry = v.geometry().shifted(corner);
    let out = v.with_data(data)?.with_geometry(geometry)?;
    let mask = match m {
        Some(m) => Some(
            m.with_labels(
                m.labels()
                    .slice(s![z..z + dz, y..y + dy, x..x + dx])
                    .to_owned(),
            )?
            .with_geometry(geometry)?,
        ),
        None => None,
    };
    Ok((out, mask))
}

pub fn rand_spatial_crop(
    v: &Volume,
    m: Option<&SegMask>,
    rng: &mut RngStream,
    roi: [usize; 3],
) -> Result<Spatial, AugmentError> {
    let corner = draw_crop_corner(rng, v.spatial_shape(), roi)?;
    crop(v, m, corner, roi)
}

/// Reverses the z axis of every channel and of the mask.
pub fn flip_z(v: &Volume, m: Option<&SegMask>) -> Result<Spatial, AugmentError> {
    check_mask(v, m)?;
    let mut data = v.data().clone();
    data.invert_axis(Axis(1));
    let mask = match m {
        Some(m) => {
            let mut l = m.labels().clone();
            l.invert_axis(Axis(0));
            Some(m.with_labels(l)?)
        }
        None => None,
    };
    Ok((v.with_data(data)?, mask))
}

pub fn rand_flip_z(
    v: &Volume,
    m: Option<&SegMask>,
    rng: &mut RngStream,
    p: f64,
) -> Result<Spatial, AugmentError> {
    if rng.gate(p) {
        flip_z(v, m)
    } else {
        check_mask(v, m)?;
        Ok((v.clone(), m.cloned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn ramp(shape: (usize, usize, usize, usize)) -> Volume {
        Volume::new(Array4::from_shape_fn(shape, |(c, z, y, x)| {
            (c * 1000 + z * 100 + y * 10 + x) as f32
        }))
        .unwrap()
    }

    #[test]
    fn full_roi_is_identity() {
        let v = ramp((2, 3, 4, 5));
        for seed in 0..10 {
            let mut r = RngStream::derive(seed, 0, 0);
            let (out, _) = rand_spatial_crop(&v, None, &mut r, [3, 4, 5]).unwrap();
            assert_eq!(out, v);
        }
    }

    #[test]
    fn crop_known_corner() {
        let v = ramp((1, 4, 4, 4));
        let (out, _) = crop(&v, None, [1, 1, 1], [2, 2, 2]).unwrap();
        let mut expected = Vec::new();
        for z in 1..=2 {
            for y in 1..=2 {
                for x in 1..=2 {
                    expected.push((z * 100 + y * 10 + x) as f32);
                }
            }
        }
        assert_eq!(out.data().iter().copied().collect::<Vec<_>>(), expected);
        assert_eq!(out.geometry().affine[0][3], 1.0);
    }

    #[test]
    fn crop_to_patch_shape() {
        let v = Volume::new(Array4::zeros((4, 155, 240, 240))).unwrap();
        let m = SegMask::new(Array3::zeros((155, 240, 240))).unwrap();
        let mut r = RngStream::derive(7, 0, 0);
        let (out, mask) = rand_spatial_crop(&v, Some(&m), &mut r, [128, 128, 128]).unwrap();
        assert_eq!(out.shape(), [4, 128, 128, 128]);
        assert_eq!(mask.unwrap().shape(), [128, 128, 128]);
    }

    #[test]
    fn roi_too_large() {
        let v = ramp((1, 4, 4, 4));
        let mut r = RngStream::derive(0, 0, 0);
        assert!(matches!(
            rand_spatial_crop(&v, None, &mut r, [5, 2, 2]),
            Err(AugmentError::RoiTooLarge { .. })
        ));
    }

    #[test]
    fn crop_keeps_mask_aligned() {
        let v = ramp((1, 6, 6, 6));
        let labels = Array3::from_shape_fn(
            (6, 6, 6),
            |(z, y, x)| if (z + y + x) % 3 == 0 { 4 } else { 0 },
        );
        let m = SegMask::new(labels).unwrap();
        let mut r = RngStream::derive(3, 1, 2);
        let (out, mask) = rand_spatial_crop(&v, Some(&m), &mut r, [3, 3, 3]).unwrap();
        let mask = mask.unwrap();
        for ((_, z, y, x), val) in out.data().indexed_iter() {
            let (oz, oy, ox) = (
                (*val as usize / 100) % 10,
                (*val as usize / 10) % 10,
                *val as usize % 10,
            );
            let expected = if (oz + oy + ox) % 3 == 0 { 4 } else { 0 };
            assert_eq!(mask.labels()[[z, y, x]], expected);
        }
    }

    #[test]
    fn flip_reverses_z() {
        let v =
            Volume::new(Array4::from_shape_vec((1, 2, 1, 1), vec![1.5, -2.0]).unwrap()).unwrap();
        let (out, _) = flip_z(&v, None).unwrap();
        assert_eq!(out.data().as_slice().unwrap(), &[-2.0, 1.5]);
    }

    #[test]
    fn flip_twice_is_identity() {
        let v = ramp((2, 5, 3, 2));
        let mut l = Array3::zeros((5, 3, 2));
        l[[0, 1, 1]] = 2;
        let m = SegMask::new(l).unwrap();
        let (a, am) = flip_z(&v, Some(&m)).unwrap();
        assert_eq!(am.as_ref().unwrap().labels()[[4, 1, 1]], 2);
        let (b, bm) = flip_z(&a, am.as_ref()).unwrap();
        assert_eq!(b, v);
        assert_eq!(bm.unwrap(), m);
    }

    #[test]
    fn zero_probability_flip_is_identity() {
        let v = ramp((1, 4, 2, 2));
        let mut r = RngStream::derive(1, 1, 1);
        for _ in 0..50 {
            assert_eq!(rand_flip_z(&v, None, &mut r, 0.0).unwrap().0, v);
        }
    }
}
