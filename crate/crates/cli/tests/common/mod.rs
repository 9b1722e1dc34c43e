#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use volaug::augment::RngStream;
use volaug::{nifti, Geometry, SegMask, Volume};

pub const CHANNELS: [&str; 4] = ["t1", "t1ce", "t2", "flair"];

/// Zero border, positive random interior, blocky labels.
pub fn synthetic_case(shape: [usize; 3], seed: u64) -> (Vec<Volume>, SegMask) {
    let mut r = RngStream::derive(seed, 0, 0);
    let inside = |z: usize, y: usize, x: usize| {
        z > 0 && y > 0 && x > 0 && z + 1 < shape[0] && y + 1 < shape[1] && x + 1 < shape[2]
    };
    let geometry = Geometry::from_spacing([1.0, 1.0, 1.0]);
    let channels = (0..CHANNELS.len())
        .map(|_| {
            let data = Array4::from_shape_fn((1, shape[0], shape[1], shape[2]), |(_, z, y, x)| {
                if inside(z, y, x) {
                    r.uniform(10.0, 500.0).round() as f32
                } else {
                    0.0
                }
            });
            Volume::from_parts(data, geometry, vec![]).unwrap()
        })
        .collect();
    let shift = r.index(4);
    let labels = Array3::from_shape_fn(shape, |(z, y, x)| {
        if !inside(z, y, x) {
            0
        } else {
            [0u8, 1, 2, 4][(z / 3 + y / 4 + x / 5 + shift) % 4]
        }
    });
    (channels, SegMask::from_parts(labels, geometry).unwrap())
}

pub fn case_dir(root: &Path, group: Option<&str>, id: &str) -> PathBuf {
    match group {
        Some(g) => root.join(g).join(id),
        None => root.join(id),
    }
}

/// Writes `<root>/<group>/<id>/<id>_<suffix>.nii.gz` for the four channels and the mask.
pub fn write_case(
    root: &Path,
    group: Option<&str>,
    id: &str,
    shape: [usize; 3],
    seed: u64,
) -> PathBuf {
    let dir = case_dir(root, group, id);
    fs::create_dir_all(&dir).unwrap();
    let (channels, mask) = synthetic_case(shape, seed);
    for (suffix, v) in CHANNELS.iter().zip(&channels) {
        nifti::save_volume(v, dir.join(format!("{id}_{suffix}.nii.gz"))).unwrap();
    }
    nifti::save_mask(&mask, dir.join(format!("{id}_seg.nii.gz"))).unwrap();
    dir
}

pub fn write_dataset(root: &Path, n: usize, shape: [usize; 3]) -> Vec<String> {
    (0..n)
        .map(|i| {
            let id = format!("Brats18_case_{i:03}");
            let group = if i % 3 == 2 { "LGG" } else { "HGG" };
            write_case(root, Some(group), &id, shape, i as u64 + 1);
            id
        })
        .collect()
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
