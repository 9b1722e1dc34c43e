//! NIfTI-1 reading and writing for [`Volume`] and [`SegMask`].
//!
//! Single-file (`n+1`) and header/image pair (`ni1`) layouts are read in
//! either byte order, gzip-compressed when the name ends in `.gz`. Writes
//! produce a little-endian single-file image, gzipped for `.gz` paths, with
//! a fixed gzip header so identical volumes give identical bytes.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayView, Axis, Dimension, RemoveAxis};
use nifti::writer::WriterOptions;
use nifti::{
    DataElement, Endianness, InMemNiftiVolume, IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions,
};
use thiserror::Error;

use crate::volume::{Geometry, SegMask, Volume, VolumeError, LEGAL_LABELS};

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("{0}: file not found")]
    NotFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensions {0:?}")]
    UnsupportedDimensions(Vec<i64>),
    #[error("{count} non-finite voxel(s)")]
    NonFiniteData { count: usize },
    #[error("illegal label {value} ({count} voxel(s))")]
    IllegalLabel { value: f64, count: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

fn convert(path: &Path, e: nifti::NiftiError) -> NiftiError {
    use nifti::NiftiError as E;
    let io = |source: std::io::Error| match source.kind() {
        ErrorKind::NotFound => NiftiError::NotFound(path.to_path_buf()),
        ErrorKind::UnexpectedEof => {
            NiftiError::MalformedHeader(format!("truncated file: {source}"))
        }
        _ => NiftiError::Io {
            path: path.to_path_buf(),
            source,
        },
    };
    match e {
        E::Io(source) | E::MissingVolumeFile(source) => io(source),
        E::UnsupportedDataType(t) | E::InvalidTypeConversion(t, _) => {
            NiftiError::UnsupportedDatatype(t as i16)
        }
        other => NiftiError::MalformedHeader(other.to_string()),
    }
}

/// Extents in NIfTI order `(x, y, z, t)`; dims past the fourth must be 1.
fn extents(h: &NiftiHeader) -> Result<[usize; 4]> {
    let ndim = usize::from(h.dim[0]);
    let raw: Vec<i64> = h.dim[..=ndim.min(7)]
        .iter()
        .map(|&d| i64::from(d))
        .collect();
    if !(3..=7).contains(&ndim) || (ndim > 4 && h.dim[5..=ndim].iter().any(|&d| d != 1)) {
        return Err(NiftiError::UnsupportedDimensions(raw));
    }
    let mut dims = [1usize; 4];
    for (i, d) in dims.iter_mut().enumerate().take(ndim.min(4)) {
        *d = usize::from(h.dim[i + 1]);
    }
    Ok(dims)
}

fn geometry(h: &NiftiHeader) -> Geometry {
    let xyz = [h.pixdim[1], h.pixdim[2], h.pixdim[3]].map(|s| {
        let s = s.abs();
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    });
    let spacing = [xyz[2], xyz[1], xyz[0]];
    let affine = if h.sform_code > 0 {
        [h.srow_x, h.srow_y, h.srow_z, [0.0, 0.0, 0.0, 1.0]]
    } else if h.qform_code > 0 {
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        quaternion_affine(
            [h.quatern_b, h.quatern_c, h.quatern_d],
            [h.quatern_x, h.quatern_y, h.quatern_z],
            xyz,
            qfac,
        )
    } else {
        Geometry::from_spacing(spacing).affine
    };
    Geometry { spacing, affine }
}

fn quaternion_affine(bcd: [f32; 3], offset: [f32; 3], pix: [f32; 3], qfac: f32) -> [[f32; 4]; 4] {
    let [b, c, d] = bcd.map(f64::from);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ];
    let scale = [
        f64::from(pix[0]),
        f64::from(pix[1]),
        f64::from(pix[2]) * f64::from(qfac),
    ];
    let mut out = [[0.0f32; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (r[i][j] * scale[j]) as f32;
        }
        out[i][3] = offset[i];
    }
    out[3][3] = 1.0;
    out
}

/// Reads one image as `T`, returning voxels with x fastest.
fn read<T: DataElement>(path: &Path) -> Result<(NiftiHeader, [usize; 4], Vec<T>)> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| convert(path, e))?;
    let mut header = obj.header().clone();
    let dims = extents(&header)?;
    use nifti::NiftiType as N;
    match header.data_type().map_err(|e| convert(path, e))? {
        N::Uint8
        | N::Int8
        | N::Uint16
        | N::Int16
        | N::Uint32
        | N::Int32
        | N::Uint64
        | N::Int64
        | N::Float32
        | N::Float64 => {}
        other => return Err(NiftiError::UnsupportedDatatype(other as i16)),
    }
    // an identity scaling is skipped so that stored values come back bit for bit
    let (slope, inter) = (header.scl_slope, header.scl_inter);
    if !slope.is_finite() || !inter.is_finite() || (slope == 1.0 && inter == 0.0) {
        header.scl_slope = 0.0;
        header.scl_inter = 0.0;
    }
    let volume = InMemNiftiVolume::from_raw_data(&header, obj.into_volume().into_raw_data())
        .and_then(|v| v.into_ndarray::<T>())
        .map_err(|e| convert(path, e))?;
    // column-major storage: reversing the axes walks memory in order
    let values = volume.t().iter().cloned().collect();
    Ok((header, dims, values))
}

/// Loads a 3D or 4D image as a `(channel, z, y, x)` float volume. A 3D file
/// becomes a single channel; the fourth NIfTI dimension becomes channels.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (header, [nx, ny, nz, nt], data) = read::<f32>(path.as_ref())?;
    let non_finite = data.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        return Err(NiftiError::NonFiniteData { count: non_finite });
    }
    let data = Array4::from_shape_vec((nt, nz, ny, nx), data)
        .map_err(|e| NiftiError::MalformedHeader(e.to_string()))?;
    Ok(Volume::from_parts(data, geometry(&header), Vec::new())?)
}

/// Loads a label map and validates it against the BraTS codes {0, 1, 2, 4}.
pub fn load_mask(path: impl AsRef<Path>) -> Result<SegMask> {
    let (header, [nx, ny, nz, nt], values) = read::<f64>(path.as_ref())?;
    if nt != 1 {
        return Err(NiftiError::UnsupportedDimensions(vec![
            4, nx as i64, ny as i64, nz as i64, nt as i64,
        ]));
    }
    let mut illegal: Option<f64> = None;
    let mut count = 0usize;
    let labels: Vec<u8> = values
        .iter()
        .map(|&v| {
            let legal = v.fract() == 0.0 && LEGAL_LABELS.iter().any(|&l| f64::from(l) == v);
            if legal {
                v as u8
            } else {
                count += 1;
                illegal = Some(match illegal {
                    Some(m) if m <= v || v.is_nan() => m,
                    _ => v,
                });
                0
            }
        })
        .collect();
    if let Some(value) = illegal {
        return Err(NiftiError::IllegalLabel { value, count });
    }
    let labels = Array3::from_shape_vec((nz, ny, nx), labels)
        .map_err(|e| NiftiError::MalformedHeader(e.to_string()))?;
    Ok(SegMask::from_parts(labels, geometry(&header))?)
}

fn header_for(g: &Geometry) -> NiftiHeader {
    let s = g.spacing;
    NiftiHeader {
        pixdim: [1.0, s[2], s[1], s[0], 1.0, 1.0, 1.0, 1.0],
        // millimetres, seconds
        xyzt_units: 2 | 8,
        qform_code: 0,
        sform_code: 1,
        srow_x: g.affine[0],
        srow_y: g.affine[1],
        srow_z: g.affine[2],
        endianness: Endianness::Little,
        ..NiftiHeader::default()
    }
}

/// Writes `data`, indexed `(.., z, y, x)`, through a temporary file in the
/// target directory that is renamed into place.
fn write<A, D>(path: &Path, geometry: &Geometry, data: ArrayView<'_, A, D>) -> Result<()>
where
    A: DataElement + bytemuck::Pod,
    D: Dimension + RemoveAxis,
{
    if data.shape().iter().any(|&d| d > i16::MAX as usize) {
        return Err(NiftiError::UnsupportedDimensions(
            data.shape().iter().map(|&d| d as i64).collect(),
        ));
    }
    let io = |source| NiftiError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let suffix = if path.to_string_lossy().ends_with(".gz") {
        ".nii.gz"
    } else {
        ".nii"
    };
    let tmp = tempfile::Builder::new()
        .prefix(".volaug-")
        .suffix(suffix)
        .tempfile_in(dir)
        .map_err(io)?;
    let header = header_for(geometry);
    WriterOptions::new(tmp.path())
        .reference_header(&header)
        .write_nifti(&data.t())
        .map_err(|e| convert(path, e))?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes a float32 image. Single-channel volumes are written as 3D files.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    if v.channels() == 1 {
        write(path.as_ref(), v.geometry(), v.data().index_axis(Axis(0), 0))
    } else {
        write(path.as_ref(), v.geometry(), v.data().view())
    }
}

/// Writes a uint8 label map.
pub fn save_mask(m: &SegMask, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), m.geometry(), m.labels().view())
}

/// Loads several single-channel files and stacks them as channels.
pub fn load_channels<P: AsRef<Path>>(paths: &[P], names: &[String]) -> Result<Volume> {
    let mut parts = Vec::with_capacity(paths.len());
    for p in paths {
        parts.push(load_volume(p)?);
    }
    let first = parts
        .first()
        .ok_or_else(|| NiftiError::MalformedHeader("no channel files".into()))?;
    let geometry = *first.geometry();
    let shape = first.spatial_shape();
    let mut views = Vec::with_capacity(parts.len());
    for p in &parts {
        if p.spatial_shape() != shape {
            return Err(NiftiError::MalformedHeader(format!(
                "channel shape {:?} differs from {:?}",
                p.spatial_shape(),
                shape
            )));
        }
        views.push(p.data().view());
    }
    let data = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| NiftiError::MalformedHeader(e.to_string()))?;
    Ok(Volume::from_parts(data, geometry, names.to_vec())?)
}

/// Writes each channel of `v` to its own 3D file.
pub fn save_channels<P: AsRef<Path>>(v: &Volume, paths: &[P]) -> Result<()> {
    if paths.len() != v.channels() {
        return Err(NiftiError::UnsupportedDimensions(vec![
            v.channels() as i64,
            paths.len() as i64,
        ]));
    }
    for (c, p) in paths.iter().enumerate() {
        write(p.as_ref(), v.geometry(), v.data().index_axis(Axis(0), c))?;
    }
    Ok(())
}
