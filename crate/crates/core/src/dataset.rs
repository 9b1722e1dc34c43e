//! Dataset discovery and the grade-stratified train/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nifti::{self, NiftiError};
use crate::volume::{Case, Grade, VolumeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("case {case} is missing channel {channel}")]
    MissingChannel { case: String, channel: String },
    #[error("case {case} has no segmentation")]
    MissingMask { case: String },
    #[error("case id {0} appears more than once")]
    DuplicateId(String),
    #[error("stratum {0} is empty")]
    EmptyStratum(String),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("unrecognised grade {0:?}")]
    UnknownGrade(String),
    #[error("case {case}: {source}")]
    Load {
        case: String,
        #[source]
        source: NiftiError,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    /// Name carried into the volume, e.g. `T1Gd`.
    pub name: String,
    /// File-name suffix, e.g. `t1ce` for `<case>_t1ce.nii.gz`.
    pub suffix: String,
}

/// File naming convention: `<case_dir>/<case_id>_<suffix>.nii[.gz]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub channels: Vec<ChannelSpec>,
    pub mask_suffix: String,
    pub require_masks: bool,
}

impl Layout {
    /// BraTS 2018 naming: `t1`, `t1ce`, `t2`, `flair` and `seg`.
    pub fn brats() -> Self {
        let ch = |name: &str, suffix: &str| ChannelSpec {
            name: name.into(),
            suffix: suffix.into(),
        };
        Self {
            channels: vec![
                ch("T1", "t1"),
                ch("T1Gd", "t1ce"),
                ch("T2", "t2"),
                ch("FLAIR", "flair"),
            ],
            mask_suffix: "seg".into(),
            require_masks: true,
        }
    }

    fn suffixes(&self) -> impl Iterator<Item = &str> {
        self.channels
            .iter()
            .map(|c| c.suffix.as_str())
            .chain(std::iter::once(self.mask_suffix.as_str()))
    }
}

impl Default for Layout {
    fn default() -> Self {
        Self::brats()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub grade: Grade,
    /// One path per layout channel, relative to the index root.
    pub channels: Vec<PathBuf>,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub channel_names: Vec<String>,
    /// Sorted by id.
    pub cases: Vec<IndexEntry>,
}

impl DatasetIndex {
    /// Builds an index from explicit entries, checking id uniqueness.
    pub fn new(
        root: PathBuf,
        channel_names: Vec<String>,
        mut cases: Vec<IndexEntry>,
    ) -> Result<Self> {
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = cases.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DatasetError::DuplicateId(w[0].id.clone()));
        }
        Ok(Self {
            root,
            channel_names,
            cases,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.cases
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.cases[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.cases.binary_search_by(|e| e.id.as_str().cmp(id)).ok()
    }

    pub fn channel_paths(&self, entry: &IndexEntry) -> Vec<PathBuf> {
        entry.channels.iter().map(|p| self.root.join(p)).collect()
    }

    pub fn mask_path(&self, entry: &IndexEntry) -> Option<PathBuf> {
        entry.mask.as_ref().map(|p| self.root.join(p))
    }

    /// Reads the channels (and mask, if indexed) of one case from disk.
    pub fn load_case(&self, entry: &IndexEntry) -> Result<Case> {
        let wrap = |source| DatasetError::Load {
            case: entry.id.clone(),
            source,
        };
        let volume =
            nifti::load_channels(&self.channel_paths(entry), &self.channel_names).map_err(wrap)?;
        let mask = match self.mask_path(entry) {
            Some(p) => Some(nifti::load_mask(p).map_err(wrap)?),
            None => None,
        };
        Ok(Case::new(entry.id.clone(), volume, mask, entry.grade)?)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn find_image(dir: &Path, id: &str, suffix: &str) -> Option<PathBuf> {
    [".nii.gz", ".nii"]
        .iter()
        .map(|ext| dir.join(format!("{id}_{suffix}{ext}")))
        .find(|p| p.is_file())
}

fn parse_grade(s: &str) -> Option<Grade> {
    match s.trim().to_ascii_uppercase().as_str() {
        "HGG" => Some(Grade::Hgg),
        "LGG" => Some(Grade::Lgg),
        "UNKNOWN" => Some(Grade::Unknown),
        _ => None,
    }
}

/// Scans `root` and `root/<group>/` for case directories. A directory named
/// `<id>` is a case when it holds at least one `<id>_<suffix>.nii[.gz]`
/// file. The grade comes from a `grade.txt` sidecar in the case directory,
/// else from an `HGG`/`LGG` parent directory, else is `Unknown`.
pub fn build_index(root: &Path, layout: &Layout) -> Result<DatasetIndex> {
    let mut candidates: Vec<(PathBuf, Option<Grade>)> = Vec::new();
    for dir in sorted_dirs(root)? {
        let name = dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        match parse_grade(&name).filter(|g| *g != Grade::Unknown) {
            Some(g) => candidates.extend(sorted_dirs(&dir)?.into_iter().map(|d| (d, Some(g)))),
            None => candidates.push((dir, None)),
        }
    }

    let mut cases = Vec::new();
    let mut seen = BTreeSet::new();
    for (dir, parent_grade) in candidates {
        let id = dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if !layout
            .suffixes()
            .any(|s| find_image(&dir, &id, s).is_some())
        {
            continue;
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId(id));
        }
        let rel = |p: PathBuf| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or(p);
        let mut channels = Vec::with_capacity(layout.channels.len());
        for ch in &layout.channels {
            let p =
                find_image(&dir, &id, &ch.suffix).ok_or_else(|| DatasetError::MissingChannel {
                    case: id.clone(),
                    channel: ch.name.clone(),
                })?;
            channels.push(rel(p));
        }
        let mask = find_image(&dir, &id, &layout.mask_suffix).map(rel);
        if mask.is_none() && layout.require_masks {
            return Err(DatasetError::MissingMask { case: id });
        }
        let sidecar = dir.join("grade.txt");
        let grade = if sidecar.is_file() {
            let text = fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
            parse_grade(&text).ok_or(DatasetError::UnknownGrade(text.trim().to_string()))?
        } else {
            parent_grade.unwrap_or(Grade::Unknown)
        };
        cases.push(IndexEntry {
            id,
            grade,
            channels,
            mask,
        });
    }
    DatasetIndex::new(
        root.to_path_buf(),
        layout.channels.iter().map(|c| c.name.clone()).collect(),
        cases,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Integer partition sizes of `n` proportional to `ratios`. Each size is the
/// floor or ceiling of its quota; the leftover after flooring goes to the
/// largest fractional parts, ties resolved in order train, validation, test.
pub fn partition_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    // quotas are snapped to 1e-9 so that 0.1·75 and 0.1·75 tie exactly
    let quotas = ratios.map(|r| (n as f64 * r * 1e9).round() / 1e9);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DatasetError::InvalidRatios(ratios))
    }
}

fn grade_code(g: Grade) -> u64 {
    match g {
        Grade::Hgg => 1,
        Grade::Lgg => 2,
        Grade::Unknown => 3,
    }
}

/// Splits every grade stratum separately so each partition keeps the
/// dataset's grade proportions. Output id lists are sorted.
pub fn stratified_split(idx: &DatasetIndex, ratios: [f64; 3], seed: u64) -> Result<Split> {
    validate_ratios(ratios)?;
    if idx.is_empty() {
        return Err(DatasetError::EmptyStratum("all".into()));
    }
    let mut strata: BTreeMap<Grade, Vec<String>> = BTreeMap::new();
    for e in &idx.cases {
        strata.entry(e.grade).or_default().push(e.id.clone());
    }
    let mut parts: [Vec<String>; 3] = Default::default();
    for (grade, mut ids) in strata {
        ids.sort();
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&grade_code(grade).to_le_bytes());
        ids.shuffle(&mut ChaCha8Rng::from_seed(key));
        let sizes = partition_sizes(ids.len(), ratios);
        let mut rest = ids.as_slice();
        for (part, size) in parts.iter_mut().zip(sizes) {
            let (head, tail) = rest.split_at(size);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    for p in &mut parts {
        p.sort();
    }
    let [train, validation, test] = parts;
    Ok(Split {
        train,
        validation,
        test,
        seed,
    })
}
