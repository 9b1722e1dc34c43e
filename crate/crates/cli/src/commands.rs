use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use volaug::augment::{presets, AugmentError, CaseSource, Pipeline, PipelineSpec, Provenance};
use volaug::dataset::{build_index, stratified_split, DatasetIndex, Layout, Split};
use volaug::metrics::{evaluate, DiceReport, Region};
use volaug::stats::{analyze_reports_with, write_boxplot_csv, Sphericity, StatsResult};
use volaug::{nifti, Case, SegMask};

use crate::args::{Format, Subset};
use crate::verify::{run_checks, Check};

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failed,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_index(root: &Path, layout: &Layout, out: &Path) -> Result<DatasetIndex> {
    let idx = build_index(root, layout).with_context(|| format!("indexing {}", root.display()))?;
    write_json(&out.join("index.json"), &idx)?;
    Ok(idx)
}

pub fn cmd_split(index: &Path, ratios: [f64; 3], seed: u64, out: &Path) -> Result<Split> {
    let idx: DatasetIndex = read_json(index)?;
    let split = stratified_split(&idx, ratios, seed)?;
    write_json(&out.join("split.json"), &split)?;
    Ok(split)
}

/// Reads cases listed in an index; a case's position in the index is its stream index.
pub struct IndexSource<'a> {
    pub index: &'a DatasetIndex,
}

impl CaseSource for IndexSource<'_> {
    fn case_index(&self, id: &str) -> Option<u64> {
        self.index.position(id).map(|i| i as u64)
    }

    fn load(&self, id: &str) -> Result<Case, AugmentError> {
        let entry = self
            .index
            .get(id)
            .ok_or_else(|| AugmentError::UnknownCase(id.into()))?;
        self.index
            .load_case(entry)
            .map_err(|e| AugmentError::Source(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct AugmentRequest {
    pub index: PathBuf,
    pub spec: PipelineSpec,
    pub cases: Option<Vec<String>>,
    pub workers: usize,
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct AugmentSummary {
    pub provenance: Vec<Provenance>,
    pub failures: Vec<(String, String)>,
}

/// Loads a pipeline from `config`, or the named preset. An empty reference
/// pool is filled with `default_pool`; `seed` overrides the master seed.
pub fn load_spec(
    config: Option<&Path>,
    preset: &str,
    seed: Option<u64>,
    default_pool: &[String],
) -> Result<PipelineSpec> {
    let mut spec = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PipelineSpec::parse(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => presets::load(preset, default_pool)?,
    };
    if spec.reference_pool.is_empty() {
        spec.reference_pool = default_pool.to_vec();
    }
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn output_name(path: &Path) -> PathBuf {
    PathBuf::from(path.file_name().unwrap_or_default())
}

fn augment_one(
    pipeline: &Pipeline<'_, IndexSource<'_>>,
    idx: &DatasetIndex,
    id: &str,
    out: &Path,
) -> Result<Provenance> {
    let entry = idx
        .get(id)
        .with_context(|| format!("case {id} is not in the index"))?;
    let case = idx.load_case(entry)?;
    let position = idx.position(id).expect("entry exists") as u64;
    let (augmented, provenance) = pipeline.run(&case, position)?;
    let dir = out.join(id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let paths: Vec<PathBuf> = idx
        .channel_paths(entry)
        .iter()
        .map(|p| dir.join(output_name(p)))
        .collect();
    nifti::save_channels(&augmented.volume, &paths)?;
    if let (Some(mask), Some(src)) = (&augmented.mask, idx.mask_path(entry)) {
        nifti::save_mask(mask, dir.join(output_name(&src)))?;
    }
    Ok(provenance)
}

/// Runs the pipeline over every selected case on a pool of `workers` threads.
/// Failed cases are reported, not fatal; provenance is in case-id order.
pub fn cmd_augment(req: &AugmentRequest) -> Result<AugmentSummary> {
    let idx: DatasetIndex = read_json(&req.index)?;
    let ids: Vec<String> = match &req.cases {
        Some(ids) => {
            let mut ids = ids.clone();
            ids.sort();
            ids
        }
        None => idx.cases.iter().map(|c| c.id.clone()).collect(),
    };
    let source = IndexSource { index: &idx };
    let pipeline = Pipeline::new(&req.spec, &source)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.workers.max(1))
        .build()
        .context("building worker pool")?;
    let results: Vec<(String, Result<Provenance>)> = pool.install(|| {
        ids.par_iter()
            .map(|id| (id.clone(), augment_one(&pipeline, &idx, id, &req.out)))
            .collect()
    });
    let mut provenance = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(p) => provenance.push(p),
            Err(e) => failures.push((id, format!("{e:#}"))),
        }
    }
    write_json(&req.out.join("provenance.json"), &provenance)?;
    Ok(AugmentSummary {
        provenance,
        failures,
    })
}

pub fn split_subset(split: &Split, subset: Subset) -> Vec<String> {
    match subset {
        Subset::Train => split.train.clone(),
        Subset::Validation => split.validation.clone(),
        Subset::Test => split.test.clone(),
    }
}

fn strip_suffixes(name: &str) -> Option<&str> {
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))?;
    Some(stem.strip_suffix("_seg").unwrap_or(stem))
}

/// Collects label maps from `dir`: either `<id>[_seg].nii[.gz]` files or
/// `<id>/<id>_seg.nii[.gz]` case directories.
pub fn collect_masks(dir: &Path) -> Result<BTreeMap<String, SegMask>> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        let name = e.file_name().to_string_lossy().to_string();
        let hit = if path.is_dir() {
            [".nii.gz", ".nii"]
                .iter()
                .map(|ext| path.join(format!("{name}_seg{ext}")))
                .find(|p| p.is_file())
                .map(|p| (name.clone(), p))
        } else {
            strip_suffixes(&name).map(|id| (id.to_string(), path.clone()))
        };
        if let Some((id, p)) = hit {
            if let Some(prev) = found.insert(id.clone(), p) {
                bail!(
                    "case {id} found twice in {} (also {})",
                    dir.display(),
                    prev.display()
                );
            }
        }
    }
    found
        .into_iter()
        .map(|(id, p)| {
            let m = nifti::load_mask(&p).with_context(|| format!("loading {}", p.display()))?;
            Ok((id, m))
        })
        .collect()
}

pub fn cmd_evaluate(pred: &Path, gt: &Path, out: &Path) -> Result<DiceReport> {
    let report = evaluate(&collect_masks(pred)?, &collect_masks(gt)?)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_bytes(&out.join("dice.csv"), &csv)?;
    let mut json = report.summary_json()?;
    json.push('\n');
    write_bytes(&out.join("dice.json"), json.as_bytes())?;
    Ok(report)
}

pub fn cmd_analyze(
    reports: &[(String, PathBuf)],
    sphericity: Sphericity,
    out: &Path,
) -> Result<BTreeMap<Region, StatsResult>> {
    let loaded = reports
        .iter()
        .map(|(name, path)| {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let r =
                DiceReport::read_csv(f).with_context(|| format!("reading {}", path.display()))?;
            Ok((name.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = analyze_reports_with(&loaded, sphericity)?;
    let keyed: BTreeMap<&str, &StatsResult> =
        results.iter().map(|(r, s)| (r.short_name(), s)).collect();
    write_json(&out.join("stats.json"), &keyed)?;
    let rows: Vec<_> = results
        .iter()
        .flat_map(|(r, s)| {
            s.boxplots
                .iter()
                .map(|b| (r.short_name().to_string(), b.clone()))
        })
        .collect();
    let mut csv = Vec::new();
    write_boxplot_csv(&mut csv, &rows)?;
    write_bytes(&out.join("boxplot.csv"), &csv)?;
    Ok(results)
}

pub fn cmd_verify_math(mut w: impl Write) -> Result<(Vec<Check>, Outcome)> {
    let checks = run_checks();
    for c in &checks {
        writeln!(w, "{c}")?;
    }
    let outcome = if checks.iter().all(Check::passed) {
        Outcome::Success
    } else {
        Outcome::Failed
    };
    Ok((checks, outcome))
}

/// Prints a report in the requested format.
pub fn print_report(w: impl Write, report: &DiceReport, format: Format) -> Result<()> {
    let mut w = BufWriter::new(w);
    match format {
        Format::Csv => report.write_csv(&mut w)?,
        Format::Json => writeln!(w, "{}", report.summary_json()?)?,
    }
    Ok(())
}
