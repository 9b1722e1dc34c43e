//! Batch front-end: index, split, augment, evaluate, analyze and verify-math.

pub mod args;
pub mod commands;
pub mod verify;

use std::io::Write;

use anyhow::{ensure, Result};

use args::{Cli, Command};
use commands::{AugmentRequest, Outcome};
use volaug::dataset::{Layout, Split};
use volaug::stats::Sphericity;

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs one invocation, writing human-readable output to `out`.
pub fn run(cli: &Cli, mut out: impl Write) -> Result<Outcome> {
    let g = &cli.global;
    let workers = g.workers.unwrap_or_else(default_workers);
    ensure!(workers > 0, "--workers must be positive");
    match &cli.command {
        Command::Index {
            root,
            allow_missing_masks,
        } => {
            ensure!(
                root.is_dir(),
                "dataset root {} is not a directory",
                root.display()
            );
            let layout = Layout {
                require_masks: !allow_missing_masks,
                ..Layout::brats()
            };
            let idx = commands::cmd_index(root, &layout, &g.out)?;
            writeln!(
                out,
                "indexed {} case(s) into {}",
                idx.len(),
                g.out.join("index.json").display()
            )?;
        }
        Command::Split { index, ratios } => {
            ensure!(index.is_file(), "index {} not found", index.display());
            let split = commands::cmd_split(index, *ratios, g.seed.unwrap_or(0), &g.out)?;
            writeln!(
                out,
                "train {} validation {} test {}",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            )?;
        }
        Command::Augment {
            index,
            preset,
            split,
            subset,
        } => {
            ensure!(index.is_file(), "index {} not found", index.display());
            if let Some(c) = &g.config {
                ensure!(c.is_file(), "config {} not found", c.display());
            }
            let cases = match (split, subset) {
                (Some(path), Some(subset)) => {
                    let text = std::fs::read_to_string(path)?;
                    let split: Split = serde_json::from_str(&text)?;
                    Some(commands::split_subset(&split, *subset))
                }
                _ => None,
            };
            let idx_ids: Vec<String> = match &cases {
                Some(ids) => ids.clone(),
                None => {
                    let idx: volaug::dataset::DatasetIndex =
                        serde_json::from_str(&std::fs::read_to_string(index)?)?;
                    idx.cases.into_iter().map(|c| c.id).collect()
                }
            };
            let spec = commands::load_spec(g.config.as_deref(), preset, g.seed, &idx_ids)?;
            let summary = commands::cmd_augment(&AugmentRequest {
                index: index.clone(),
                spec,
                cases,
                workers,
                out: g.out.clone(),
            })?;
            writeln!(out, "augmented {} case(s)", summary.provenance.len())?;
            for (id, err) in &summary.failures {
                eprintln!("case {id} failed: {err}");
            }
            if !summary.failures.is_empty() {
                return Ok(Outcome::Failed);
            }
        }
        Command::Evaluate { pred, gt } => {
            ensure!(
                pred.is_dir(),
                "prediction directory {} not found",
                pred.display()
            );
            ensure!(
                gt.is_dir(),
                "ground-truth directory {} not found",
                gt.display()
            );
            let report = commands::cmd_evaluate(pred, gt, &g.out)?;
            commands::print_report(&mut out, &report, g.format)?;
        }
        Command::Analyze {
            reports,
            greenhouse_geisser,
        } => {
            for (_, p) in reports {
                ensure!(p.is_file(), "report {} not found", p.display());
            }
            let sphericity = if *greenhouse_geisser {
                Sphericity::GreenhouseGeisser
            } else {
                Sphericity::Uncorrected
            };
            let results = commands::cmd_analyze(reports, sphericity, &g.out)?;
            match g.format {
                args::Format::Json => {
                    let keyed: std::collections::BTreeMap<_, _> =
                        results.iter().map(|(r, s)| (r.short_name(), s)).collect();
                    writeln!(out, "{}", serde_json::to_string_pretty(&keyed)?)?;
                }
                args::Format::Csv => {
                    writeln!(
                        out,
                        "region,f,df_conditions,df_error,p_value,degenerate_variance"
                    )?;
                    for (r, s) in &results {
                        let a = &s.anova;
                        writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            r.short_name(),
                            a.f,
                            a.df_conditions,
                            a.df_error,
                            a.p_value,
                            a.degenerate_variance
                        )?;
                    }
                }
            }
        }
        Command::VerifyMath => return Ok(commands::cmd_verify_math(out)?.1),
    }
    Ok(Outcome::Success)
}
