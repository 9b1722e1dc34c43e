mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use ndarray::Array3;
use tempfile::tempdir;
use volaug::dataset::{DatasetIndex, Layout};
use volaug::{nifti, SegMask};
use volaug_cli::commands::{self, AugmentRequest};

use common::*;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_volaug"));
    for var in [
        "APP_CONFIG",
        "APP_SEED",
        "APP_WORKERS",
        "APP_OUT",
        "APP_FORMAT",
    ] {
        c.env_remove(var);
    }
    c
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn index_one_case() {
    let root = tempdir().unwrap();
    let out = tempdir().unwrap();
    write_case(root.path(), Some("HGG"), "Brats18_A", [6, 6, 6], 1);
    run_ok(&["index", "--root", s(root.path()), "--out", s(out.path())]);
    let idx: DatasetIndex =
        serde_json::from_str(&fs::read_to_string(out.path().join("index.json")).unwrap()).unwrap();
    assert_eq!(idx.len(), 1);
    assert_eq!(idx.cases[0].id, "Brats18_A");
}

#[test]
fn index_is_sorted_and_byte_stable() {
    let root = tempdir().unwrap();
    for (i, id) in ["c3", "a1", "b2"].iter().enumerate() {
        write_case(root.path(), Some("LGG"), id, [5, 5, 5], i as u64);
    }
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    commands::cmd_index(root.path(), &Layout::brats(), a.path()).unwrap();
    commands::cmd_index(root.path(), &Layout::brats(), b.path()).unwrap();
    let text = fs::read(a.path().join("index.json")).unwrap();
    assert_eq!(text, fs::read(b.path().join("index.json")).unwrap());
    let idx: DatasetIndex = serde_json::from_slice(&text).unwrap();
    let ids: Vec<_> = idx.cases.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["a1", "b2", "c3"]);
}

#[test]
fn index_missing_channel_fails() {
    let root = tempdir().unwrap();
    let dir = write_case(root.path(), None, "broken", [4, 4, 4], 1);
    fs::remove_file(dir.join("broken_flair.nii.gz")).unwrap();
    let out = tempdir().unwrap();
    let res = bin()
        .args(["index", "--root", s(root.path()), "--out", s(out.path())])
        .output()
        .unwrap();
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("broken") && err.contains("FLAIR"), "{err}");
}

#[test]
fn split_writes_manifest() {
    let root = tempdir().unwrap();
    let out = tempdir().unwrap();
    write_dataset(root.path(), 6, [4, 4, 4]);
    run_ok(&["index", "--root", s(root.path()), "--out", s(out.path())]);
    let index = out.path().join("index.json");
    let stdout = run_ok(&[
        "split",
        "--index",
        s(&index),
        "--ratios",
        "0.5,0.25,0.25",
        "--seed",
        "3",
        "--out",
        s(out.path()),
    ]);
    assert!(stdout.contains("train"));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("split.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    let total: usize = ["train", "validation", "test"]
        .iter()
        .map(|k| m[k].as_array().unwrap().len())
        .sum();
    assert_eq!(total, 6);
}

fn indexed(n: usize, shape: [usize; 3]) -> (tempfile::TempDir, tempfile::TempDir) {
    let root = tempdir().unwrap();
    let work = tempdir().unwrap();
    write_dataset(root.path(), n, shape);
    commands::cmd_index(root.path(), &Layout::brats(), work.path()).unwrap();
    (root, work)
}

#[test]
fn empty_pipeline_reproduces_inputs() {
    let (root, work) = indexed(2, [6, 7, 8]);
    let config = work.path().join("empty.toml");
    fs::write(&config, "master_seed = 1\n").unwrap();
    let out = work.path().join("aug");
    run_ok(&[
        "augment",
        "--index",
        s(&work.path().join("index.json")),
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]);
    let idx: DatasetIndex =
        serde_json::from_str(&fs::read_to_string(work.path().join("index.json")).unwrap()).unwrap();
    for entry in &idx.cases {
        let mut inputs = idx.channel_paths(entry);
        inputs.push(idx.mask_path(entry).unwrap());
        for input in inputs {
            let output = out.join(&entry.id).join(input.file_name().unwrap());
            assert_eq!(
                fs::read(&input).unwrap(),
                fs::read(&output).unwrap(),
                "{}",
                output.display()
            );
        }
    }
    drop(root);
}

fn msr_request(work: &Path, out: &Path, workers: usize) -> AugmentRequest {
    let text = r#"
master_seed = 9
spn_permutation_seed = 4

[[transform]]
kind = "normalize_nonzero"
p = 1.0

[[transform]]
kind = "rand_spatial_crop"
p = 1.0
[transform.params]
roi = [6, 6, 6]

[[transform]]
kind = "msr"
p = 1.0
[transform.params]
alpha = 1e-4
"#;
    let config = work.join("msr.toml");
    fs::write(&config, text).unwrap();
    let idx: DatasetIndex =
        serde_json::from_str(&fs::read_to_string(work.join("index.json")).unwrap()).unwrap();
    let ids: Vec<String> = idx.cases.iter().map(|c| c.id.clone()).collect();
    AugmentRequest {
        index: work.join("index.json"),
        spec: commands::load_spec(Some(&config), "baseline", None, &ids).unwrap(),
        cases: None,
        workers,
        out: out.to_path_buf(),
    }
}

#[test]
fn msr_rerun_is_byte_identical() {
    let (_root, work) = indexed(3, [8, 8, 8]);
    let a = work.path().join("a");
    let b = work.path().join("b");
    let first = commands::cmd_augment(&msr_request(work.path(), &a, 2)).unwrap();
    commands::cmd_augment(&msr_request(work.path(), &b, 3)).unwrap();
    assert!(first.failures.is_empty());
    assert_eq!(snapshot(&a), snapshot(&b));
    let prov = &first.provenance;
    assert_eq!(prov.len(), 3);
    assert!(prov.windows(2).all(|w| w[0].case_id < w[1].case_id));
    assert!(prov.iter().all(|p| p.steps.iter().all(|s| s.applied)));
}

#[test]
fn augment_subset_and_seed_override() {
    let (_root, work) = indexed(4, [8, 8, 8]);
    let index = work.path().join("index.json");
    run_ok(&[
        "split",
        "--index",
        s(&index),
        "--ratios",
        "0.5,0.25,0.25",
        "--out",
        s(work.path()),
    ]);
    let out = work.path().join("aug");
    let config = work.path().join("flip.toml");
    fs::write(
        &config,
        "master_seed = 1\n[[transform]]\nkind = \"rand_flip_z\"\np = 0.5\n",
    )
    .unwrap();
    run_ok(&[
        "augment",
        "--index",
        s(&index),
        "--split",
        s(&work.path().join("split.json")),
        "--subset",
        "train",
        "--config",
        s(&config),
        "--seed",
        "77",
        "--workers",
        "2",
        "--out",
        s(&out),
    ]);
    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    let prov = prov.as_array().unwrap();
    assert_eq!(prov.len(), 2);
    assert!(prov.iter().all(|p| p["master_seed"] == 77));
}

#[test]
fn augment_failure_sets_exit_code() {
    let (_root, work) = indexed(2, [6, 6, 6]);
    let config = work.path().join("crop.toml");
    fs::write(
        &config,
        "master_seed = 1\n[[transform]]\nkind = \"rand_spatial_crop\"\np = 1.0\n[transform.params]\nroi = [9, 9, 9]\n",
    )
    .unwrap();
    let res = bin()
        .args([
            "augment",
            "--index",
            s(&work.path().join("index.json")),
            "--config",
            s(&config),
            "--out",
            s(&work.path().join("aug")),
        ])
        .output()
        .unwrap();
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(
        err.contains("Brats18_case_000") && err.contains("Brats18_case_001"),
        "{err}"
    );
}

fn mask_file(dir: &Path, id: &str, labels: Array3<u8>) {
    fs::create_dir_all(dir).unwrap();
    nifti::save_mask(
        &SegMask::new(labels).unwrap(),
        dir.join(format!("{id}.nii.gz")),
    )
    .unwrap();
}

#[test]
fn evaluate_identical_masks() {
    let (root, work) = indexed(2, [6, 6, 6]);
    let out = work.path().join("eval");
    let stdout = run_ok(&[
        "evaluate",
        "--pred",
        s(&root.path().join("HGG")),
        "--gt",
        s(&root.path().join("HGG")),
        "--out",
        s(&out),
        "--format",
        "csv",
    ]);
    assert!(stdout.starts_with("case_id,WT,TC,ET"));
    let csv = fs::read_to_string(out.join("dice.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(
            line.ends_with(",1,1,1") || line.ends_with(",1.0,1.0,1.0"),
            "{line}"
        );
    }
    assert!(out.join("dice.json").is_file());
}

#[test]
fn evaluate_hand_counted_dice() {
    let tmp = tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    // case a: gt has four label-2 voxels, pred marks two of them plus one extra
    let mut g = Array3::zeros((2, 2, 2));
    for i in 0..4 {
        g[[0, i / 2, i % 2]] = 2;
    }
    let mut p = Array3::zeros((2, 2, 2));
    p[[0, 0, 0]] = 2;
    p[[0, 0, 1]] = 2;
    p[[1, 1, 1]] = 2;
    mask_file(&gt, "a", g);
    mask_file(&pred, "a", p);
    // case b: gt label 4 on one voxel, pred label 1 on the same voxel
    let mut g = Array3::zeros((2, 2, 2));
    g[[1, 0, 0]] = 4;
    let mut p = Array3::zeros((2, 2, 2));
    p[[1, 0, 0]] = 1;
    mask_file(&gt, "b", g);
    mask_file(&pred, "b", p);
    let out = tmp.path().join("out");
    let report = commands::cmd_evaluate(&pred, &gt, &out).unwrap();
    let a = report.per_case["a"].scores;
    assert_eq!(a.wt, 2.0 * 2.0 / (3.0 + 4.0));
    assert_eq!(a.tc, 1.0);
    assert_eq!(a.et, 1.0);
    let b = report.per_case["b"].scores;
    assert_eq!((b.wt, b.tc, b.et), (1.0, 1.0, 0.0));
}

#[test]
fn evaluate_case_set_mismatch_fails() {
    let tmp = tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    mask_file(&pred, "a", Array3::zeros((2, 2, 2)));
    mask_file(&gt, "b", Array3::zeros((2, 2, 2)));
    let res = bin()
        .args([
            "evaluate",
            "--pred",
            s(&pred),
            "--gt",
            s(&gt),
            "--out",
            s(&tmp.path().join("o")),
        ])
        .output()
        .unwrap();
    assert!(!res.status.success());
}

fn report_csv(dir: &Path, name: &str, rows: &[(&str, [f64; 3])]) -> String {
    let mut text = String::from("case_id,WT,TC,ET\n");
    for (id, v) in rows {
        text.push_str(&format!("{id},{},{},{}\n", v[0], v[1], v[2]));
    }
    let path = dir.join(format!("{name}.csv"));
    fs::write(&path, text).unwrap();
    format!("{name}={}", path.display())
}

#[test]
fn analyze_identical_reports() {
    let tmp = tempdir().unwrap();
    let rows = [
        ("a", [0.8, 0.7, 0.6]),
        ("b", [0.9, 0.6, 0.7]),
        ("c", [0.85, 0.75, 0.5]),
    ];
    let r1 = report_csv(tmp.path(), "base", &rows);
    let r2 = report_csv(tmp.path(), "same", &rows);
    let out = tmp.path().join("stats");
    run_ok(&[
        "analyze",
        "--report",
        &r1,
        "--report",
        &r2,
        "--out",
        s(&out),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    for region in ["WT", "TC", "ET"] {
        assert_eq!(v[region]["anova"]["p_value"], 1.0);
        assert_eq!(v[region]["paired"][0]["p_value"], 1.0);
    }
    let boxplot = fs::read_to_string(out.join("boxplot.csv")).unwrap();
    assert_eq!(boxplot.lines().count(), 1 + 3 * 2);
}

#[test]
fn analyze_consistent_offset_is_degenerate() {
    let tmp = tempdir().unwrap();
    let base = [
        ("a", [0.5, 0.5, 0.5]),
        ("b", [0.6, 0.6, 0.6]),
        ("c", [0.7, 0.7, 0.7]),
    ];
    let shifted: Vec<_> = base
        .iter()
        .map(|(id, v)| (*id, v.map(|x| x + 0.125)))
        .collect();
    let r1 = report_csv(tmp.path(), "base", &base);
    let r2 = report_csv(tmp.path(), "shifted", &shifted);
    let out = tmp.path().join("stats");
    run_ok(&[
        "analyze",
        "--report",
        &r1,
        "--report",
        &r2,
        "--out",
        s(&out),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(v["WT"]["anova"]["degenerate_variance"], true);
}

#[test]
fn analyze_three_conditions_matches_reference() {
    let tmp = tempdir().unwrap();
    let fixture = [
        [45.0, 50.0, 55.0],
        [42.0, 42.0, 45.0],
        [36.0, 41.0, 43.0],
        [39.0, 35.0, 40.0],
        [51.0, 55.0, 59.0],
    ];
    let ids = ["s1", "s2", "s3", "s4", "s5"];
    let args: Vec<String> = (0..3)
        .map(|c| {
            let rows: Vec<_> = ids
                .iter()
                .zip(&fixture)
                .map(|(id, r)| (*id, [r[c] / 100.0; 3]))
                .collect();
            report_csv(tmp.path(), &format!("cond{c}"), &rows)
        })
        .collect();
    let out = tmp.path().join("stats");
    let results = commands::cmd_analyze(
        &args
            .iter()
            .map(|a| {
                let (n, p) = a.split_once('=').unwrap();
                (n.to_string(), p.into())
            })
            .collect::<Vec<_>>(),
        volaug::stats::Sphericity::Uncorrected,
        &out,
    )
    .unwrap();
    // frozen output of a reference repeated-measures ANOVA on the same table
    let a = &results[&volaug::metrics::Region::WholeTumor].anova;
    assert!((a.f - 8.427184466019414).abs() < 1e-6);
    assert!((a.p_value - 0.01073368844985963).abs() < 1e-6);
}

#[test]
fn verify_math_passes() {
    let stdout = run_ok(&["verify-math"]);
    assert!(stdout.contains("0.0053589"), "{stdout}");
    assert!(stdout.contains("1.7500000"), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn env_overrides_flags() {
    let out = tempdir().unwrap();
    let res = bin()
        .args(["verify-math"])
        .env("APP_FORMAT", "csv")
        .env("APP_OUT", out.path())
        .output()
        .unwrap();
    assert!(res.status.success());
    let bad = bin()
        .args(["verify-math"])
        .env("APP_FORMAT", "yaml")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
