use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};
use tempfile::tempdir;

use volaug::augment::{
    presets, InMemoryCases, Pipeline, PipelineSpec, RngStream, TransformKind, TransformSpec,
};
use volaug::dataset::{build_index, stratified_split, Layout};
use volaug::metrics::{evaluate, Region};
use volaug::stats::analyze_reports;
use volaug::{nifti, Geometry, Grade, SegMask, Volume};

const SHAPE: [usize; 3] = [14, 12, 10];

fn write_case(root: &Path, group: &str, id: &str, seed: u64) {
    let dir = root.join(group).join(id);
    fs::create_dir_all(&dir).unwrap();
    let mut r = RngStream::derive(seed, 0, 0);
    let g = Geometry::from_spacing([1.0, 1.0, 1.0]);
    for suffix in ["t1", "t1ce", "t2", "flair"] {
        let data = Array4::from_shape_fn((1, SHAPE[0], SHAPE[1], SHAPE[2]), |(_, z, _, _)| {
            if z == 0 {
                0.0
            } else {
                r.uniform(1.0, 100.0) as f32
            }
        });
        let v = Volume::from_parts(data, g, vec![]).unwrap();
        nifti::save_volume(&v, dir.join(format!("{id}_{suffix}.nii.gz"))).unwrap();
    }
    let labels = Array3::from_shape_fn((SHAPE[0], SHAPE[1], SHAPE[2]), |_| {
        [0u8, 1, 2, 4][r.index(4)]
    });
    nifti::save_mask(
        &SegMask::from_parts(labels, g).unwrap(),
        dir.join(format!("{id}_seg.nii")),
    )
    .unwrap();
}

fn spec(pool: Vec<String>) -> PipelineSpec {
    let t = |kind, p| TransformSpec::new(kind, p).unwrap();
    PipelineSpec::new(
        11,
        vec![
            t(TransformKind::NormalizeNonzero, 1.0),
            t(TransformKind::RandSpatialCrop { roi: [8, 8, 8] }, 1.0),
            t(TransformKind::RandFlipZ, 0.5),
            t(
                TransformKind::Msr {
                    alpha: 0.25,
                    allow_self: false,
                },
                1.0,
            ),
            t(TransformKind::Spn { alpha: 0.1 }, 1.0),
        ],
    )
    .with_reference_pool(pool)
}

#[test]
fn disk_to_augmented_disk_and_back() {
    let root = tempdir().unwrap();
    for i in 0..6 {
        write_case(
            root.path(),
            if i < 4 { "HGG" } else { "LGG" },
            &format!("c{i}"),
            i,
        );
    }
    let idx = build_index(root.path(), &Layout::brats()).unwrap();
    assert_eq!(idx.len(), 6);
    assert_eq!(
        idx.cases.iter().filter(|c| c.grade == Grade::Lgg).count(),
        2
    );

    let split = stratified_split(&idx, [0.5, 0.25, 0.25], 3).unwrap();
    assert_eq!(
        split.train.len() + split.validation.len() + split.test.len(),
        6
    );

    let cases: Vec<_> = idx
        .cases
        .iter()
        .map(|e| idx.load_case(e).unwrap())
        .collect();
    assert_eq!(cases[0].volume.shape(), [4, SHAPE[0], SHAPE[1], SHAPE[2]]);
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let spec = spec(ids);
    spec.validate().unwrap();
    let source = InMemoryCases::new(cases.clone());
    let pipeline = Pipeline::new(&spec, &source).unwrap();

    let out = tempdir().unwrap();
    let mut pred = BTreeMap::new();
    for (i, case) in cases.iter().enumerate() {
        let (aug, prov) = pipeline.run(case, i as u64).unwrap();
        assert_eq!(aug.volume.spatial_shape(), [8, 8, 8]);
        assert!(prov
            .steps
            .iter()
            .all(|s| s.applied || s.kind == "rand_flip_z"));
        let again = pipeline.run(case, i as u64).unwrap();
        assert_eq!(aug, again.0);

        let paths: Vec<_> = (0..4)
            .map(|c| out.path().join(format!("{}_{c}.nii", case.id)))
            .collect();
        nifti::save_channels(&aug.volume, &paths).unwrap();
        let mask = aug.mask.unwrap();
        let mp = out.path().join(format!("{}_seg.nii.gz", case.id));
        nifti::save_mask(&mask, &mp).unwrap();
        let names: Vec<String> = aug.volume.channel_names().to_vec();
        let back = nifti::load_channels(&paths, &names).unwrap();
        assert_eq!(back.data(), aug.volume.data());
        assert!(mask.labels().iter().all(|l| [0, 1, 2, 4].contains(l)));
        pred.insert(case.id.clone(), nifti::load_mask(&mp).unwrap());
    }

    let report = evaluate(&pred, &pred).unwrap();
    assert_eq!(report.overall_mean, 1.0);
    let other = evaluate(
        &pred,
        &pred
            .iter()
            .map(|(k, m)| {
                (
                    k.clone(),
                    m.with_labels(m.labels().mapv(|l| if l == 4 { 1 } else { l }))
                        .unwrap(),
                )
            })
            .collect(),
    )
    .unwrap();
    let stats = analyze_reports(&[("same".into(), report), ("relabelled".into(), other)]).unwrap();
    assert_eq!(stats[&Region::WholeTumor].anova.p_value, 1.0);
    assert!(stats[&Region::EnhancingTumor].anova.f > 0.0);
}

#[test]
fn presets_run_on_small_volumes_once_roi_is_reduced() {
    let g = Geometry::default();
    let mut r = RngStream::derive(1, 2, 3);
    let cases: Vec<_> = (0..3)
        .map(|i| {
            let v = Volume::from_parts(
                Array4::from_shape_fn((2, 20, 20, 20), |_| r.uniform(0.0, 5.0) as f32),
                g,
                vec![],
            )
            .unwrap();
            volaug::Case::new(format!("p{i}"), v, None, Grade::Unknown).unwrap()
        })
        .collect();
    let pool: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    for name in presets::NAMES {
        let mut spec = presets::load(name, &pool).unwrap();
        for t in &mut spec.transforms {
            match &mut t.kind {
                TransformKind::RandSpatialCrop { roi } => *roi = [16, 16, 16],
                TransformKind::RandElasticAffine(e) => e.grid_spacing = [6, 6, 6],
                _ => {}
            }
        }
        let source = InMemoryCases::new(cases.clone());
        let pipeline = Pipeline::new(&spec, &source).unwrap();
        for (i, c) in cases.iter().enumerate() {
            let (out, _) = pipeline.run(c, i as u64).unwrap();
            assert_eq!(out.volume.shape(), [2, 16, 16, 16], "{name}");
            assert!(out.volume.data().iter().all(|v| v.is_finite()));
        }
    }
}
