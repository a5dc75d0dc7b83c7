use std::path::Path;

use cellprompt_core::pipeline::{
    cmd_all, cmd_eval, cmd_features, cmd_hitval, cmd_segment, write_synthetic_plate, Manifest, Overrides,
    RunConfig, FEATURES_FILE, MANIFEST_FILE,
};
use cellprompt_core::synth::PlateSpec;
use cellprompt_core::Error;

fn plate(dir: &Path, images: usize) -> RunConfig {
    let spec = PlateSpec {
        images,
        seed: 11,
        ..Default::default()
    };
    RunConfig::load(&write_synthetic_plate(dir, &spec).unwrap()).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = plate(dir.path(), 20);
    let stages = cmd_all(&cfg).unwrap();
    let names: Vec<&str> = stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["segment", "features", "hitval", "eval"]);
    assert!(stages.iter().all(|s| s.failures() == 0));

    let out = cfg.output_dir();
    for f in [MANIFEST_FILE, FEATURES_FILE, "hitval/zprime.csv", "hitval/ec50.csv", "eval/eval.csv", "eval/summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join("labels/img_000_cells.tif").exists());
    assert!(out.join("diagnostics/img_000.json").exists());

    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.stages.len(), 4);
    let seg = &m.stages["segment"];
    assert_eq!(seg.images.len(), 20);
    // Every recorded checksum matches the file on disk.
    for rec in &seg.images {
        for (rel, sha) in &rec.artifacts {
            assert_eq!(&cellprompt_core::pipeline::sha256_hex(&read(&out.join(rel))), sha);
        }
    }

    let (_, report) = cmd_eval(&cfg).unwrap();
    assert_eq!(report.per_image.len(), 20);
    assert!(report.mean_dsc >= 0.95, "dsc {}", report.mean_dsc);
    assert!(report.mean_iou >= 0.90, "iou {}", report.mean_iou);
}

#[test]
fn artifacts_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = plate(dir.path(), 6);
    let mut outputs = Vec::new();
    for (workers, out) in [(1, "w1"), (4, "w4"), (1, "again")] {
        cfg.apply(&Overrides {
            workers: Some(workers),
            output_dir: Some(out.into()),
            ..Default::default()
        })
        .unwrap();
        cmd_segment(&cfg).unwrap();
        cmd_features(&cfg).unwrap();
        outputs.push(cfg.output_dir());
    }
    let files = [MANIFEST_FILE, FEATURES_FILE, "labels/img_003_cells.tif", "labels/img_005_subcellular.tif", "diagnostics/img_002.json"];
    for f in files {
        let a = read(&outputs[0].join(f));
        assert_eq!(a, read(&outputs[1].join(f)), "{f} differs across worker counts");
        assert_eq!(a, read(&outputs[2].join(f)), "{f} differs across runs");
    }
}

#[test]
fn seed_changes_the_config_hash_only_through_settings() {
    let dir = tempfile::tempdir().unwrap();
    let a = plate(dir.path(), 1);
    let mut b = a.clone();
    b.apply(&Overrides {
        seed: Some(12),
        ..Default::default()
    })
    .unwrap();
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn unreadable_image_is_a_per_image_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = plate(dir.path(), 3);
    std::fs::write(dir.path().join("images/img_001.tif"), b"not a tiff").unwrap();
    let stage = cmd_segment(&cfg).unwrap();
    assert_eq!(stage.failures(), 1);
    assert_eq!(stage.images[1].image_id, "img_001");
    assert!(stage.images[1].error.is_some());
    let features = cmd_features(&cfg).unwrap();
    assert_eq!(features.failures(), 1);
    let (eval, report) = cmd_eval(&cfg).unwrap();
    assert_eq!(eval.failures(), 1);
    assert_eq!(report.per_image.len(), 2);
    let summary = String::from_utf8(read(&cfg.output_dir().join("eval/summary.txt"))).unwrap();
    assert!(summary.contains("unpaired: img_001"));
}

#[test]
fn hitval_without_layout_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = plate(dir.path(), 1);
    cfg.layout = None;
    assert!(matches!(cmd_hitval(&cfg), Err(Error::Config(_))));
}
