use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybridgen::dsm::{DsmWeights, FeatureMap};
use hybridgen::encoding::PillarGrid;
use hybridgen::synth::demo_scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridgen"))
        .args(args)
        .env("HYBRIDGEN_LOG", "debug")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// One-frame synthetic dataset; returns the path of its config.
fn dataset(root: &Path, frames: usize) -> String {
    let scene = root.join("scene.json");
    fs::write(
        &scene,
        json!({ "frames": frames, "scene": demo_scene(1) }).to_string(),
    )
    .unwrap();
    let ds = root.join("ds");
    let out = run(&[
        "simulate",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    ds.join("config.json").to_str().unwrap().to_string()
}

fn write_config(path: &Path, value: serde_json::Value) -> String {
    fs::write(path, value.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_on_two_anchored_masks_yields_500_points() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 1);
    let out = run(&["generate", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("ds/out/hybrid/000000.csv")).unwrap();
    let generated = csv
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",gaussian") || l.ends_with(",uniform"))
        .count();
    assert_eq!(generated, 500);
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("ds/out/generate_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["total_generated"], 500);
}

#[test]
fn empty_points_directory_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    for d in ["points", "masks"] {
        fs::create_dir(tmp.path().join(d)).unwrap();
    }
    fs::write(
        tmp.path().join("calib.txt"),
        "intrinsic: 1000 0 640 0 0 1000 360 0 0 0 1 0\nextrinsic: 0 -1 0 0 0 0 -1 0.5 1 0 0 0 0 0 0 1\n",
    )
    .unwrap();
    let cfg = write_config(
        &tmp.path().join("c.json"),
        json!({"paths": {"points_dir": "points", "masks_dir": "masks", "calib": "calib.txt"}}),
    );
    assert_eq!(code(&run(&["generate", "--config", &cfg])), 0);
    assert_eq!(
        fs::read_dir(tmp.path().join("out/hybrid")).unwrap().count(),
        0
    );
    assert_eq!(code(&run(&["encode", "--config", &cfg])), 0);
    assert_eq!(code(&run(&["stats", "--config", &cfg])), 0);
    let counts = fs::read_to_string(tmp.path().join("out/stats/counts.csv")).unwrap();
    assert_eq!(counts, "class,kind,count\n");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["generate", "--config", "/nonexistent/c.json"])),
        2
    );
    let bad = write_config(
        &tmp.path().join("bad.json"),
        json!({"generation": {"radius": -1.0}}),
    );
    assert_eq!(code(&run(&["generate", "--config", &bad])), 2);
    let unknown = write_config(&tmp.path().join("u.json"), json!({"radious": 3}));
    assert_eq!(code(&run(&["generate", "--config", &unknown])), 2);
    let missing = write_config(
        &tmp.path().join("m.json"),
        json!({"paths": {"points_dir": "nope"}}),
    );
    assert_eq!(code(&run(&["generate", "--config", &missing])), 2);
    assert_ne!(code(&run(&["encode", "--strategy", "sideways"])), 0);
}

#[test]
fn malformed_frame_exits_3_and_leaves_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 3);
    fs::write(
        tmp.path().join("ds/points/000001.csv"),
        "x,y,z,rcs,v_r,v_abs\n1,2,oops,0,0,0\n",
    )
    .unwrap();
    let out = run(&["generate", "--config", &cfg]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("000001"));
    let hybrid = tmp.path().join("ds/out/hybrid");
    assert_eq!(fs::read_dir(hybrid).unwrap().count(), 0);
}

#[test]
fn schema_mismatch_names_the_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 1);
    assert_eq!(code(&run(&["generate", "--config", &cfg])), 0);
    let mut value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    value["features"] = json!(["rcs", "v_r"]);
    let other = write_config(&tmp.path().join("ds/two_feats.json"), value);
    let out = run(&["encode", "--config", &other]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("000000"));
}

#[test]
fn header_only_hybrid_csv_gives_zero_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let hybrid = tmp.path().join("out/hybrid");
    fs::create_dir_all(&hybrid).unwrap();
    fs::write(
        hybrid.join("a.csv"),
        "x,y,z,rcs,v_r,v_abs,car,pedestrian,cyclist,kind\n",
    )
    .unwrap();
    fs::write(hybrid.join("b.csv"), "").unwrap();
    let cfg = write_config(&tmp.path().join("c.json"), json!({}));
    assert_eq!(code(&run(&["encode", "--config", &cfg])), 0);
    for stem in ["a", "b"] {
        let grid = PillarGrid::load(tmp.path().join(format!("out/grids/{stem}.pgrd"))).unwrap();
        assert_eq!((grid.nx(), grid.ny(), grid.feature_len()), (320, 320, 15));
        assert_eq!(grid.total_count(), 0);
    }
}

#[test]
fn strategy_flag_changes_feature_length() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 1);
    assert_eq!(code(&run(&["generate", "--config", &cfg])), 0);
    for (strategy, len) in [("concat", 9), ("differentiable", 12), ("separate", 15)] {
        assert_eq!(
            code(&run(&["encode", "--config", &cfg, "--strategy", strategy])),
            0
        );
        let grid = PillarGrid::load(tmp.path().join("ds/out/grids/000000.pgrd")).unwrap();
        assert_eq!(grid.feature_len(), len, "{strategy}");
        assert!(grid.total_count() > 500);
    }
}

fn fuse_config(root: &Path, c_radar: usize, c_image: usize, weights: Option<&str>) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    FeatureMap::random(c_radar, 16, 16, &mut rng)
        .save(root.join("r.fmap"))
        .unwrap();
    FeatureMap::random(c_image, 16, 16, &mut rng)
        .save(root.join("i.fmap"))
        .unwrap();
    let mut fuse = json!({"radar": "r.fmap", "image": "i.fmap"});
    if let Some(w) = weights {
        fuse["weights"] = w.into();
    }
    write_config(&root.join("f.json"), json!({"fuse": fuse}))
}

#[test]
fn fuse_check_passes_on_random_maps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fuse_config(tmp.path(), 3, 3, None);
    let out = run(&["fuse-check", "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fused = FeatureMap::load(tmp.path().join("out/fuse/fused.fmap")).unwrap();
    assert_eq!(fused.dims(), (6, 16, 16));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/fuse/fuse_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["passed"] == true));
}

#[test]
fn identity_fuse_reports_ratios_equal_to_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = DsmWeights::random(2, &mut ChaCha8Rng::seed_from_u64(1));
    w.fuse = hybridgen::dsm::ConvKernel::identity(4, 3, 3);
    w.save(tmp.path().join("w.dsmw")).unwrap();
    let cfg = fuse_config(tmp.path(), 2, 2, Some("w.dsmw"));
    assert_eq!(code(&run(&["fuse-check", "--config", &cfg])), 0);
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("out/fuse/fuse_report.json")).unwrap(),
    )
    .unwrap();
    let v = report["modality_weights"].as_array().unwrap();
    let ratios = report["channel_ratios"].as_array().unwrap();
    for (a, b) in v.iter().zip(ratios) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-12);
    }
}

#[test]
fn fuse_check_dim_mismatch_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fuse_config(tmp.path(), 3, 2, None);
    let out = run(&["fuse-check", "--config", &cfg]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn fuse_check_invariant_violation_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let mut w = DsmWeights::random(2, &mut ChaCha8Rng::seed_from_u64(1));
    w.projection.bias[0] = f64::NAN;
    w.save(tmp.path().join("w.dsmw")).unwrap();
    let cfg = fuse_config(tmp.path(), 2, 2, Some("w.dsmw"));
    assert_eq!(code(&run(&["fuse-check", "--config", &cfg])), 4);
}

#[test]
fn stats_counts_match_the_hybrid_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path(), 2);
    assert_eq!(code(&run(&["generate", "--config", &cfg])), 0);
    assert_eq!(code(&run(&["stats", "--config", &cfg])), 0);
    let stats: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("ds/out/stats/stats.json")).unwrap(),
    )
    .unwrap();
    let mut expected = std::collections::BTreeMap::<String, u64>::new();
    for stem in ["000000", "000001"] {
        let csv = fs::read_to_string(tmp.path().join(format!("ds/out/hybrid/{stem}.csv"))).unwrap();
        for line in csv.lines().skip(1) {
            *expected
                .entry(line.rsplit(',').next().unwrap().to_string())
                .or_default() += 1;
        }
    }
    for (kind, n) in expected {
        let total: u64 = stats["counts"]
            .as_object()
            .unwrap()
            .values()
            .filter_map(|k| k[&kind].as_u64())
            .sum();
        assert_eq!(total, n, "{kind}");
    }
    let density = stats["density"].as_array().unwrap();
    assert_eq!(density.len(), 4);
    assert!(density.iter().all(|d| d["generated"] == 250));
    let hist: u64 = stats["distance_histogram"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|h| h.as_array().unwrap())
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(hist, 1000);
}
