//! End-to-end behaviour of the subcommands on small synthetic fixtures.

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::*;
use gravinv::forward::STANDARD_GRAVITY;
use gravinv_cli::config::RunConfig;
use gravinv_cli::io::write_atomic;

fn small_synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["--config"];
    let cfg = dir.with_extension("seed.cfg");
    fs::write(&cfg, "synth.cells = 6,1,1\nsynth.cell_size = 0.02\n").unwrap();
    args.push(path_str(&cfg));
    args.extend_from_slice(extra);
    synth(dir, &args)
}

#[test]
fn metadata_echo_reparses_to_the_run_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &[]);
    let cfg = derive_config(&cfg, "m.cfg", &["invert.mode = materials", "inverse.material_max_iters = 5"]);
    let out = tmp.path().join("inv");
    gravinv_ok(&["--config", path_str(&cfg), "--threads", "2", "invert", "--output", path_str(&out)]);

    let meta = json(&out.join("metadata.json"));
    let echoed: RunConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    let mut expected = RunConfig::load(&cfg).unwrap();
    expected.paths.output = out.clone();
    expected.run.threads = Some(2);
    assert_eq!(echoed, expected);
    assert_eq!(RunConfig::parse(&echoed.to_text(), Path::new("/")).unwrap(), echoed);
    assert_eq!(meta["threads"], 2);
    assert_eq!(meta["format_version"], 1);
    let columns: Vec<String> = serde_json::from_value(meta["history_columns"].clone()).unwrap();
    let header = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), columns.join(","));
}

#[test]
fn interrupted_write_keeps_the_previous_file() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("history.csv");
    write_atomic(&target, |w| w.write_all(b"a,b\n1,2\n")).unwrap();
    let err = write_atomic(&target, |w| {
        w.write_all(b"a,b\n3,")?;
        Err(std::io::Error::other("killed"))
    });
    assert!(err.is_err());
    assert_eq!(fs::read_to_string(&target).unwrap(), "a,b\n1,2\n");
    let names: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("history.csv")]);
}

#[test]
fn zero_gravity_returns_the_rest_shape_and_sag_meets_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &[]);
    let rest = nodes(&data.join("mesh.node"));

    let flat = tmp.path().join("flat");
    gravinv_ok(&["--config", path_str(&cfg), "forward", "--direction", "0,0,0", "--output", path_str(&flat)]);
    let x = nodes(&flat.join("deformed.node"));
    let dev = x.iter().zip(&rest).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
    assert!(dev <= 1e-12, "{dev}");

    let down = tmp.path().join("down");
    gravinv_ok(&["--config", path_str(&cfg), "forward", "--direction", "0,0,-1", "--output", path_str(&down)]);
    let report = json(&down.join("forward.json"));
    let tol = report["tolerance"].as_f64().unwrap();
    assert_eq!(report["status"], "converged");
    assert!(report["residual"].as_f64().unwrap() <= tol);
    assert!(report["residual_check"].as_f64().unwrap() <= tol);
    assert!(report["max_displacement"].as_f64().unwrap() > 1e-4);
}

#[test]
fn missing_ele_file_is_a_config_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &[]);
    fs::remove_file(data.join("mesh.ele")).unwrap();
    let out = gravinv(&["--config", path_str(&cfg), "forward", "--output", path_str(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(path_str(&data.join("mesh.ele"))), "{stderr}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "physics.density = 1000\nphysics.colour = red\n").unwrap();
    let out = gravinv(&["--config", path_str(&cfg), "synth", "--output", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("physics.colour"));
}

#[test]
fn single_noiseless_pose_equals_the_forward_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &["--poses", "1"]);
    let fwd = tmp.path().join("fwd");
    gravinv_ok(&["--config", path_str(&cfg), "forward", "--output", path_str(&fwd)]);
    let x = nodes(&fwd.join("deformed.node"));
    let pose = &poses(&data.join("poses.json"))[0];
    assert_eq!(pose.gravity, gravinv::mesh::Vec3::new(0.0, 0.0, -STANDARD_GRAVITY));
    for (&i, t) in pose.observed_ids.iter().zip(&pose.targets) {
        assert_eq!(x[i], *t);
    }
}

#[test]
fn rotated_gravity_follows_the_plane() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_synth(&data, &["--plane", "xz"]);
    let ps = poses(&data.join("poses.json"));
    let angles = [-60.0f64, -30.0, 0.0, 30.0, 60.0];
    assert_eq!(ps.len(), angles.len());
    for (p, a) in ps.iter().zip(angles) {
        let t = a.to_radians();
        let g = p.gravity;
        assert!((g.norm() - STANDARD_GRAVITY).abs() < 1e-12);
        assert!((g.dot(&gravinv::mesh::Vec3::x()) - STANDARD_GRAVITY * t.sin()).abs() < 1e-12);
        assert!((g.dot(&gravinv::mesh::Vec3::z()) + STANDARD_GRAVITY * t.cos()).abs() < 1e-12);
        assert_eq!(g.dot(&gravinv::mesh::Vec3::y()), 0.0);
    }
    let held = poses(&data.join("heldout.json"));
    assert_eq!(held.len(), 2);
    assert!((held[1].gravity.x - STANDARD_GRAVITY * 45f64.to_radians().sin()).abs() < 1e-12);
}

#[test]
fn target_noise_has_the_requested_magnitude() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    let noisy = tmp.path().join("noisy");
    synth(&clean, &["--poses", "13"]);
    synth(&noisy, &["--poses", "13", "--noise-std", "1e-4", "--seed", "7"]);
    let mut norms = Vec::new();
    for (a, b) in poses(&clean.join("poses.json")).iter().zip(poses(&noisy.join("poses.json")).iter()) {
        assert_eq!(a.observed_ids, b.observed_ids);
        norms.extend(a.targets.iter().zip(&b.targets).map(|(x, y)| (x - y).norm()));
    }
    assert!(norms.len() >= 1000, "{} samples", norms.len());
    let expected = 1e-4 * 3f64.sqrt();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let rms = (norms.iter().map(|n| n * n).sum::<f64>() / norms.len() as f64).sqrt();
    assert!((mean / expected - 1.0).abs() < 0.2, "mean {mean:e}");
    assert!((rms / expected - 1.0).abs() < 0.05, "rms {rms:e}");
}

#[test]
fn synth_is_reproducible_from_its_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |d: &str| fs::read(tmp.path().join(d).join("poses.json")).unwrap();
    small_synth(&tmp.path().join("a"), &["--noise-std", "1e-4", "--seed", "3"]);
    small_synth(&tmp.path().join("b"), &["--noise-std", "1e-4", "--seed", "3"]);
    small_synth(&tmp.path().join("c"), &["--noise-std", "1e-4", "--seed", "4"]);
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn gradcheck_passes_skips_at_optimum_and_catches_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &[]);
    let out = path_str(&tmp.path().join("gc")).to_string();

    let check = derive_config(&cfg, "g.cfg", &["gradcheck.young = 5e4,1e5,4e5", "gradcheck.perturb = 5e-4"]);
    let ok = gravinv_ok(&["--config", path_str(&check), "gradcheck", "--probes", "4", "--output", &out]);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("max relative error"));
    assert_eq!(csv_rows(&tmp.path().join("gc/gradcheck.csv")).len(), 8);

    let optimum = derive_config(&cfg, "o.cfg", &["inverse.alpha = 0", "gradcheck.young = 2e4,2e5,8e5"]);
    let skipped = gravinv_ok(&["--config", path_str(&optimum), "gradcheck", "--output", &out]);
    assert!(String::from_utf8_lossy(&skipped.stdout).contains("at optimum"));

    let corrupt = derive_config(&check, "c.cfg", &["gradcheck.corrupt = 0.01"]);
    let bad = gravinv(&["--config", path_str(&corrupt), "gradcheck", "--probes", "4", "--output", &out]);
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn validation_on_training_poses_is_self_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_synth(&data, &[]);
    let inv = tmp.path().join("inv");
    let m = derive_config(&cfg, "m.cfg", &["invert.mode = materials", "inverse.material_max_iters = 100"]);
    gravinv_ok(&["--config", path_str(&m), "invert", "--output", path_str(&inv)]);

    let v = derive_config(&cfg, "v.cfg", &[&format!("paths.inversion = {}", inv.display())]);
    let val = tmp.path().join("val");
    gravinv_ok(&["--config", path_str(&v), "validate", "--heldout", path_str(&data.join("poses.json")), "--output", path_str(&val)]);
    let rows = csv_rows(&val.join("validation.csv"));
    let all = |model: &str| {
        rows.iter()
            .find(|r| r["pose"] == "all" && r["model"] == model)
            .map(|r| r["mean_vertex_error"].parse::<f64>().unwrap())
            .unwrap()
    };
    assert_eq!(rows.len(), 2 * 6);
    assert!(all("inverted") < 1e-6, "{}", all("inverted"));
    assert!(all("naive") > all("inverted"));

    let empty = tmp.path().join("empty.json");
    fs::write(&empty, "[]").unwrap();
    let out = gravinv(&["--config", path_str(&v), "validate", "--heldout", path_str(&empty), "--output", path_str(&val)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invert_requires_its_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(&cfg, "").unwrap();
    let out = gravinv(&["--config", path_str(&cfg), "invert", "--output", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.node"));
}
