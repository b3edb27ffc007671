#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gravinv::mesh::{load_mesh, read_fixed_vertices, read_node_file, TetMesh, Vec3};
use gravinv::pose::{PoseObservation, PoseRecord};

pub const BIN: &str = env!("CARGO_BIN_EXE_gravinv");

/// Runs the binary; `args` precede the subcommand's own arguments.
pub fn gravinv(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn gravinv_ok(args: &[&str]) -> Output {
    let out = gravinv(args);
    assert!(
        out.status.success(),
        "gravinv {args:?} failed ({:?}):\n{}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes `base` followed by `extra` lines as a new config next to `base`.
pub fn derive_config(base: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut text = fs::read_to_string(base).unwrap();
    for line in extra {
        text.push_str(line);
        text.push('\n');
    }
    let path = base.with_file_name(name);
    fs::write(&path, text).unwrap();
    path
}

pub fn synth(dir: &Path, extra_args: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--output", path_str(dir)];
    args.extend_from_slice(extra_args);
    gravinv_ok(&args);
    dir.join("synth.cfg")
}

pub fn mesh_of(dir: &Path) -> TetMesh {
    load_mesh(&dir.join("mesh.node"), &dir.join("mesh.ele"))
        .unwrap()
        .with_fixed_vertices(read_fixed_vertices(&dir.join("fixed.txt")).unwrap())
        .unwrap()
}

pub fn nodes(path: &Path) -> Vec<Vec3> {
    read_node_file(path).unwrap().0
}

pub fn poses(path: &Path) -> Vec<PoseObservation> {
    let records: Vec<PoseRecord> = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    records.into_iter().map(PoseObservation::from).collect()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV file as maps from column name to field.
pub fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

/// True material of a synth output directory.
pub fn material_of(dir: &Path, young: &[f64]) -> gravinv::elasticity::MaterialModel {
    let mesh = mesh_of(dir);
    let labels = gravinv::mesh::read_labels(&dir.join("labels.txt")).unwrap();
    let count = labels.iter().max().unwrap() + 1;
    let clusters = gravinv::mesh::build_cluster_weights(&mesh, &labels, count).unwrap();
    gravinv::elasticity::MaterialModel::new(young.to_vec(), std::sync::Arc::new(clusters), gravinv::elasticity::DEFAULT_POISSON).unwrap()
}
