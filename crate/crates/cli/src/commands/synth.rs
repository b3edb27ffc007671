use std::path::PathBuf;
use std::sync::Arc;

use gravinv::elasticity::MaterialModel;
use gravinv::forward::Simulator;
use gravinv::mesh::{build_cluster_weights, write_ele, write_indices, TetMesh, Vec3};
use gravinv::pose::PoseObservation;
use gravinv::synth::{block_mesh, length_band_labels, observable_vertices, pose_angles, rotated_gravity, synthesize_pose, BlockSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{Setup, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{write_atomic, write_json, write_node_file, write_poses, write_text};

#[derive(Debug, Serialize)]
struct GroundTruth {
    format_version: u32,
    young: Vec<f64>,
    rest: Vec<[f64; 3]>,
    plane: String,
    angles: Vec<f64>,
    heldout_angles: Vec<f64>,
    neutral_angle: f64,
    noise_std: f64,
    seed: u64,
    /// Largest vertex displacement of each training pose.
    max_sag: Vec<f64>,
}

fn bench_mesh(cfg: &RunConfig) -> Result<(TetMesh, Vec<usize>), CliError> {
    let sy = &cfg.synth;
    if cfg.paths.node.is_some() {
        let setup = Setup::load(cfg)?;
        if setup.mesh.fixed_vertices().is_empty() {
            return Err(CliError::Config("a configured mesh needs paths.fixed".into()));
        }
        let labels = match &cfg.paths.labels {
            Some(p) => gravinv::mesh::read_labels(p)?,
            None => {
                let length = setup.mesh.nodes.iter().map(|p| p.x).fold(0.0, f64::max);
                length_band_labels(&setup.mesh, length, sy.bands)
            }
        };
        return Ok((setup.mesh, labels));
    }
    let spec = BlockSpec {
        cells: sy.cells,
        cell_size: sy.cell_size,
    };
    let mesh = block_mesh(&spec)?;
    let labels = length_band_labels(&mesh, spec.length(), sy.bands);
    Ok((mesh, labels))
}

/// Builds the benchmark, simulates the training, held-out and neutral poses
/// and writes everything needed by `invert` and `validate`, including a
/// ready-to-use `synth.cfg`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<(), CliError> {
    let sy = &cfg.synth;
    let inv = &cfg.inverse;
    if let Some(e) = sy.young.iter().find(|&&e| !(e >= inv.young_lower && e <= inv.young_upper)) {
        return Err(CliError::Config(format!(
            "synth.young value {e} lies outside [{}, {}]",
            inv.young_lower, inv.young_upper
        )));
    }
    let (mesh, labels) = bench_mesh(cfg)?;
    let num_clusters = labels.iter().max().map_or(1, |&m| m + 1);
    if sy.young.len() != num_clusters {
        return Err(CliError::Config(format!(
            "synth.young lists {} moduli for {num_clusters} clusters",
            sy.young.len()
        )));
    }
    let clusters = build_cluster_weights(&mesh, &labels, num_clusters)?;
    let material = MaterialModel::new(sy.young.clone(), Arc::new(clusters), cfg.physics.poisson)
        .map_err(|e| CliError::Config(format!("synth.young: {e}")))?;

    let plane = cfg.rotation_plane();
    let angles = sy.angles.clone().unwrap_or_else(|| pose_angles(sy.poses));
    if angles.is_empty() {
        return Err(CliError::Config("synth needs at least one pose".into()));
    }
    let g = cfg.physics.gravity;
    let density = cfg.physics.density;
    let sim = Simulator::new(&mesh);
    let rest = &mesh.nodes;
    let observed = observable_vertices(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);

    let simulate = |angles: &[f64], rng: &mut ChaCha8Rng| -> Result<(Vec<PoseObservation>, Vec<f64>), CliError> {
        let mut poses = Vec::with_capacity(angles.len());
        let mut sag = Vec::with_capacity(angles.len());
        for &a in angles {
            let gravity = rotated_gravity(g, plane, a);
            let (pose, eq) = synthesize_pose(&sim, rest, &material, gravity, density, &cfg.solver, &observed, sy.noise_std, rng)
                .map_err(|e| CliError::Solver(format!("pose at {a} degrees: {e}")))?;
            sag.push(eq.positions.iter().zip(rest).map(|(x, r)| (x - r).norm()).fold(0.0, f64::max));
            poses.push(pose);
        }
        Ok((poses, sag))
    };
    let (poses, max_sag) = simulate(&angles, &mut rng)?;
    let (heldout, _) = simulate(&sy.heldout_angles, &mut rng)?;

    let neutral_gravity = rotated_gravity(g, plane, sy.neutral_angle);
    let mut neutral = sim
        .solve(rest, &material, &neutral_gravity, density, rest, &cfg.solver)
        .map_err(|e| CliError::Solver(format!("neutral pose: {e}")))?
        .positions;
    if sy.noise_std > 0.0 {
        let normal = Normal::new(0.0, sy.noise_std).map_err(|e| CliError::Config(e.to_string()))?;
        for (i, p) in neutral.iter_mut().enumerate() {
            if !mesh.is_fixed(i) {
                *p += Vec3::from_fn(|_, _| normal.sample(&mut rng));
            }
        }
    }

    let out = &cfg.paths.output;
    write_node_file(&out.join("mesh.node"), rest)?;
    write_atomic(&out.join("mesh.ele"), |w| write_ele(w, &mesh.tets))?;
    write_atomic(&out.join("fixed.txt"), |w| write_indices(w, mesh.fixed_vertices()))?;
    write_atomic(&out.join("labels.txt"), |w| write_indices(w, &labels))?;
    write_poses(&out.join("poses.json"), &poses)?;
    write_poses(&out.join("heldout.json"), &heldout)?;
    write_node_file(&out.join("neutral.node"), &neutral)?;
    write_json(
        &out.join("ground_truth.json"),
        &GroundTruth {
            format_version: FORMAT_VERSION,
            young: sy.young.clone(),
            rest: rest.iter().map(|p| [p.x, p.y, p.z]).collect(),
            plane: plane.to_string(),
            angles: angles.clone(),
            heldout_angles: sy.heldout_angles.clone(),
            neutral_angle: sy.neutral_angle,
            noise_std: sy.noise_std,
            seed: cfg.run.seed,
            max_sag: max_sag.clone(),
        },
    )?;

    let mut next = cfg.clone();
    let file = |name: &str| Some(PathBuf::from(name));
    next.paths.node = file("mesh.node");
    next.paths.ele = file("mesh.ele");
    next.paths.fixed = file("fixed.txt");
    next.paths.labels = file("labels.txt");
    next.paths.poses = file("poses.json");
    next.paths.heldout = file("heldout.json");
    next.paths.neutral = file("neutral.node");
    next.paths.rest = None;
    next.paths.inversion = None;
    next.paths.output = PathBuf::from("inversion");
    next.physics.young = sy.young.clone();
    next.physics.neutral_gravity = Some([neutral_gravity.x, neutral_gravity.y, neutral_gravity.z]);
    let header = "# Generated by `gravinv synth`. Paths are relative to this file.\n";
    write_text(&out.join("synth.cfg"), &format!("{header}{}", next.to_text()))?;

    println!(
        "synth: {} nodes, {} elements, {} clusters, {} training and {} held-out poses, max sag {:.4e} m",
        mesh.num_nodes(),
        mesh.num_elements(),
        num_clusters,
        poses.len(),
        heldout.len(),
        max_sag.iter().copied().fold(0.0, f64::max)
    );
    Ok(())
}
