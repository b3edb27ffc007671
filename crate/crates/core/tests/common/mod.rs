#![allow(dead_code)]

use std::sync::Arc;

use gravinv::elasticity::MaterialModel;
use gravinv::forward::{Simulator, SolverConfig, DEFAULT_DENSITY, STANDARD_GRAVITY};
use gravinv::mesh::{build_cluster_weights, TetMesh, Vec3};
use gravinv::pose::PoseObservation;
use gravinv::synth::{block_mesh, length_band_labels, observable_vertices, pose_angles, rotated_gravity, synthesize_pose, BlockSpec, RotationPlane};

pub const TRUE_E: [f64; 3] = [2e4, 2e5, 8e5];

pub struct Bench {
    pub spec: BlockSpec,
    pub mesh: TetMesh,
    pub material: MaterialModel,
}

pub fn bench(spec: BlockSpec) -> Bench {
    let mesh = block_mesh(&spec).unwrap();
    let labels = length_band_labels(&mesh, spec.length(), 3);
    let clusters = build_cluster_weights(&mesh, &labels, 3).unwrap();
    let material = MaterialModel::new(TRUE_E.to_vec(), Arc::new(clusters), 0.43).unwrap();
    Bench { spec, mesh, material }
}

pub fn poses(b: &Bench, sim: &Simulator, angles: &[f64], solver: &SolverConfig) -> Vec<PoseObservation> {
    let observed = observable_vertices(&b.mesh);
    let mut rng = rand::rng();
    angles
        .iter()
        .map(|&a| {
            let g = rotated_gravity(STANDARD_GRAVITY, RotationPlane::Xz, a);
            synthesize_pose(sim, &b.mesh.nodes, &b.material, g, DEFAULT_DENSITY, solver, &observed, 0.0, &mut rng)
                .unwrap()
                .0
        })
        .collect()
}

pub fn five_angles() -> Vec<f64> {
    pose_angles(5)
}

/// Smooth deterministic perturbation of free vertices.
pub fn wobble(mesh: &TetMesh, amplitude: f64) -> Vec<Vec3> {
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if mesh.is_fixed(i) {
                *p
            } else {
                let s = i as f64;
                p + amplitude * Vec3::new((1.3 * s).sin(), (2.1 * s).cos(), (0.7 * s).sin())
            }
        })
        .collect()
}
