//! Synthetic benchmark: a block of tetrahedra clamped on one face, banded
//! material clusters and observations under gravity rotated in a plane.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::elasticity::MaterialModel;
use crate::forward::{EquilibriumState, ForwardError, Simulator, SolverConfig};
use crate::mesh::{signed_volume, MeshError, TetMesh, Vec3};
use crate::pose::PoseObservation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    /// Cell counts along x, y and z. The x = 0 face is clamped.
    pub cells: [usize; 3],
    pub cell_size: f64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            cells: [10, 2, 2],
            cell_size: 0.01,
        }
    }
}

impl BlockSpec {
    pub fn length(&self) -> f64 {
        self.cells[0] as f64 * self.cell_size
    }
}

/// Axis-aligned block with every cell split into five tetrahedra. The split
/// alternates between neighbouring cells so shared faces use the same
/// diagonal. Vertices on the x = 0 face are fixed.
pub fn block_mesh(spec: &BlockSpec) -> Result<TetMesh, MeshError> {
    let [nx, ny, nz] = spec.cells;
    let h = spec.cell_size;
    let id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h));
            }
        }
    }
    let mut tets = Vec::with_capacity(5 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let corner = |b: usize| id(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                let parity = (i + j + k) % 2;
                // Corners whose bit count has the cell parity span the
                // central tet; the rest each cut off one corner.
                let (centre, cut): (Vec<usize>, Vec<usize>) =
                    (0..8).partition(|b: &usize| (b.count_ones() as usize) % 2 == parity);
                tets.push([corner(centre[0]), corner(centre[1]), corner(centre[2]), corner(centre[3])]);
                for &b in &cut {
                    tets.push([corner(b), corner(b ^ 1), corner(b ^ 2), corner(b ^ 4)]);
                }
            }
        }
    }
    for t in &mut tets {
        if signed_volume(&nodes, t) < 0.0 {
            t.swap(2, 3);
        }
    }
    let fixed: Vec<usize> = (0..=nz)
        .flat_map(|k| (0..=ny).map(move |j| id(0, j, k)))
        .collect();
    TetMesh::new(nodes, tets)?.with_fixed_vertices(fixed)
}

/// Labels elements by equal-length bands along x. Band 0 is at the free end.
pub fn length_band_labels(mesh: &TetMesh, length: f64, bands: usize) -> Vec<usize> {
    mesh.tets
        .iter()
        .map(|t| {
            let cx = t.iter().map(|&v| mesh.nodes[v].x).sum::<f64>() / 4.0;
            let from_tip = ((length - cx) / length * bands as f64).floor();
            (from_tip.max(0.0) as usize).min(bands - 1)
        })
        .collect()
}

/// Plane in which the gravity direction is rotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationPlane {
    Xy,
    Xz,
    Yz,
}

impl RotationPlane {
    fn axes(self) -> (usize, usize) {
        match self {
            RotationPlane::Xy => (0, 1),
            RotationPlane::Xz => (0, 2),
            RotationPlane::Yz => (1, 2),
        }
    }
}

impl FromStr for RotationPlane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "xy" => Ok(RotationPlane::Xy),
            "xz" => Ok(RotationPlane::Xz),
            "yz" => Ok(RotationPlane::Yz),
            other => Err(format!("unknown rotation plane {other:?} (expected xy, xz or yz)")),
        }
    }
}

impl fmt::Display for RotationPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationPlane::Xy => "xy",
            RotationPlane::Xz => "xz",
            RotationPlane::Yz => "yz",
        })
    }
}

/// `|g| (sin t e_a - cos t e_b)` for the plane's axis pair `(a, b)`.
pub fn rotated_gravity(magnitude: f64, plane: RotationPlane, degrees: f64) -> Vec3 {
    let (a, b) = plane.axes();
    let t = degrees.to_radians();
    let mut g = Vec3::zeros();
    g[a] = magnitude * t.sin();
    g[b] = -magnitude * t.cos();
    g
}

/// Evenly spaced angles in [-60, 60] degrees; a single pose hangs straight.
pub fn pose_angles(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -60.0 + 120.0 * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Non-fixed boundary vertices, the ones a surface scan could see.
pub fn observable_vertices(mesh: &TetMesh) -> Vec<usize> {
    mesh.surface_vertices()
        .into_iter()
        .filter(|&v| !mesh.is_fixed(v))
        .collect()
}

/// Simulates one pose and records the observed vertices with additive
/// Gaussian noise of standard deviation `noise_std` per coordinate.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_pose<R: Rng + ?Sized>(
    sim: &Simulator,
    rest: &[Vec3],
    material: &MaterialModel,
    gravity: Vec3,
    density: f64,
    config: &SolverConfig,
    observed: &[usize],
    noise_std: f64,
    rng: &mut R,
) -> Result<(PoseObservation, EquilibriumState), ForwardError> {
    let eq = sim.solve(rest, material, &gravity, density, rest, config)?;
    let mut targets: Vec<Vec3> = observed.iter().map(|&i| eq.positions[i]).collect();
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("finite noise level");
        for t in &mut targets {
            for c in t.iter_mut() {
                *c += normal.sample(rng);
            }
        }
    }
    Ok((PoseObservation::new(gravity, observed.to_vec(), targets), eq))
}
