//! Subcommand implementations. Each takes a checked [`RunConfig`] and
//! writes its results into `paths.output`.

mod forward;
mod gradcheck;
mod invert;
mod synth;
mod validate;

pub use forward::cmd_forward;
pub use gradcheck::cmd_gradcheck;
pub use invert::cmd_invert;
pub use synth::cmd_synth;
pub use validate::cmd_validate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gravinv::elasticity::MaterialModel;
use gravinv::mesh::{build_cluster_weights, load_mesh, read_fixed_vertices, read_labels, ClusterMap, TetMesh, Vec3};
use gravinv::pose::PoseObservation;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{read_poses, read_positions};

/// Version of the output file layouts (CSV columns, JSON keys).
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("{key} is required for this command")))
}

/// Mesh with its boundary conditions and material clusters.
pub(crate) struct Setup {
    pub mesh: TetMesh,
    pub clusters: Arc<ClusterMap>,
}

impl Setup {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let node = required(&cfg.paths.node, "paths.node")?;
        let ele = required(&cfg.paths.ele, "paths.ele")?;
        let mut mesh = load_mesh(node, ele)?;
        if let Some(fixed) = &cfg.paths.fixed {
            mesh.set_fixed_vertices(read_fixed_vertices(fixed)?)?;
        }
        let clusters = match &cfg.paths.labels {
            Some(path) => {
                let labels = read_labels(path)?;
                let count = labels.iter().max().map_or(1, |&m| m + 1);
                build_cluster_weights(&mesh, &labels, count)?
            }
            None => ClusterMap::single(mesh.num_elements()),
        };
        Ok(Setup {
            mesh,
            clusters: Arc::new(clusters),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.num_clusters()
    }

    /// Material from a list of moduli; a single value applies to every
    /// cluster.
    pub fn material(&self, young: &[f64], poisson: f64, key: &str) -> Result<MaterialModel, CliError> {
        let c = self.num_clusters();
        let moduli = match young {
            [e] => vec![*e; c],
            _ if young.len() == c => young.to_vec(),
            _ => {
                return Err(CliError::Config(format!(
                    "{key} lists {} moduli, the mesh has {c} clusters",
                    young.len()
                )))
            }
        };
        MaterialModel::new(moduli, Arc::clone(&self.clusters), poisson).map_err(|e| CliError::Config(format!("{key}: {e}")))
    }

    /// Known rest shape: `paths.rest` or the mesh nodes.
    pub fn rest(&self, cfg: &RunConfig) -> Result<Vec<Vec3>, CliError> {
        match &cfg.paths.rest {
            Some(p) => read_positions(p, self.mesh.num_nodes()),
            None => Ok(self.mesh.nodes.clone()),
        }
    }

    pub fn poses(&self, path: &Path) -> Result<Vec<PoseObservation>, CliError> {
        let poses = read_poses(path)?;
        for (i, p) in poses.iter().enumerate() {
            p.validate(&self.mesh)
                .map_err(|e| CliError::Config(format!("{} pose {i}: {e}", path.display())))?;
        }
        Ok(poses)
    }
}

pub(crate) fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}
