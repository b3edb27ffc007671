//! Observations of the deformed surface under a known gravity vector,
//! expressed in the canonical (rest) frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::STANDARD_GRAVITY;
use crate::mesh::{TetMesh, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("pose has {ids} observed ids but {targets} targets")]
    LengthMismatch { ids: usize, targets: usize },
    #[error("observed vertex {0} is out of range")]
    OutOfRange(usize),
    #[error("observed vertex {0} is listed twice")]
    Duplicate(usize),
    #[error("observed vertex {0} is a fixed vertex")]
    Fixed(usize),
    #[error("gravity magnitude {0} exceeds twice standard gravity")]
    GravityTooLarge(f64),
    #[error("pose has a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub gravity: Vec3,
    pub observed_ids: Vec<usize>,
    pub targets: Vec<Vec3>,
}

impl PoseObservation {
    pub fn new(gravity: Vec3, observed_ids: Vec<usize>, targets: Vec<Vec3>) -> Self {
        PoseObservation {
            gravity,
            observed_ids,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.observed_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_ids.is_empty()
    }

    /// Checks the observation against a mesh: ids unique, in range and free,
    /// gravity within twice standard gravity.
    pub fn validate(&self, mesh: &TetMesh) -> Result<(), PoseError> {
        if self.observed_ids.len() != self.targets.len() {
            return Err(PoseError::LengthMismatch {
                ids: self.observed_ids.len(),
                targets: self.targets.len(),
            });
        }
        if !self.gravity.iter().all(|v| v.is_finite()) || !self.targets.iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(PoseError::NonFinite);
        }
        if self.gravity.norm() > 2.0 * STANDARD_GRAVITY {
            return Err(PoseError::GravityTooLarge(self.gravity.norm()));
        }
        let mut seen = BTreeSet::new();
        for &i in &self.observed_ids {
            if i >= mesh.num_nodes() {
                return Err(PoseError::OutOfRange(i));
            }
            if !seen.insert(i) {
                return Err(PoseError::Duplicate(i));
            }
            if mesh.is_fixed(i) {
                return Err(PoseError::Fixed(i));
            }
        }
        Ok(())
    }

    /// `S^T (S x - target)`: the misfit scattered to all nodes.
    pub fn misfit(&self, x: &[Vec3]) -> Vec<Vec3> {
        let mut r = vec![Vec3::zeros(); x.len()];
        for (&i, t) in self.observed_ids.iter().zip(&self.targets) {
            r[i] = x[i] - t;
        }
        r
    }

    /// `1/2 |S x - target|^2`.
    pub fn data_term(&self, x: &[Vec3]) -> f64 {
        0.5 * self
            .observed_ids
            .iter()
            .zip(&self.targets)
            .map(|(&i, t)| (x[i] - t).norm_squared())
            .sum::<f64>()
    }

    /// Root-mean-square distance between observed vertices and targets.
    pub fn rms(&self, x: &[Vec3]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (2.0 * self.data_term(x) / self.len() as f64).sqrt()
    }

    /// Sum and mean of per-vertex Euclidean distances.
    pub fn vertex_errors(&self, x: &[Vec3]) -> (f64, f64) {
        let total: f64 = self
            .observed_ids
            .iter()
            .zip(&self.targets)
            .map(|(&i, t)| (x[i] - t).norm())
            .sum();
        (total, if self.is_empty() { 0.0 } else { total / self.len() as f64 })
    }
}

/// Serialized form: `{"gravity": [gx, gy, gz], "observed": [...], "targets": [[x, y, z], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub gravity: [f64; 3],
    pub observed: Vec<usize>,
    pub targets: Vec<[f64; 3]>,
}

impl From<&PoseObservation> for PoseRecord {
    fn from(p: &PoseObservation) -> Self {
        PoseRecord {
            gravity: [p.gravity.x, p.gravity.y, p.gravity.z],
            observed: p.observed_ids.clone(),
            targets: p.targets.iter().map(|t| [t.x, t.y, t.z]).collect(),
        }
    }
}

impl From<PoseRecord> for PoseObservation {
    fn from(r: PoseRecord) -> Self {
        PoseObservation {
            gravity: Vec3::from(r.gravity),
            observed_ids: r.observed,
            targets: r.targets.into_iter().map(Vec3::from).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh() -> TetMesh {
        TetMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
        .with_fixed_vertices([0])
        .unwrap()
    }

    #[test]
    fn validation_rules() {
        let m = mesh();
        let g = Vec3::new(0.0, 0.0, -9.81);
        let ok = PoseObservation::new(g, vec![1, 2], vec![Vec3::zeros(); 2]);
        assert!(ok.validate(&m).is_ok());
        let dup = PoseObservation::new(g, vec![1, 1], vec![Vec3::zeros(); 2]);
        assert_eq!(dup.validate(&m), Err(PoseError::Duplicate(1)));
        let fixed = PoseObservation::new(g, vec![0], vec![Vec3::zeros()]);
        assert_eq!(fixed.validate(&m), Err(PoseError::Fixed(0)));
        let far = PoseObservation::new(g, vec![9], vec![Vec3::zeros()]);
        assert_eq!(far.validate(&m), Err(PoseError::OutOfRange(9)));
        let heavy = PoseObservation::new(g * 2.5, vec![1], vec![Vec3::zeros()]);
        assert!(matches!(heavy.validate(&m), Err(PoseError::GravityTooLarge(_))));
        let short = PoseObservation::new(g, vec![1, 2], vec![Vec3::zeros()]);
        assert!(matches!(short.validate(&m), Err(PoseError::LengthMismatch { .. })));
    }

    #[test]
    fn data_term_and_errors() {
        let m = mesh();
        let p = PoseObservation::new(Vec3::zeros(), vec![1, 3], vec![m.nodes[1] + Vec3::new(0.0, 3.0, 4.0), m.nodes[3]]);
        assert_eq!(p.data_term(&m.nodes), 12.5);
        assert_eq!(p.vertex_errors(&m.nodes), (5.0, 2.5));
        assert!((p.rms(&m.nodes) - 12.5f64.sqrt()).abs() < 1e-15);
        let r = p.misfit(&m.nodes);
        assert_eq!(r[1], Vec3::new(0.0, -3.0, -4.0));
        assert_eq!(r[0], Vec3::zeros());
    }
}
