//! Adjoint gradients of the multi-pose fitting objective
//!
//! `g(X, P) = sum_o 1/2 |S_o x_o - target_o|^2 + alpha R(X)`
//!
//! where each `x_o` is the equilibrium under gravity `g_o` and
//! `R(X) = W(X0, X, P0)` penalizes departure from a reference rest shape.
//! One linear solve per pose gives the gradients with respect to the
//! cluster moduli and all rest positions.

use rayon::prelude::*;
use thiserror::Error;

use crate::elasticity::{ElasticModel, ElasticityError, MaterialModel};
use crate::forward::{flatten, unflatten, EquilibriumState, ForwardError, Simulator, SolverConfig};
use crate::linalg::LinalgError;
use crate::mesh::{TetMesh, Vec3};
use crate::pose::{PoseError, PoseObservation};

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("no poses to evaluate")]
    NoPoses,
    #[error("pose {pose}: {source}")]
    InvalidPose { pose: usize, source: PoseError },
    #[error("pose {pose}: {source}")]
    Forward { pose: usize, source: ForwardError },
    #[error("pose {pose}: adjoint system: {source}")]
    Adjoint { pose: usize, source: LinalgError },
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
}

impl SensitivityError {
    pub fn pose(&self) -> Option<usize> {
        match self {
            SensitivityError::InvalidPose { pose, .. }
            | SensitivityError::Forward { pose, .. }
            | SensitivityError::Adjoint { pose, .. } => Some(*pose),
            _ => None,
        }
    }
}

/// `R(X) = W(X0, X, P0)`, weighted by `alpha` in the objective.
#[derive(Debug, Clone)]
pub struct Regularizer {
    pub reference: Vec<Vec3>,
    pub material: MaterialModel,
    pub alpha: f64,
}

impl Regularizer {
    pub fn new(reference: Vec<Vec3>, material: MaterialModel, alpha: f64) -> Self {
        Regularizer {
            reference,
            material,
            alpha,
        }
    }

    pub fn value(&self, mesh: &TetMesh, rest: &[Vec3], threshold: f64) -> Result<f64, ElasticityError> {
        Ok(ElasticModel::new(mesh, &self.reference, &self.material, threshold)?.energy(rest))
    }

    /// `dR/dX`, not yet scaled by `alpha` and not masked.
    pub fn gradient(&self, mesh: &TetMesh, rest: &[Vec3], threshold: f64) -> Result<Vec<Vec3>, ElasticityError> {
        Ok(ElasticModel::new(mesh, &self.reference, &self.material, threshold)?.gradient(rest))
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub lambda: Vec<Vec3>,
    pub tikhonov_shift: f64,
}

/// Solves `K lambda = S^T (S x - target)` on the free dofs with the exact
/// (unprojected) stiffness `K` at the equilibrium `x`.
pub fn adjoint_solve(
    sim: &Simulator,
    model: &ElasticModel,
    x: &[Vec3],
    pose: &PoseObservation,
) -> Result<AdjointSolution, LinalgError> {
    let rhs = pose.misfit(x);
    if rhs.iter().all(|r| *r == Vec3::zeros()) {
        return Ok(AdjointSolution {
            lambda: rhs,
            tikhonov_shift: 0.0,
        });
    }
    let fs = sim.factor_stiffness(model, x, false)?;
    let mut lambda = unflatten(&fs.factor.solve(&flatten(&rhs)));
    for &i in sim.mesh().fixed_vertices() {
        lambda[i] = Vec3::zeros();
    }
    Ok(AdjointSolution {
        lambda,
        tikhonov_shift: fs.shift,
    })
}

/// `dg/dE_c = sum_e w_ec dg/dE_e` with `dg/dE_e = -lambda^T dW_e/dx / E_e`,
/// since the elastic forces are linear in Young's modulus.
pub fn gradient_wrt_clusters(model: &ElasticModel, material: &MaterialModel, x: &[Vec3], lambda: &[Vec3]) -> Vec<f64> {
    let mesh = model.mesh();
    let per: Vec<f64> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let g = model.element_gradient(x, e);
            let t = &mesh.tets[e];
            let work: f64 = (0..4).map(|a| lambda[t[a]].dot(&g[a])).sum();
            -work / model.element_young(e)
        })
        .collect();
    let mut out = vec![0.0; material.num_clusters()];
    for (e, d) in per.iter().enumerate() {
        for &(c, w) in material.clusters().row(e) {
            out[c] += w * d;
        }
    }
    out
}

/// `lambda^T (df_ext/dX - d2W/dXdx)`, plus `alpha dR/dX` when a regularizer
/// is given. Zero at fixed vertices.
pub fn gradient_wrt_rest(
    model: &ElasticModel,
    x: &[Vec3],
    lambda: &[Vec3],
    gravity: &Vec3,
    density: f64,
    regularizer: Option<(&Regularizer, &[Vec3])>,
) -> Result<Vec<Vec3>, ElasticityError> {
    let mesh = model.mesh();
    let per: Vec<[Vec3; 4]> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let t = &mesh.tets[e];
            let lam = [lambda[t[0]], lambda[t[1]], lambda[t[2]], lambda[t[3]]];
            let elastic = model.element_rest_adjoint(x, e, &lam);
            let load = density / 4.0 * gravity.dot(&lam.iter().sum::<Vec3>());
            let dv = model.rest_volume_gradient(e);
            [
                load * dv[0] - elastic[0],
                load * dv[1] - elastic[1],
                load * dv[2] - elastic[2],
                load * dv[3] - elastic[3],
            ]
        })
        .collect();
    let mut out = vec![Vec3::zeros(); mesh.num_nodes()];
    for (t, ge) in mesh.tets.iter().zip(&per) {
        for a in 0..4 {
            out[t[a]] += ge[a];
        }
    }
    if let Some((reg, rest)) = regularizer {
        if reg.alpha != 0.0 {
            let dr = reg.gradient(mesh, rest, model.threshold())?;
            for (o, d) in out.iter_mut().zip(&dr) {
                *o += reg.alpha * d;
            }
        }
    }
    for &i in mesh.fixed_vertices() {
        out[i] = Vec3::zeros();
    }
    Ok(out)
}

/// Which gradient blocks an evaluation should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gradients {
    pub clusters: bool,
    pub rest: bool,
}

impl Gradients {
    pub const NONE: Gradients = Gradients {
        clusters: false,
        rest: false,
    };
    pub const CLUSTERS: Gradients = Gradients {
        clusters: true,
        rest: false,
    };
    pub const REST: Gradients = Gradients {
        clusters: false,
        rest: true,
    };
    pub const ALL: Gradients = Gradients {
        clusters: true,
        rest: true,
    };

    fn any(self) -> bool {
        self.clusters || self.rest
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    /// `data_term + alpha * reg_term`.
    pub value: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub alpha: f64,
    /// Empty unless requested.
    pub grad_clusters: Vec<f64>,
    /// Empty unless requested.
    pub grad_rest: Vec<Vec3>,
    pub per_pose_data: Vec<f64>,
    pub per_pose_rms: Vec<f64>,
    pub equilibria: Vec<EquilibriumState>,
    pub adjoint_shifts: Vec<f64>,
}

impl ObjectiveReport {
    pub fn grad_rest_norm(&self) -> f64 {
        self.grad_rest.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }
}

struct PoseEvaluation {
    data: f64,
    rms: f64,
    equilibrium: EquilibriumState,
    grad_clusters: Vec<f64>,
    grad_rest: Vec<Vec3>,
    shift: f64,
}

/// Everything about the objective that stays fixed while the optimizer
/// moves `(X, P)`.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    pub sim: &'a Simulator<'a>,
    pub poses: &'a [PoseObservation],
    pub density: f64,
    pub solver: SolverConfig,
    pub regularizer: Option<&'a Regularizer>,
}

impl<'a> Objective<'a> {
    pub fn new(
        sim: &'a Simulator<'a>,
        poses: &'a [PoseObservation],
        density: f64,
        solver: SolverConfig,
        regularizer: Option<&'a Regularizer>,
    ) -> Result<Self, SensitivityError> {
        if poses.is_empty() {
            return Err(SensitivityError::NoPoses);
        }
        for (i, p) in poses.iter().enumerate() {
            p.validate(sim.mesh())
                .map_err(|source| SensitivityError::InvalidPose { pose: i, source })?;
        }
        Ok(Objective {
            sim,
            poses,
            density,
            solver,
            regularizer,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.regularizer.map_or(0.0, |r| r.alpha)
    }

    /// Same objective restricted to a subset of poses.
    pub fn with_poses(&self, poses: &'a [PoseObservation]) -> Self {
        Objective { poses, ..*self }
    }

    fn evaluate_pose(
        &self,
        index: usize,
        model: &ElasticModel,
        rest: &[Vec3],
        material: &MaterialModel,
        wants: Gradients,
    ) -> Result<PoseEvaluation, SensitivityError> {
        let pose = &self.poses[index];
        let eq = self
            .sim
            .solve(rest, material, &pose.gravity, self.density, rest, &self.solver)
            .map_err(|source| SensitivityError::Forward { pose: index, source })?;
        let x = &eq.positions;
        let mut out = PoseEvaluation {
            data: pose.data_term(x),
            rms: pose.rms(x),
            grad_clusters: Vec::new(),
            grad_rest: Vec::new(),
            shift: 0.0,
            equilibrium: eq.clone(),
        };
        if wants.any() {
            let adj = adjoint_solve(self.sim, model, x, pose)
                .map_err(|source| SensitivityError::Adjoint { pose: index, source })?;
            out.shift = adj.tikhonov_shift;
            if wants.clusters {
                out.grad_clusters = gradient_wrt_clusters(model, material, x, &adj.lambda);
            }
            if wants.rest {
                out.grad_rest = gradient_wrt_rest(model, x, &adj.lambda, &pose.gravity, self.density, None)?;
            }
        }
        Ok(out)
    }

    /// Evaluates the objective and the requested gradients. Poses run in
    /// parallel and are merged in pose order.
    pub fn evaluate(
        &self,
        rest: &[Vec3],
        material: &MaterialModel,
        wants: Gradients,
    ) -> Result<ObjectiveReport, SensitivityError> {
        let mesh = self.sim.mesh();
        let model = ElasticModel::new(mesh, rest, material, self.solver.inversion_threshold)?;
        let results: Vec<Result<PoseEvaluation, SensitivityError>> = (0..self.poses.len())
            .into_par_iter()
            .map(|o| self.evaluate_pose(o, &model, rest, material, wants))
            .collect();

        let mut report = ObjectiveReport {
            value: 0.0,
            data_term: 0.0,
            reg_term: 0.0,
            alpha: self.alpha(),
            grad_clusters: if wants.clusters { vec![0.0; material.num_clusters()] } else { Vec::new() },
            grad_rest: if wants.rest { vec![Vec3::zeros(); mesh.num_nodes()] } else { Vec::new() },
            per_pose_data: Vec::with_capacity(self.poses.len()),
            per_pose_rms: Vec::with_capacity(self.poses.len()),
            equilibria: Vec::with_capacity(self.poses.len()),
            adjoint_shifts: Vec::with_capacity(self.poses.len()),
        };
        for r in results {
            let p = r?;
            report.data_term += p.data;
            report.per_pose_data.push(p.data);
            report.per_pose_rms.push(p.rms);
            report.adjoint_shifts.push(p.shift);
            for (acc, g) in report.grad_clusters.iter_mut().zip(&p.grad_clusters) {
                *acc += g;
            }
            for (acc, g) in report.grad_rest.iter_mut().zip(&p.grad_rest) {
                *acc += g;
            }
            report.equilibria.push(p.equilibrium);
        }
        if let Some(reg) = self.regularizer.filter(|r| r.alpha != 0.0) {
            let thr = self.solver.inversion_threshold;
            report.reg_term = reg.value(mesh, rest, thr)?;
            if wants.rest {
                let dr = reg.gradient(mesh, rest, thr)?;
                for (i, (acc, d)) in report.grad_rest.iter_mut().zip(&dr).enumerate() {
                    if !mesh.is_fixed(i) {
                        *acc += reg.alpha * d;
                    }
                }
            }
        }
        report.value = report.data_term + report.alpha * report.reg_term;
        Ok(report)
    }
}

/// Free-function form of [`Objective::evaluate`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_objective(
    sim: &Simulator,
    rest: &[Vec3],
    material: &MaterialModel,
    poses: &[PoseObservation],
    regularizer: Option<&Regularizer>,
    density: f64,
    solver: &SolverConfig,
    wants: Gradients,
) -> Result<ObjectiveReport, SensitivityError> {
    Objective::new(sim, poses, density, *solver, regularizer)?.evaluate(rest, material, wants)
}
