//! Quasi-static equilibrium under gravity: find `x` with
//! `dW/dx (X, x, P) = f_ext` on every free vertex while fixed vertices stay
//! at their rest positions.
//!
//! Newton's method with row/column elimination of the fixed degrees of
//! freedom. Each step is limited so that no element collapses and is then
//! backtracked on the potential `W(x) - f_ext . x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elasticity::{ElasticModel, ElasticityError, MaterialModel, DEFAULT_INVERSION_THRESHOLD};
use crate::linalg::{factor_with_shift, CsrMatrix, LinalgError, SkylineCholesky, StiffnessLayout};
use crate::mesh::{signed_volume, TetMesh, Vec3};
use crate::step_limit::max_noninversion_step;

pub const DEFAULT_DENSITY: f64 = 1000.0;
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Absolute residual tolerance in newtons. `None` derives it from the
    /// problem as `relative_tol * n * |g| * rho * mean element volume`.
    pub residual_tol: Option<f64>,
    pub relative_tol: f64,
    pub max_newton_iters: usize,
    pub inversion_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            residual_tol: None,
            relative_tol: 1e-8,
            max_newton_iters: 100,
            inversion_threshold: DEFAULT_INVERSION_THRESHOLD,
        }
    }
}

impl SolverConfig {
    /// Same configuration with the residual tolerance divided by `factor`.
    pub fn tightened(mut self, factor: f64) -> Self {
        self.relative_tol /= factor;
        if let Some(t) = self.residual_tol.as_mut() {
            *t /= factor;
        }
        self
    }

    /// Residual tolerance for a concrete problem. A zero gravity vector uses
    /// standard gravity for the force scale.
    pub fn tolerance(&self, mesh: &TetMesh, rest: &[Vec3], density: f64, gravity: &Vec3) -> f64 {
        if let Some(t) = self.residual_tol {
            return t;
        }
        let m = mesh.num_elements().max(1) as f64;
        let mean_volume = mesh.tets.iter().map(|t| signed_volume(rest, t).abs()).sum::<f64>() / m;
        let g = if gravity.norm() > 0.0 { gravity.norm() } else { STANDARD_GRAVITY };
        self.relative_tol * mesh.num_nodes() as f64 * g * density * mean_volume
    }
}

/// Deformed configuration at static balance.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub positions: Vec<Vec3>,
    /// Infinity norm of `dW/dx - f_ext` over free vertices.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Largest Tikhonov shift needed by any Newton factorization.
    pub tikhonov_shift: f64,
    /// Newton steps that fell back to the PSD-projected stiffness.
    pub projected_steps: usize,
    pub tolerance: f64,
    /// Potential `W - f_ext . x` at the start and after every accepted step.
    pub potentials: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error(transparent)]
    Elasticity(#[from] ElasticityError),
    #[error("Newton solve did not converge ({reason}); residual {:e} > tolerance {:e} after {} iterations", state.residual_norm, state.tolerance, state.iterations)]
    NotConverged {
        reason: &'static str,
        state: Box<EquilibriumState>,
    },
    #[error("stiffness matrix is singular even after Tikhonov regularization: {0}")]
    Singular(#[from] LinalgError),
}

/// Lumped gravity load: every element adds `rho * V_e * g / 4` to each of
/// its nodes, with `V_e` the element volume in `rest`.
pub fn gravity_force(mesh: &TetMesh, rest: &[Vec3], density: f64, gravity: &Vec3) -> Vec<Vec3> {
    let mut f = vec![Vec3::zeros(); mesh.num_nodes()];
    for tet in &mesh.tets {
        let share = gravity * (density * signed_volume(rest, tet) / 4.0);
        for &v in tet {
            f[v] += share;
        }
    }
    f
}

pub(crate) fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub(crate) fn unflatten(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

pub(crate) fn dof_mask(mesh: &TetMesh) -> Vec<bool> {
    (0..mesh.num_dofs()).map(|d| mesh.is_fixed(d / 3)).collect()
}

/// Infinity norm over free vertices.
pub fn free_inf_norm(mesh: &TetMesh, v: &[Vec3]) -> f64 {
    v.iter()
        .enumerate()
        .filter(|(i, _)| !mesh.is_fixed(*i))
        .map(|(_, p)| p.amax())
        .fold(0.0, f64::max)
}

/// Reusable per-mesh solver state (sparsity layout and ordering).
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    mesh: &'m TetMesh,
    layout: StiffnessLayout,
    mask: Vec<bool>,
}

/// Factorization of the free-dof stiffness with diagnostics.
pub struct FactoredStiffness {
    pub factor: SkylineCholesky,
    pub shift: f64,
    pub projected: bool,
}

impl<'m> Simulator<'m> {
    pub fn new(mesh: &'m TetMesh) -> Self {
        Simulator {
            layout: StiffnessLayout::new(mesh),
            mask: dof_mask(mesh),
            mesh,
        }
    }

    pub fn mesh(&self) -> &'m TetMesh {
        self.mesh
    }

    pub fn layout(&self) -> &StiffnessLayout {
        &self.layout
    }

    /// Free-dof stiffness at `x` with fixed rows and columns eliminated.
    pub fn reduced_hessian(&self, model: &ElasticModel, x: &[Vec3], project: bool) -> CsrMatrix {
        let mut k = model.hessian(x, &self.layout, project);
        k.eliminate(&self.mask);
        k
    }

    /// Factors the exact stiffness. Falls back to the PSD-projected
    /// stiffness when `allow_projection` is set, and finally to the
    /// smallest power-of-ten Tikhonov shift that succeeds.
    pub fn factor_stiffness(
        &self,
        model: &ElasticModel,
        x: &[Vec3],
        allow_projection: bool,
    ) -> Result<FactoredStiffness, LinalgError> {
        let k = self.reduced_hessian(model, x, false);
        match SkylineCholesky::factor(&k, self.layout.ordering(), 0.0) {
            Ok(factor) => Ok(FactoredStiffness {
                factor,
                shift: 0.0,
                projected: false,
            }),
            Err(_) if !allow_projection => {
                let (factor, shift) = factor_with_shift(&k, self.layout.ordering())?;
                Ok(FactoredStiffness {
                    factor,
                    shift,
                    projected: false,
                })
            }
            Err(_) => {
                let kp = self.reduced_hessian(model, x, true);
                let (factor, shift) = factor_with_shift(&kp, self.layout.ordering())?;
                Ok(FactoredStiffness {
                    factor,
                    shift,
                    projected: true,
                })
            }
        }
    }

    /// Solves for static equilibrium of the body with rest shape `rest`.
    pub fn solve(
        &self,
        rest: &[Vec3],
        material: &MaterialModel,
        gravity: &Vec3,
        density: f64,
        x_init: &[Vec3],
        config: &SolverConfig,
    ) -> Result<EquilibriumState, ForwardError> {
        let mesh = self.mesh;
        let model = ElasticModel::new(mesh, rest, material, config.inversion_threshold)?;
        let f_ext = gravity_force(mesh, rest, density, gravity);
        let tolerance = config.tolerance(mesh, rest, density, gravity);

        let mut x = x_init.to_vec();
        for &i in mesh.fixed_vertices() {
            x[i] = rest[i];
        }
        let residual = |x: &[Vec3]| -> (Vec<Vec3>, f64) {
            let mut r = model.gradient(x);
            for (i, ri) in r.iter_mut().enumerate() {
                if mesh.is_fixed(i) {
                    *ri = Vec3::zeros();
                } else {
                    *ri -= f_ext[i];
                }
            }
            let n = free_inf_norm(mesh, &r);
            (r, n)
        };
        let potential = |x: &[Vec3]| -> (f64, f64) {
            let w = model.energy(x);
            let work: f64 = x.iter().zip(&f_ext).map(|(p, f)| p.dot(f)).sum();
            let scale = w.abs() + x.iter().zip(&f_ext).map(|(p, f)| p.dot(f).abs()).sum::<f64>();
            (w - work, scale)
        };

        let (mut r, mut rn) = residual(&x);
        let (mut phi, mut phi_scale) = potential(&x);
        let mut state = EquilibriumState {
            positions: Vec::new(),
            residual_norm: rn,
            iterations: 0,
            tikhonov_shift: 0.0,
            projected_steps: 0,
            tolerance,
            potentials: vec![phi],
        };
        for it in 0..=config.max_newton_iters {
            state.iterations = it;
            state.residual_norm = rn;
            if rn <= tolerance {
                state.positions = x;
                return Ok(state);
            }
            if it == config.max_newton_iters {
                break;
            }
            let fs = self.factor_stiffness(&model, &x, true)?;
            state.tikhonov_shift = state.tikhonov_shift.max(fs.shift);
            if fs.projected {
                state.projected_steps += 1;
            }
            let dx = unflatten(&fs.factor.solve(&flatten(&r)));
            let mut beta = max_noninversion_step(&x, &dx, mesh, 1.0);
            let accepted = loop {
                let trial: Vec<Vec3> = x.iter().zip(&dx).map(|(p, d)| p - beta * d).collect();
                let (phi_t, scale_t) = potential(&trial);
                if phi_t < phi {
                    let (r_t, rn_t) = residual(&trial);
                    break Some((trial, r_t, rn_t, phi_t, scale_t));
                }
                // At convergence the potential decrease drops below rounding;
                // accept a step that is flat to rounding and shrinks the
                // residual.
                if (phi_t - phi).abs() <= 1e-12 * phi_scale.max(scale_t) {
                    let (r_t, rn_t) = residual(&trial);
                    if rn_t < rn {
                        break Some((trial, r_t, rn_t, phi_t, scale_t));
                    }
                }
                beta *= 0.5;
                if beta < 1e-12 {
                    break None;
                }
            };
            match accepted {
                Some((trial, r_t, rn_t, phi_t, scale_t)) => {
                    x = trial;
                    r = r_t;
                    rn = rn_t;
                    phi = phi_t;
                    phi_scale = scale_t;
                    state.potentials.push(phi);
                }
                None => {
                    state.positions = x;
                    return Err(ForwardError::NotConverged {
                        reason: "line search failed",
                        state: Box::new(state),
                    });
                }
            }
        }
        state.positions = x;
        Err(ForwardError::NotConverged {
            reason: "iteration limit",
            state: Box::new(state),
        })
    }
}

/// Equilibrium of `mesh` (rest shape = its node positions) under gravity.
pub fn solve_quasistatic(
    mesh: &TetMesh,
    material: &MaterialModel,
    gravity: &Vec3,
    density: f64,
    x_init: &[Vec3],
    config: &SolverConfig,
) -> Result<EquilibriumState, ForwardError> {
    Simulator::new(mesh).solve(&mesh.nodes, material, gravity, density, x_init, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet() -> TetMesh {
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
    }

    #[test]
    fn gravity_lumping() {
        let mesh = unit_tet();
        let zero = gravity_force(&mesh, &mesh.nodes, 1000.0, &Vec3::zeros());
        assert!(zero.iter().all(|f| *f == Vec3::zeros()));
        let g = Vec3::new(0.0, 0.0, -9.81);
        let f = gravity_force(&mesh, &mesh.nodes, 1000.0, &g);
        let expected = -1000.0 * (1.0 / 6.0) * 9.81 / 4.0;
        for fi in &f {
            assert!((fi.z - expected).abs() < 1e-12);
            assert_eq!(fi.x, 0.0);
        }
        let total: Vec3 = f.iter().sum();
        assert!((total - g * 1000.0 / 6.0).norm() < 1e-12);
    }

    #[test]
    fn fully_fixed_body_does_not_move() {
        let mesh = unit_tet().with_fixed_vertices(0..4).unwrap();
        let mat = MaterialModel::homogeneous(1, 1e5, 0.43).unwrap();
        let mut init = mesh.nodes.clone();
        init[2].x += 0.3;
        let eq = solve_quasistatic(&mesh, &mat, &Vec3::new(0.0, 0.0, -9.81), 1000.0, &init, &SolverConfig::default())
            .unwrap();
        assert_eq!(eq.positions, mesh.nodes);
        assert_eq!(eq.iterations, 0);
    }

    #[test]
    fn zero_gravity_rest_is_equilibrium() {
        let mesh = unit_tet().with_fixed_vertices([0]).unwrap();
        let mat = MaterialModel::homogeneous(1, 1e5, 0.43).unwrap();
        let eq = solve_quasistatic(&mesh, &mat, &Vec3::zeros(), 1000.0, &mesh.nodes, &SolverConfig::default()).unwrap();
        assert_eq!(eq.iterations, 0);
        assert_eq!(eq.positions, mesh.nodes);
    }

    #[test]
    fn tolerance_scales_with_problem() {
        let mesh = unit_tet();
        let cfg = SolverConfig::default();
        let t = cfg.tolerance(&mesh, &mesh.nodes, 1000.0, &Vec3::new(0.0, 0.0, -9.81));
        assert!((t - 1e-8 * 4.0 * 9.81 * 1000.0 / 6.0).abs() < 1e-18);
        assert_eq!(cfg.tolerance(&mesh, &mesh.nodes, 1000.0, &Vec3::zeros()), t);
        let tight = cfg.tightened(100.0).tolerance(&mesh, &mesh.nodes, 1000.0, &Vec3::zeros());
        assert!((tight - t / 100.0).abs() < 1e-20);
    }
}
