use gravinv::elasticity::ElasticModel;
use gravinv::forward::{gravity_force, free_inf_norm, ForwardError, Simulator};
use gravinv::mesh::Vec3;
use serde::Serialize;

use super::{vec3, Setup, FORMAT_VERSION};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{write_json, write_node_file};

#[derive(Debug, Serialize)]
struct ForwardReport {
    format_version: u32,
    status: &'static str,
    error: Option<String>,
    gravity: [f64; 3],
    /// Residual reported by the solver.
    residual: f64,
    /// Residual recomputed from the written positions.
    residual_check: f64,
    tolerance: f64,
    iterations: usize,
    energy: f64,
    potential: f64,
    projected_steps: usize,
    tikhonov_shift: f64,
    max_displacement: f64,
}

/// Static equilibrium under gravity along `forward.direction`. Writes
/// `deformed.node` and `forward.json`.
pub fn cmd_forward(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::load(cfg)?;
    let mesh = &setup.mesh;
    let material = setup.material(&cfg.physics.young, cfg.physics.poisson, "physics.young")?;
    let rest = setup.rest(cfg)?;
    let dir = vec3(cfg.forward.direction);
    let gravity = if dir.norm() > 0.0 {
        dir.normalize() * cfg.physics.gravity
    } else {
        Vec3::zeros()
    };
    let sim = Simulator::new(mesh);
    let out = &cfg.paths.output;
    let result = sim.solve(&rest, &material, &gravity, cfg.physics.density, &rest, &cfg.solver);

    let (state, error) = match result {
        Ok(s) => (s, None),
        Err(ForwardError::NotConverged { reason, state }) => (*state, Some(format!("not converged: {reason}"))),
        Err(e) => return Err(CliError::solver(e)),
    };
    let model = ElasticModel::new(mesh, &rest, &material, cfg.solver.inversion_threshold).map_err(CliError::solver)?;
    let f_ext = gravity_force(mesh, &rest, cfg.physics.density, &gravity);
    let residual: Vec<Vec3> = model.gradient(&state.positions).iter().zip(&f_ext).map(|(g, f)| g - f).collect();
    let max_displacement = state
        .positions
        .iter()
        .zip(&rest)
        .map(|(x, r)| (x - r).norm())
        .fold(0.0, f64::max);
    let report = ForwardReport {
        format_version: FORMAT_VERSION,
        status: if error.is_none() { "converged" } else { "failed" },
        error: error.clone(),
        gravity: [gravity.x, gravity.y, gravity.z],
        residual: state.residual_norm,
        residual_check: free_inf_norm(mesh, &residual),
        tolerance: state.tolerance,
        iterations: state.iterations,
        energy: model.energy(&state.positions),
        potential: state.potentials.last().copied().unwrap_or(f64::NAN),
        projected_steps: state.projected_steps,
        tikhonov_shift: state.tikhonov_shift,
        max_displacement,
    };
    write_json(&out.join("forward.json"), &report)?;
    if let Some(e) = error {
        return Err(CliError::Solver(e));
    }
    write_node_file(&out.join("deformed.node"), &state.positions)?;
    println!(
        "forward: {} Newton iterations, residual {:.3e} (tolerance {:.3e}), max displacement {:.4e} m",
        report.iterations, report.residual, report.tolerance, report.max_displacement
    );
    Ok(())
}
