use std::time::Instant;

use gravinv::forward::Simulator;
use gravinv::inverse::{
    block_coordinate_descent, choose_alpha, initial_rest_guess, optimize_materials, optimize_rest_shape, HistoryRecord,
    InverseError, InversionProblem, InversionResult, Phase, PhaseOutcome, StopReason,
};
use gravinv::mesh::Vec3;
use gravinv::elasticity::MaterialModel;
use gravinv::sensitivity::{Gradients, Objective, Regularizer};
use serde::{Deserialize, Serialize};

use super::{required, vec3, Setup, FORMAT_VERSION};
use crate::config::{InvertMode, RunConfig};
use crate::error::CliError;
use crate::io::{read_positions, write_csv, write_json, write_node_file};

/// Contents of `moduli.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Moduli {
    pub format_version: u32,
    pub cluster_young: Vec<f64>,
    pub poisson: f64,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    format_version: u32,
    status: &'static str,
    error: Option<String>,
    mode: &'static str,
    alpha: f64,
    objective: f64,
    converged: bool,
    reason: &'a str,
    iterations: usize,
    runtime_seconds: f64,
    threads: usize,
    history_columns: Vec<String>,
    config: &'a RunConfig,
}

pub fn history_columns(num_clusters: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["phase", "iter", "objective", "data_term", "reg_term", "grad_norm", "step"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..num_clusters).map(|c| format!("E_{c}")));
    cols.push("outer".into());
    cols.push("min_rest_volume".into());
    cols
}

fn history_row(h: &HistoryRecord) -> Vec<String> {
    let mut row = vec![
        h.phase.to_string(),
        h.iter.to_string(),
        format!("{:e}", h.objective),
        format!("{:e}", h.data_term),
        format!("{:e}", h.reg_term),
        format!("{:e}", h.grad_norm),
        format!("{:e}", h.step),
    ];
    row.extend(h.cluster_young.iter().map(|e| format!("{e:e}")));
    row.push(h.outer.to_string());
    row.push(format!("{:e}", h.min_rest_volume));
    row
}

fn from_phase(p: PhaseOutcome, alpha: f64, initial_rest: Vec<Vec3>) -> InversionResult {
    InversionResult {
        rest_shape: p.rest,
        cluster_young: p.material.cluster_young().to_vec(),
        converged: p.reason == StopReason::Converged,
        reason: p.reason.to_string(),
        alpha,
        objective: p.report.value,
        history: p.history,
        initial_rest,
    }
}

/// Loaded inputs of an inversion.
struct Inputs {
    poses: Vec<gravinv::pose::PoseObservation>,
    neutral: Option<Vec<Vec3>>,
    template: MaterialModel,
    rest: Vec<Vec3>,
}

impl Inputs {
    fn load(cfg: &RunConfig, setup: &Setup) -> Result<Self, CliError> {
        let poses = setup.poses(required(&cfg.paths.poses, "paths.poses")?)?;
        let neutral = match cfg.invert.mode {
            InvertMode::Materials => None,
            _ => {
                let p = required(&cfg.paths.neutral, "paths.neutral")?;
                Some(read_positions(p, setup.mesh.num_nodes())?)
            }
        };
        Ok(Inputs {
            poses,
            neutral,
            template: setup.material(&cfg.physics.young, cfg.physics.poisson, "physics.young")?,
            rest: setup.rest(cfg)?,
        })
    }
}

fn run(cfg: &RunConfig, setup: &Setup, sim: &Simulator, inputs: &Inputs) -> Result<InversionResult, InverseError> {
    let inv = &cfg.inverse;
    let density = cfg.physics.density;
    let poses = &inputs.poses;
    let template = &inputs.template;
    let neutral_gravity = vec3(cfg.physics.neutral_gravity());
    let observed_neutral = inputs.neutral.as_deref().unwrap_or(&[]);

    match cfg.invert.mode {
        InvertMode::Joint => {
            let problem = InversionProblem {
                sim,
                poses,
                observed_neutral,
                neutral_gravity,
                material_template: template,
                density,
                solver: cfg.solver,
            };
            block_coordinate_descent(&problem, inv)
        }
        InvertMode::Materials => {
            let rest = &inputs.rest;
            let material0 = template.uniform_like(inv.young_init)?;
            let objective = Objective::new(sim, poses, density, cfg.solver, None)?;
            let scale = objective.evaluate(rest, &material0, Gradients::NONE)?.data_term.max(f64::MIN_POSITIVE);
            let out = optimize_materials(&objective, rest, &material0, inv, Phase::Material, 1, scale, None)?;
            Ok(from_phase(out, 0.0, rest.clone()))
        }
        InvertMode::Rest => {
            let x0 = initial_rest_guess(sim, observed_neutral, template, &neutral_gravity, density, &cfg.solver)
                .map_err(InverseError::InitialGuess)?;
            let start = Objective::new(sim, poses, density, cfg.solver, None)?.evaluate(&x0, template, Gradients::NONE)?;
            let reference = template.uniform_like(inv.young_reference)?;
            let thr = cfg.solver.inversion_threshold;
            let alpha = choose_alpha(inv, &setup.mesh, &x0, &reference, observed_neutral, start.data_term, thr)?;
            let reg = Regularizer::new(x0.clone(), reference, alpha);
            let objective = Objective::new(sim, poses, density, cfg.solver, Some(&reg))?;
            let scale = start.data_term.max(f64::MIN_POSITIVE);
            let out = optimize_rest_shape(&objective, template, &x0, inv, 1, scale, None)?;
            Ok(from_phase(out, alpha, x0))
        }
    }
}

/// Runs the inversion selected by `invert.mode` and writes `rest.node`,
/// `initial_rest.node`, `moduli.json`, `history.csv` and `metadata.json`.
/// An aborted run still writes its partial history.
pub fn cmd_invert(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::load(cfg)?;
    let inputs = Inputs::load(cfg, &setup)?;
    let sim = Simulator::new(&setup.mesh);
    let started = Instant::now();
    let outcome = run(cfg, &setup, &sim, &inputs);
    let runtime = started.elapsed().as_secs_f64();

    let (result, error) = match outcome {
        Ok(r) => (r, None),
        Err(InverseError::Aborted { source, partial }) => (*partial, Some(CliError::solver(source))),
        Err(InverseError::Config(e)) => return Err(CliError::Config(e.to_string())),
        Err(e) => return Err(CliError::solver(e)),
    };

    let out = &cfg.paths.output;
    let columns = history_columns(setup.num_clusters());
    let rows: Vec<Vec<String>> = result.history.iter().map(history_row).collect();
    write_csv(&out.join("history.csv"), &columns, &rows)?;
    write_node_file(&out.join("rest.node"), &result.rest_shape)?;
    write_node_file(&out.join("initial_rest.node"), &result.initial_rest)?;
    write_json(
        &out.join("moduli.json"),
        &Moduli {
            format_version: FORMAT_VERSION,
            cluster_young: result.cluster_young.clone(),
            poisson: cfg.physics.poisson,
        },
    )?;
    let iterations = result.history.iter().filter(|h| h.iter > 0).count();
    write_json(
        &out.join("metadata.json"),
        &Metadata {
            format_version: FORMAT_VERSION,
            status: if error.is_none() { "ok" } else { "aborted" },
            error: error.as_ref().map(|e| e.to_string()),
            mode: cfg.invert.mode.as_str(),
            alpha: result.alpha,
            objective: result.objective,
            converged: result.converged,
            reason: &result.reason,
            iterations,
            runtime_seconds: runtime,
            threads: rayon::current_num_threads(),
            history_columns: columns,
            config: cfg,
        },
    )?;
    if let Some(e) = error {
        return Err(e);
    }
    let moduli: Vec<String> = result.cluster_young.iter().map(|e| format!("{e:.4e}")).collect();
    println!(
        "invert ({}): objective {:.4e}, {} iterations ({}), moduli [{}], {:.1} s",
        cfg.invert.mode.as_str(),
        result.objective,
        iterations,
        result.reason,
        moduli.join(", "),
        runtime
    );
    Ok(())
}
