use gravinv::elasticity::MaterialModel;
use gravinv::forward::Simulator;
use gravinv::mesh::Vec3;
use gravinv::pose::PoseObservation;

use super::invert::Moduli;
use super::{required, Setup};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{read_json, read_positions, write_csv};

struct Row {
    pose: String,
    model: &'static str,
    total: f64,
    mean: f64,
    status: String,
}

fn score(
    sim: &Simulator,
    cfg: &RunConfig,
    model: &'static str,
    rest: &[Vec3],
    material: &MaterialModel,
    poses: &[PoseObservation],
) -> Vec<Row> {
    let mut rows = Vec::with_capacity(poses.len() + 1);
    let (mut total, mut count, mut failed) = (0.0, 0usize, 0usize);
    for (i, pose) in poses.iter().enumerate() {
        let row = match sim.solve(rest, material, &pose.gravity, cfg.physics.density, rest, &cfg.solver) {
            Ok(eq) => {
                let (t, m) = pose.vertex_errors(&eq.positions);
                total += t;
                count += pose.len();
                Row {
                    pose: i.to_string(),
                    model,
                    total: t,
                    mean: m,
                    status: "ok".into(),
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("validate: {model} model, pose {i}: {e}");
                Row {
                    pose: i.to_string(),
                    model,
                    total: f64::NAN,
                    mean: f64::NAN,
                    status: "failed".into(),
                }
            }
        };
        rows.push(row);
    }
    rows.push(Row {
        pose: "all".into(),
        model,
        total,
        mean: if count > 0 { total / count as f64 } else { f64::NAN },
        status: match failed {
            0 => "ok".into(),
            n if n == poses.len() => "failed".into(),
            n => format!("partial ({n} failed)"),
        },
    });
    rows
}

/// Re-simulates held-out poses with the recovered model and with the naive
/// baseline (observed neutral shape as rest, homogeneous soft modulus) and
/// writes per-pose and aggregate vertex errors to `validation.csv`.
pub fn cmd_validate(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::load(cfg)?;
    let heldout = required(&cfg.paths.heldout, "paths.heldout")?;
    let poses = setup.poses(heldout)?;
    if poses.is_empty() {
        return Err(CliError::Config(format!("{} contains no poses", heldout.display())));
    }
    let dir = cfg.paths.inversion.as_ref().unwrap_or(&cfg.paths.output);
    let n = setup.mesh.num_nodes();
    let rest = read_positions(&dir.join("rest.node"), n)?;
    let moduli: Moduli = read_json(&dir.join("moduli.json"))?;
    let material = setup.material(&moduli.cluster_young, cfg.physics.poisson, "moduli.json")?;
    let neutral = read_positions(required(&cfg.paths.neutral, "paths.neutral")?, n)?;
    let naive = setup.material(&[cfg.validate.naive_young], cfg.physics.poisson, "validate.naive_young")?;
    if !setup.mesh.non_positive_elements(&neutral).is_empty() {
        return Err(CliError::Config("the neutral observation has inverted elements".into()));
    }

    let sim = Simulator::new(&setup.mesh);
    let mut rows = score(&sim, cfg, "inverted", &rest, &material, &poses);
    rows.extend(score(&sim, cfg, "naive", &neutral, &naive, &poses));

    let header: Vec<String> = ["pose", "model", "total_error", "mean_vertex_error", "status"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.pose.clone(),
                r.model.to_string(),
                format!("{:e}", r.total),
                format!("{:e}", r.mean),
                r.status.clone(),
            ]
        })
        .collect();
    write_csv(&cfg.paths.output.join("validation.csv"), &header, &table)?;
    println!("{:<6} {:<9} {:>14} {:>18} status", "pose", "model", "total_error", "mean_vertex_error");
    for r in &rows {
        println!("{:<6} {:<9} {:>14.6e} {:>18.6e} {}", r.pose, r.model, r.total, r.mean, r.status);
    }
    Ok(())
}
