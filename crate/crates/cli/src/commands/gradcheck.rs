use gravinv::forward::Simulator;
use gravinv::inverse::choose_alpha;
use gravinv::mesh::Vec3;
use gravinv::sensitivity::{Gradients, Objective, Regularizer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{required, Setup};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{read_positions, write_csv};

const LARGE_MESH: usize = 5000;

/// Scaled gradient norm below which the evaluation point counts as an
/// optimum, relative to the squared mesh diameter.
const OPTIMUM_THRESHOLD: f64 = 1e-9;

/// Entries smaller than this fraction of their block's largest entry are
/// compared against that floor instead of their own magnitude. Coordinates
/// with an almost vanishing derivative would otherwise report the
/// finite-difference noise as a relative error.
const RELATIVE_FLOOR: f64 = 1e-4;

struct Probe {
    kind: &'static str,
    index: usize,
    axis: usize,
    analytic: f64,
    fd: f64,
    rel: f64,
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(floor)
    }
}

fn mean_edge_length(setup: &Setup, x: &[Vec3]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in &setup.mesh.tets {
        for a in 0..4 {
            for b in a + 1..4 {
                sum += (x[t[a]] - x[t[b]]).norm();
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

/// Compares analytic cluster and rest-shape gradients with central finite
/// differences of the full objective, `gradcheck.probes` random probes of
/// each kind. Cluster derivatives are reported per unit relative change of
/// the modulus. Writes `gradcheck.csv`.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let gc = &cfg.gradcheck;
    let setup = Setup::load(cfg)?;
    let mesh = &setup.mesh;
    if mesh.num_elements() > LARGE_MESH {
        eprintln!(
            "warning: {} elements; finite differences on meshes above {LARGE_MESH} elements are slow",
            mesh.num_elements()
        );
    }
    let poses = setup.poses(required(&cfg.paths.poses, "paths.poses")?)?;
    let young = gc.young.clone().unwrap_or_else(|| vec![cfg.inverse.young_init]);
    let material = setup.material(&young, cfg.physics.poisson, "gradcheck.young")?;
    let reference = setup.rest(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);

    let mut rest = reference.clone();
    if gc.perturb > 0.0 {
        for (i, p) in rest.iter_mut().enumerate() {
            if !mesh.is_fixed(i) {
                *p += Vec3::from_fn(|_, _| rng.random_range(-gc.perturb..=gc.perturb));
            }
        }
    }
    if !mesh.non_positive_elements(&rest).is_empty() {
        return Err(CliError::Config("gradcheck.perturb inverts elements of the rest shape".into()));
    }

    let solver = cfg.solver.tightened(gc.tighten);
    let sim = Simulator::new(mesh);
    let density = cfg.physics.density;
    let thr = solver.inversion_threshold;
    let unregularized = Objective::new(&sim, &poses, density, solver, None).map_err(CliError::solver)?;
    let start = unregularized
        .evaluate(&rest, &material, Gradients::NONE)
        .map_err(CliError::solver)?;
    let ref_material = material
        .uniform_like(cfg.inverse.young_reference)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let neutral = match &cfg.paths.neutral {
        Some(p) => read_positions(p, mesh.num_nodes())?,
        None => rest.clone(),
    };
    let alpha = choose_alpha(&cfg.inverse, mesh, &reference, &ref_material, &neutral, start.data_term, thr)
        .map_err(CliError::solver)?;
    let reg = Regularizer::new(reference, ref_material, alpha);
    let objective = Objective::new(&sim, &poses, density, solver, Some(&reg)).map_err(CliError::solver)?;
    let report = objective.evaluate(&rest, &material, Gradients::ALL).map_err(CliError::solver)?;

    let skew = 1.0 + gc.corrupt;
    let grad_clusters: Vec<f64> = report.grad_clusters.iter().map(|g| g * skew).collect();
    let grad_rest: Vec<Vec3> = report.grad_rest.iter().map(|g| g * skew).collect();
    let young = material.cluster_young();
    let diameter = mesh.diameter();
    let cluster_block = grad_clusters.iter().zip(young).map(|(g, e)| (g * e).abs()).fold(0.0, f64::max);
    let rest_block = grad_rest.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let scaled = cluster_block.max(rest_block * diameter);
    println!(
        "gradcheck: objective {:.6e} (data {:.6e}, alpha {:.3e}), scaled gradient {:.3e}",
        report.value, report.data_term, alpha, scaled
    );

    let out = cfg.paths.output.join("gradcheck.csv");
    let header: Vec<String> = ["kind", "index", "axis", "analytic", "finite_difference", "rel_error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if scaled < OPTIMUM_THRESHOLD * diameter * diameter {
        println!("at optimum: gradient below {OPTIMUM_THRESHOLD:e} (scaled), finite differences skipped");
        write_csv(&out, &header, &[])?;
        return Ok(());
    }

    let value = |rest: &[Vec3], ys: Vec<f64>| -> Result<f64, CliError> {
        let m = material.with_cluster_young(ys).map_err(CliError::solver)?;
        Ok(objective.evaluate(rest, &m, Gradients::NONE).map_err(CliError::solver)?.value)
    };
    // Cluster probes visit every coordinate once, then continue with random
    // directions in relative modulus space.
    let mut probes = Vec::new();
    let c = young.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    for k in 0..gc.probes {
        let (kind, index, dir) = if k < c {
            let mut d = vec![0.0; c];
            d[order[k]] = 1.0;
            ("cluster", order[k], d)
        } else {
            let d: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            ("cluster_dir", k, d.iter().map(|v| v / norm).collect())
        };
        let h = gc.step;
        let shifted = |t: f64| value(&rest, young.iter().zip(&dir).map(|(e, d)| e * (1.0 + t * d)).collect());
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let analytic: f64 = grad_clusters.iter().zip(young).zip(&dir).map(|((g, e), d)| g * e * d).sum();
        probes.push(Probe {
            kind,
            index,
            axis: 0,
            analytic,
            fd,
            rel: rel_err(analytic, fd, RELATIVE_FLOOR * cluster_block),
        });
    }

    let free: Vec<usize> = (0..mesh.num_nodes()).filter(|&i| !mesh.is_fixed(i)).collect();
    let h = gc.step * mean_edge_length(&setup, &rest);
    let picks = rand::seq::index::sample(&mut rng, 3 * free.len(), gc.probes.min(3 * free.len()));
    for k in picks {
        let (node, axis) = (free[k / 3], k % 3);
        let shifted = |d: f64| {
            let mut x = rest.clone();
            x[node][axis] += d;
            value(&x, young.to_vec())
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let analytic = grad_rest[node][axis];
        probes.push(Probe {
            kind: "rest",
            index: node,
            axis,
            analytic,
            fd,
            rel: rel_err(analytic, fd, RELATIVE_FLOOR * rest_block),
        });
    }

    println!("{:<11} {:>6} {:>4} {:>16} {:>16} {:>10}", "kind", "index", "axis", "analytic", "fd", "rel_error");
    for p in &probes {
        println!(
            "{:<11} {:>6} {:>4} {:>16.8e} {:>16.8e} {:>10.2e}",
            p.kind, p.index, p.axis, p.analytic, p.fd, p.rel
        );
    }
    let rows: Vec<Vec<String>> = probes
        .iter()
        .map(|p| {
            vec![
                p.kind.to_string(),
                p.index.to_string(),
                p.axis.to_string(),
                format!("{:e}", p.analytic),
                format!("{:e}", p.fd),
                format!("{:e}", p.rel),
            ]
        })
        .collect();
    write_csv(&out, &header, &rows)?;

    let worst = probes.iter().map(|p| p.rel).fold(0.0, f64::max);
    println!("max relative error {worst:.3e} (tolerance {:e})", gc.tolerance);
    if !(worst <= gc.tolerance) {
        return Err(CliError::GradientMismatch(format!(
            "max relative error {worst:.3e} exceeds {:e}",
            gc.tolerance
        )));
    }
    Ok(())
}
