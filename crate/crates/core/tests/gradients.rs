//! End-to-end finite-difference checks of the adjoint gradients.

mod common;

use common::*;
use gravinv::forward::{Simulator, SolverConfig, DEFAULT_DENSITY};
use gravinv::mesh::Vec3;
use gravinv::sensitivity::{Gradients, Objective, Regularizer};
use gravinv::synth::BlockSpec;

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[test]
fn cluster_and_rest_gradients_match_finite_differences() {
    let b = bench(BlockSpec { cells: [6, 2, 2], cell_size: 0.01 });
    let solver = SolverConfig::default().tightened(100.0);
    let sim = Simulator::new(&b.mesh);
    let poses = poses(&b, &sim, &five_angles(), &solver);
    let rest = wobble(&b.mesh, 4e-4);
    let material = b.material.with_cluster_young(vec![5e4, 1e5, 4e5]).unwrap();
    let reg = Regularizer::new(b.mesh.nodes.clone(), b.material.uniform_like(1e6).unwrap(), 1e-9);
    let obj = Objective::new(&sim, &poses, DEFAULT_DENSITY, solver, Some(&reg)).unwrap();
    let r = obj.evaluate(&rest, &material, Gradients::ALL).unwrap();
    println!("value {:e} data {:e} reg {:e}", r.value, r.data_term, r.reg_term);

    for c in 0..3 {
        let e = material.cluster_young()[c];
        let h = 1e-5 * e;
        let eval = |d: f64| {
            let mut ys = material.cluster_young().to_vec();
            ys[c] += d;
            obj.evaluate(&rest, &material.with_cluster_young(ys).unwrap(), Gradients::NONE).unwrap().value
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let err = rel_err(r.grad_clusters[c], fd, 0.0);
        println!("cluster {c}: analytic {:e} fd {:e} rel {:e}", r.grad_clusters[c], fd, err);
        assert!(err < 1e-4);
    }

    let gmax = r.grad_rest.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let h = 1e-5 * b.spec.cell_size;
    let free: Vec<usize> = (0..b.mesh.num_nodes()).filter(|&i| !b.mesh.is_fixed(i)).collect();
    for k in 0..12 {
        let node = free[(k * 37) % free.len()];
        let axis = k % 3;
        let eval = |d: f64| {
            let mut x = rest.clone();
            x[node][axis] += d;
            obj.evaluate(&x, &material, Gradients::NONE).unwrap().value
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let a = r.grad_rest[node][axis];
        let err = rel_err(a, fd, 1e-3 * gmax);
        println!("rest {node}.{axis}: analytic {a:e} fd {fd:e} rel {err:e}");
        assert!(err < 1e-4);
    }
    for &i in b.mesh.fixed_vertices() {
        assert_eq!(r.grad_rest[i], Vec3::zeros());
    }
}

#[test]
fn data_only_rest_gradient_matches_finite_differences() {
    // Without a regularizer every entry comes from the adjoint terms.
    let b = bench(BlockSpec { cells: [4, 1, 1], cell_size: 0.02 });
    let solver = SolverConfig::default().tightened(100.0);
    let sim = Simulator::new(&b.mesh);
    let poses = poses(&b, &sim, &[-40.0, 10.0], &solver);
    let rest = wobble(&b.mesh, 5e-4);
    let obj = Objective::new(&sim, &poses, DEFAULT_DENSITY, solver, None).unwrap();
    let r = obj.evaluate(&rest, &b.material, Gradients::REST).unwrap();
    let gmax = r.grad_rest.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let h = 1e-5 * b.spec.cell_size;
    for node in (0..b.mesh.num_nodes()).filter(|&i| !b.mesh.is_fixed(i)) {
        for axis in 0..3 {
            let eval = |d: f64| {
                let mut x = rest.clone();
                x[node][axis] += d;
                obj.evaluate(&x, &b.material, Gradients::NONE).unwrap().value
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = r.grad_rest[node][axis];
            assert!(rel_err(a, fd, 1e-3 * gmax) < 1e-4, "{node}.{axis}: {a:e} vs {fd:e}");
        }
    }
}

#[test]
fn adjoint_solves_the_stiffness_system() {
    use gravinv::elasticity::ElasticModel;
    use gravinv::forward::free_inf_norm;
    use gravinv::sensitivity::adjoint_solve;

    let b = bench(BlockSpec { cells: [5, 2, 1], cell_size: 0.01 });
    let solver = SolverConfig::default();
    let sim = Simulator::new(&b.mesh);
    let mut ps = poses(&b, &sim, &[20.0], &solver);
    for (k, t) in ps[0].targets.iter_mut().enumerate() {
        *t += 1e-4 * Vec3::new((k as f64).sin(), (3.0 * k as f64).cos(), 0.5);
    }
    let model = ElasticModel::new(&b.mesh, &b.mesh.nodes, &b.material, 0.2).unwrap();
    let eq = sim.solve(&b.mesh.nodes, &b.material, &ps[0].gravity, DEFAULT_DENSITY, &b.mesh.nodes, &solver).unwrap();
    let adj = adjoint_solve(&sim, &model, &eq.positions, &ps[0]).unwrap();
    assert_eq!(adj.tikhonov_shift, 0.0);
    let k = sim.reduced_hessian(&model, &eq.positions, false);
    let flat: Vec<f64> = adj.lambda.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let kl = k.mul_vec(&flat);
    let rhs = ps[0].misfit(&eq.positions);
    let res: Vec<Vec3> = kl.chunks(3).zip(&rhs).map(|(c, r)| Vec3::new(c[0], c[1], c[2]) - r).collect();
    let rhs_norm = free_inf_norm(&b.mesh, &rhs);
    assert!(free_inf_norm(&b.mesh, &res) < 1e-10 * rhs_norm);
    for &i in b.mesh.fixed_vertices() {
        assert_eq!(adj.lambda[i], Vec3::zeros());
    }
}

#[test]
fn perfect_fit_gives_zero_gradients() {
    let b = bench(BlockSpec { cells: [4, 2, 2], cell_size: 0.01 });
    let solver = SolverConfig::default();
    let sim = Simulator::new(&b.mesh);
    let ps = poses(&b, &sim, &[0.0, 45.0], &solver);
    let obj = Objective::new(&sim, &ps, DEFAULT_DENSITY, solver, None).unwrap();
    let r = obj.evaluate(&b.mesh.nodes, &b.material, Gradients::ALL).unwrap();
    assert_eq!(r.value, 0.0);
    assert!(r.grad_clusters.iter().all(|&g| g == 0.0));
    assert!(r.grad_rest.iter().all(|g| *g == Vec3::zeros()));

    // With a regularizer the value is alpha R(X) and R vanishes at X = X0.
    let reg = Regularizer::new(b.mesh.nodes.clone(), b.material.uniform_like(1e6).unwrap(), 0.5);
    let obj = Objective::new(&sim, &ps, DEFAULT_DENSITY, solver, Some(&reg)).unwrap();
    let r = obj.evaluate(&b.mesh.nodes, &b.material, Gradients::ALL).unwrap();
    assert_eq!(r.data_term, 0.0);
    // Zero up to rounding in F = Ds Dm^-1 (mu * volume is about 1e-1 J here).
    assert!(r.reg_term.abs() < 1e-12);
    assert!(r.grad_rest.iter().all(|g| g.amax() < 1e-12));
}

#[test]
fn gradient_vanishes_at_constructed_optimum() {
    // Targets produced by the model itself but only up to the solver
    // tolerance: the gradient is tiny relative to the objective scale.
    let b = bench(BlockSpec { cells: [6, 2, 2], cell_size: 0.01 });
    let solver = SolverConfig::default();
    let sim = Simulator::new(&b.mesh);
    let ps = poses(&b, &sim, &five_angles(), &solver);
    let obj = Objective::new(&sim, &ps, DEFAULT_DENSITY, solver, None).unwrap();
    let r = obj.evaluate(&b.mesh.nodes, &b.material, Gradients::ALL).unwrap();
    // Objective scale: the data term of the undeformed guess.
    let scale: f64 = ps.iter().map(|p| p.data_term(&b.mesh.nodes)).sum();
    let gc = r.grad_clusters.iter().zip(b.material.cluster_young()).map(|(g, e)| (g * e).abs()).fold(0.0, f64::max);
    let gr = r.grad_rest.iter().map(|g| g.amax()).fold(0.0, f64::max) * b.mesh.diameter();
    assert!(gc < 1e-9 * scale, "{gc:e} vs {scale:e}");
    assert!(gr < 1e-9 * scale, "{gr:e} vs {scale:e}");
}

#[test]
fn poses_add_up() {
    let b = bench(BlockSpec { cells: [5, 2, 1], cell_size: 0.01 });
    let solver = SolverConfig::default();
    let sim = Simulator::new(&b.mesh);
    let ps = poses(&b, &sim, &[-30.0, 30.0], &solver);
    let rest = wobble(&b.mesh, 2e-4);
    let material = b.material.uniform_like(1e5).unwrap();
    let reg = Regularizer::new(b.mesh.nodes.clone(), b.material.uniform_like(1e6).unwrap(), 1e-6);
    let obj = Objective::new(&sim, &ps, DEFAULT_DENSITY, solver, Some(&reg)).unwrap();
    let both = obj.evaluate(&rest, &material, Gradients::ALL).unwrap();
    let one = obj.with_poses(&ps[..1]).evaluate(&rest, &material, Gradients::ALL).unwrap();
    let two = obj.with_poses(&ps[1..]).evaluate(&rest, &material, Gradients::ALL).unwrap();
    let reg_grad = reg.gradient(&b.mesh, &rest, 0.2).unwrap();

    assert!((both.value - (one.value + two.value - both.alpha * both.reg_term)).abs() < 1e-12 * both.value);
    assert_eq!(both.data_term, one.data_term + two.data_term);
    for c in 0..3 {
        assert_eq!(both.grad_clusters[c], one.grad_clusters[c] + two.grad_clusters[c]);
    }
    for i in (0..b.mesh.num_nodes()).filter(|&i| !b.mesh.is_fixed(i)) {
        let sum = one.grad_rest[i] + two.grad_rest[i] - reg.alpha * reg_grad[i];
        assert!((both.grad_rest[i] - sum).amax() < 1e-12 * both.grad_rest_norm());
    }

    // Two identical poses double the data term and its gradients.
    let twice = vec![ps[0].clone(), ps[0].clone()];
    let dbl = Objective::new(&sim, &twice, DEFAULT_DENSITY, solver, None).unwrap();
    let single = dbl.with_poses(&twice[..1]);
    let d = dbl.evaluate(&rest, &material, Gradients::ALL).unwrap();
    let s = single.evaluate(&rest, &material, Gradients::ALL).unwrap();
    assert_eq!(d.data_term, 2.0 * s.data_term);
    for c in 0..3 {
        assert_eq!(d.grad_clusters[c], 2.0 * s.grad_clusters[c]);
    }
    assert!(d.grad_rest.iter().zip(&s.grad_rest).all(|(a, b)| *a == 2.0 * b));
}

#[test]
fn duplicated_cluster_splits_the_gradient() {
    use gravinv::elasticity::MaterialModel;
    use gravinv::mesh::ClusterMap;
    use std::sync::Arc;

    let b = bench(BlockSpec { cells: [4, 2, 1], cell_size: 0.01 });
    let solver = SolverConfig::default();
    let sim = Simulator::new(&b.mesh);
    let ps = poses(&b, &sim, &[0.0], &solver);
    let rest = wobble(&b.mesh, 2e-4);
    let obj = Objective::new(&sim, &ps, DEFAULT_DENSITY, solver, None).unwrap();
    let m = b.mesh.num_elements();
    let single = MaterialModel::homogeneous(m, 1e5, 0.43).unwrap();
    // Two clusters, each holding half the weight of every element.
    let halves = ClusterMap::from_rows(2, vec![vec![(0, 0.5), (1, 0.5)]; m]).unwrap();
    let split = MaterialModel::new(vec![1e5, 1e5], Arc::new(halves), 0.43).unwrap();
    let a = obj.evaluate(&rest, &single, Gradients::CLUSTERS).unwrap();
    let c = obj.evaluate(&rest, &split, Gradients::CLUSTERS).unwrap();
    assert_eq!(a.value, c.value);
    assert!((c.grad_clusters[0] + c.grad_clusters[1] - a.grad_clusters[0]).abs() < 1e-12 * a.grad_clusters[0].abs());
}

#[test]
fn mirror_symmetric_problem_has_symmetric_adjoint() {
    use gravinv::elasticity::ElasticModel;
    use gravinv::sensitivity::adjoint_solve;
    use gravinv::pose::PoseObservation;

    // The block is symmetric under y -> W - y up to the tet split, so build
    // the mirror image explicitly and compare.
    let spec = BlockSpec { cells: [4, 2, 2], cell_size: 0.01 };
    let b = bench(spec);
    let width = 2.0 * spec.cell_size;
    let mirror_nodes: Vec<Vec3> = b.mesh.nodes.iter().map(|p| Vec3::new(p.x, width - p.y, p.z)).collect();
    let mirror_tets: Vec<[usize; 4]> = b.mesh.tets.iter().map(|t| [t[0], t[1], t[3], t[2]]).collect();
    let mirror = gravinv::mesh::TetMesh::new(mirror_nodes, mirror_tets)
        .unwrap()
        .with_fixed_vertices(b.mesh.fixed_vertices().to_vec())
        .unwrap();
    let solver = SolverConfig::default();
    let g = Vec3::new(0.0, 3.0, -9.0);
    let gm = Vec3::new(0.0, -3.0, -9.0);
    let ids: Vec<usize> = (0..b.mesh.num_nodes()).filter(|&i| !b.mesh.is_fixed(i)).collect();
    let offsets: Vec<Vec3> = ids.iter().map(|&i| 1e-4 * Vec3::new((i as f64).sin(), (i as f64).cos(), 0.3)).collect();

    let run = |mesh: &gravinv::mesh::TetMesh, g: Vec3, flip: bool| {
        let sim = Simulator::new(mesh);
        let eq = sim.solve(&mesh.nodes, &b.material, &g, DEFAULT_DENSITY, &mesh.nodes, &solver).unwrap();
        let targets = ids
            .iter()
            .zip(&offsets)
            .map(|(&i, o)| eq.positions[i] + if flip { Vec3::new(o.x, -o.y, o.z) } else { *o })
            .collect();
        let pose = PoseObservation::new(g, ids.clone(), targets);
        let model = ElasticModel::new(mesh, &mesh.nodes, &b.material, 0.2).unwrap();
        adjoint_solve(&sim, &model, &eq.positions, &pose).unwrap().lambda
    };
    let la = run(&b.mesh, g, false);
    let lb = run(&mirror, gm, true);
    let scale = la.iter().map(|v| v.amax()).fold(0.0, f64::max);
    for (a, m) in la.iter().zip(&lb) {
        let reflected = Vec3::new(m.x, -m.y, m.z);
        assert!((a - reflected).amax() < 1e-10 * scale);
    }
}
