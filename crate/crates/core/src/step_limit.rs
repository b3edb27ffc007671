//! Largest step along a search direction that keeps every tetrahedron
//! positively oriented.
//!
//! For an element with edge matrices `A` (current) and `B` (direction), the
//! signed volume along `positions - beta * direction` is the cubic
//! `det(A - beta B) / 6`. The admissible step for that element ends at the
//! first positive root of `det(A - beta B) - eps det(A)`.

use nalgebra::Vector3;

use crate::mesh::{edge_matrix, TetMesh, Vec3};

/// Minimum retained fraction of the current element volume.
pub const VOLUME_FLOOR: f64 = 0.01;
/// Multiplier applied to the limiting root.
pub const SAFETY_FACTOR: f64 = 0.9;

/// Largest `beta <= beta_init` such that no element of
/// `positions - beta * direction` falls below `VOLUME_FLOOR` of its current
/// volume, scaled by `SAFETY_FACTOR` when a root limits the step. Elements
/// that are already non-positive are ignored.
pub fn max_noninversion_step(positions: &[Vec3], direction: &[Vec3], mesh: &TetMesh, beta_init: f64) -> f64 {
    let mut limit = beta_init;
    let mut limited = false;
    for tet in &mesh.tets {
        let a = edge_matrix(positions, tet);
        let b = edge_matrix(direction, tet);
        if let Some(root) = first_volume_root(&a, &b, beta_init) {
            if root < limit {
                limit = root;
                limited = true;
            }
        }
    }
    if limited {
        SAFETY_FACTOR * limit
    } else {
        beta_init
    }
}

fn cross_dot(p: Vector3<f64>, q: Vector3<f64>, r: Vector3<f64>) -> f64 {
    p.cross(&q).dot(&r)
}

/// Coefficients `[c0, c1, c2, c3]` of `det(A - beta B) - eps det(A)`.
fn volume_cubic(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>) -> Option<[f64; 4]> {
    let (a0, a1, a2) = (a.column(0).into_owned(), a.column(1).into_owned(), a.column(2).into_owned());
    let (b0, b1, b2) = (b.column(0).into_owned(), b.column(1).into_owned(), b.column(2).into_owned());
    let det_a = a.determinant();
    if !(det_a > 0.0) {
        return None;
    }
    let tr_adj_a_b = cross_dot(a1, a2, b0) + cross_dot(a2, a0, b1) + cross_dot(a0, a1, b2);
    let tr_a_adj_b = cross_dot(b1, b2, a0) + cross_dot(b2, b0, a1) + cross_dot(b0, b1, a2);
    Some([
        (1.0 - VOLUME_FLOOR) * det_a,
        -tr_adj_a_b,
        tr_a_adj_b,
        -b.determinant(),
    ])
}

fn eval_cubic(c: &[f64; 4], t: f64) -> f64 {
    ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
}

/// Real roots of `q2 t^2 + q1 t + q0` (degenerate forms included).
fn quadratic_roots(q2: f64, q1: f64, q0: f64) -> Vec<f64> {
    let scale = q2.abs().max(q1.abs()).max(q0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if q2.abs() <= 1e-14 * scale {
        if q1.abs() <= 1e-14 * scale {
            return Vec::new();
        }
        return vec![-q0 / q1];
    }
    let disc = q1 * q1 - 4.0 * q2 * q0;
    if disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let q = -0.5 * (q1 + s.copysign(q1));
    let mut roots = vec![q / q2];
    if q != 0.0 {
        roots.push(q0 / q);
    }
    roots
}

/// First root of the element's volume-floor cubic in `(0, beta_max]`.
fn first_volume_root(a: &nalgebra::Matrix3<f64>, b: &nalgebra::Matrix3<f64>, beta_max: f64) -> Option<f64> {
    let c = volume_cubic(a, b)?;
    // Split at the critical points so the cubic is monotone on each piece.
    let mut knots: Vec<f64> = quadratic_roots(3.0 * c[3], 2.0 * c[2], c[1])
        .into_iter()
        .filter(|&t| t > 0.0 && t < beta_max)
        .collect();
    knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    knots.push(beta_max);
    let mut lo = 0.0;
    for hi in knots {
        if eval_cubic(&c, hi) <= 0.0 {
            let (mut l, mut h) = (lo, hi);
            for _ in 0..100 {
                let mid = 0.5 * (l + h);
                if mid <= l || mid >= h {
                    break;
                }
                if eval_cubic(&c, mid) > 0.0 {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            return Some(l);
        }
        lo = hi;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::signed_volume;

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
    fn zero_direction_keeps_initial_step() {
        let mesh = unit_tet();
        assert_eq!(max_noninversion_step(&mesh.nodes, &[Vec3::zeros(); 4], &mesh, 1.0), 1.0);
    }

    #[test]
    fn vertex_crossing_opposite_face_at_half() {
        let mesh = unit_tet();
        let mut dir = vec![Vec3::zeros(); 4];
        dir[3] = Vec3::new(0.0, 0.0, 2.0);
        let beta = max_noninversion_step(&mesh.nodes, &dir, &mesh, 1.0);
        assert!(beta <= 0.45 && beta > 0.2, "beta = {beta}");
        // Root of (1 - 2 beta) = 0.01 is 0.495.
        assert!((beta - 0.9 * 0.495).abs() < 1e-12);
    }

    #[test]
    fn small_random_perturbations_do_not_limit() {
        let mesh = unit_tet();
        let dir: Vec<Vec3> = (0..4)
            .map(|i| Vec3::new((i as f64 * 1.3).sin(), (i as f64 * 2.1).cos(), (i as f64).sin()) * 1e-3)
            .collect();
        assert_eq!(max_noninversion_step(&mesh.nodes, &dir, &mesh, 1.0), 1.0);
        // Grid sweep agrees: volume never approaches zero.
        for k in 0..=100 {
            let beta = k as f64 / 100.0;
            let p: Vec<Vec3> = mesh.nodes.iter().zip(&dir).map(|(x, d)| x - beta * d).collect();
            assert!(signed_volume(&p, &mesh.tets[0]) > 0.15);
        }
    }

    #[test]
    fn cubic_root_agrees_with_sweep() {
        let mesh = unit_tet();
        let dir = vec![
            Vec3::new(0.3, -0.2, 0.1),
            Vec3::new(1.4, 0.5, -0.3),
            Vec3::new(-0.2, 1.1, 0.4),
            Vec3::new(0.2, 0.3, 0.9),
        ];
        let beta = max_noninversion_step(&mesh.nodes, &dir, &mesh, 5.0);
        let root = beta / SAFETY_FACTOR;
        let v0 = signed_volume(&mesh.nodes, &mesh.tets[0]);
        let vol = |b: f64| {
            let p: Vec<Vec3> = mesh.nodes.iter().zip(&dir).map(|(x, d)| x - b * d).collect();
            signed_volume(&p, &mesh.tets[0])
        };
        assert!((vol(root) - VOLUME_FLOOR * v0).abs() < 1e-10);
        let n = 10_000;
        for k in 0..n {
            let b = root * k as f64 / n as f64;
            assert!(vol(b) >= VOLUME_FLOOR * v0 - 1e-12);
        }
    }
}
