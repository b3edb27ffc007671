//! Compressible Neo-Hookean elasticity on linear tetrahedra.
//!
//! Energy density
//!
//! ```text
//! psi(F) = mu/2 (tr(F^T F) - 3) - mu ln J + lambda/2 (ln J)^2,   J = det F
//! ```
//!
//! evaluated on a thresholded deformation gradient: when the smallest signed
//! singular value of `F` drops to the inversion threshold, the singular
//! values are clamped from below and the energy is evaluated on the clamped
//! reconstruction. Forces and stiffness are exact derivatives of that
//! energy. When no clamping is needed the closed-form expressions are used
//! directly, so the two code paths never mix for a well-shaped element.

use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{CsrMatrix, StiffnessLayout};
use crate::mesh::{edge_matrix, ClusterMap, TetMesh, Vec3};

pub const DEFAULT_POISSON: f64 = 0.43;
pub const DEFAULT_INVERSION_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElasticityError {
    #[error("invalid material: Young's modulus {young} and Poisson ratio {poisson} (need E > 0, 0 <= nu < 0.5)")]
    InvalidMaterial { young: f64, poisson: f64 },
    #[error("expected {expected} cluster moduli, found {found}")]
    ClusterCount { expected: usize, found: usize },
    #[error("elements with non-positive rest volume: {elements:?}")]
    DegenerateRest { elements: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lame {
    pub mu: f64,
    pub lambda: f64,
}

/// `mu = E / (2 (1 + nu))`, `lambda = E nu / ((1 + nu)(1 - 2 nu))`.
pub fn lame_from_young_poisson(young: f64, poisson: f64) -> Result<Lame, ElasticityError> {
    if !(young > 0.0) || !young.is_finite() || !(0.0..0.5).contains(&poisson) {
        return Err(ElasticityError::InvalidMaterial { young, poisson });
    }
    Ok(Lame {
        mu: young / (2.0 * (1.0 + poisson)),
        lambda: young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)),
    })
}

/// Clustered Young's moduli with a shared Poisson ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    cluster_young: Vec<f64>,
    clusters: Arc<ClusterMap>,
    poisson: f64,
}

impl MaterialModel {
    pub fn new(
        cluster_young: Vec<f64>,
        clusters: Arc<ClusterMap>,
        poisson: f64,
    ) -> Result<Self, ElasticityError> {
        if cluster_young.len() != clusters.num_clusters() {
            return Err(ElasticityError::ClusterCount {
                expected: clusters.num_clusters(),
                found: cluster_young.len(),
            });
        }
        for &e in &cluster_young {
            lame_from_young_poisson(e, poisson)?;
        }
        Ok(MaterialModel {
            cluster_young,
            clusters,
            poisson,
        })
    }

    /// A single cluster covering every element.
    pub fn homogeneous(num_elements: usize, young: f64, poisson: f64) -> Result<Self, ElasticityError> {
        Self::new(vec![young], Arc::new(ClusterMap::single(num_elements)), poisson)
    }

    /// Same clusters, every cluster set to `young`.
    pub fn uniform_like(&self, young: f64) -> Result<Self, ElasticityError> {
        self.with_cluster_young(vec![young; self.cluster_young.len()])
    }

    pub fn with_cluster_young(&self, cluster_young: Vec<f64>) -> Result<Self, ElasticityError> {
        Self::new(cluster_young, Arc::clone(&self.clusters), self.poisson)
    }

    pub fn cluster_young(&self) -> &[f64] {
        &self.cluster_young
    }

    pub fn clusters(&self) -> &Arc<ClusterMap> {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_young.len()
    }

    pub fn poisson(&self) -> f64 {
        self.poisson
    }

    /// `E_e = sum_i w_e^i E_i`.
    pub fn element_young_modulus(&self, e: usize) -> f64 {
        self.clusters
            .row(e)
            .iter()
            .map(|&(c, w)| w * self.cluster_young[c])
            .sum()
    }

    pub fn element_lame(&self, e: usize) -> Lame {
        lame_from_young_poisson(self.element_young_modulus(e), self.poisson)
            .expect("cluster moduli validated at construction")
    }
}

/// Rest-shape precomputation for one element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementReference {
    pub inv_rest_shape: Matrix3<f64>,
    pub rest_volume: f64,
}

impl ElementReference {
    pub fn new(rest: &[Vec3], tet: &[usize; 4]) -> Option<Self> {
        let dm = edge_matrix(rest, tet);
        let vol = dm.determinant() / 6.0;
        if !(vol > 0.0) {
            return None;
        }
        Some(ElementReference {
            inv_rest_shape: dm.try_inverse()?,
            rest_volume: vol,
        })
    }
}

pub fn element_references(mesh: &TetMesh, rest: &[Vec3]) -> Result<Vec<ElementReference>, ElasticityError> {
    let refs: Vec<Option<ElementReference>> = mesh
        .tets
        .iter()
        .map(|t| ElementReference::new(rest, t))
        .collect();
    let bad: Vec<usize> = refs
        .iter()
        .enumerate()
        .filter_map(|(e, r)| r.is_none().then_some(e))
        .collect();
    if !bad.is_empty() {
        return Err(ElasticityError::DegenerateRest { elements: bad });
    }
    Ok(refs.into_iter().map(Option::unwrap).collect())
}

// ---------------------------------------------------------------------------
// Constitutive point evaluation

/// Signed SVD `F = U diag(sigma) V^T` with `U`, `V` proper rotations,
/// singular values sorted by decreasing magnitude and the last one carrying
/// the sign of `det F`.
#[derive(Debug, Clone, Copy)]
pub struct SignedSvd {
    pub u: Matrix3<f64>,
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl SignedSvd {
    pub fn new(f: &Matrix3<f64>) -> Self {
        let svd = f.svd(true, true);
        let mut u = svd.u.expect("requested U");
        let mut v = svd.v_t.expect("requested V^T").transpose();
        let mut s = svd.singular_values;
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
        let (u0, v0, s0) = (u, v, s);
        for (k, &i) in idx.iter().enumerate() {
            u.set_column(k, &u0.column(i));
            v.set_column(k, &v0.column(i));
            s[k] = s0[i];
        }
        if u.determinant() < 0.0 {
            u.column_mut(2).neg_mut();
            s[2] = -s[2];
        }
        if v.determinant() < 0.0 {
            v.column_mut(2).neg_mut();
            s[2] = -s[2];
        }
        SignedSvd { u, sigma: s, v }
    }
}

#[derive(Debug, Clone, Copy)]
enum Regime {
    Direct {
        f: Matrix3<f64>,
        f_inv_t: Matrix3<f64>,
        log_j: f64,
    },
    Clamped {
        svd: SignedSvd,
        clamped: Vector3<f64>,
        active: [bool; 3],
        grad: Vector3<f64>,
        hess: Matrix3<f64>,
        log_j: f64,
    },
}

/// Neo-Hookean material state at one deformation gradient. Built once per
/// element evaluation and reused for energy, stress and stress
/// differentials.
#[derive(Debug, Clone, Copy)]
pub struct StressPoint {
    lame: Lame,
    regime: Regime,
}

fn safe_quotient(num: f64, den: f64) -> f64 {
    const FLOOR: f64 = 1e-12;
    if den.abs() < FLOOR {
        num / FLOOR.copysign(den)
    } else {
        num / den
    }
}

impl StressPoint {
    pub fn new(f: &Matrix3<f64>, lame: Lame, threshold: f64) -> Self {
        let j = f.determinant();
        let direct = if j > 0.0 && j / f.norm_squared() > threshold {
            true
        } else if j > 0.0 {
            let s = f.singular_values();
            s.min() > threshold
        } else {
            false
        };
        if direct {
            if let Some(inv) = f.try_inverse() {
                return StressPoint {
                    lame,
                    regime: Regime::Direct {
                        f: *f,
                        f_inv_t: inv.transpose(),
                        log_j: j.ln(),
                    },
                };
            }
        }
        let svd = SignedSvd::new(f);
        let Lame { mu, lambda } = lame;
        let clamped = svd.sigma.map(|s| s.max(threshold));
        let active = svd.sigma.map(|s| if s > threshold { 1.0 } else { 0.0 });
        let log_j = clamped.iter().map(|s| s.ln()).sum::<f64>();
        let c = mu - lambda * log_j;
        let grad = Vector3::from_fn(|i, _| active[i] * (mu * clamped[i] - c / clamped[i]));
        let hess = Matrix3::from_fn(|i, k| {
            let diag = if i == k { mu + c / (clamped[i] * clamped[i]) } else { 0.0 };
            active[i] * active[k] * (diag + lambda / (clamped[i] * clamped[k]))
        });
        StressPoint {
            lame,
            regime: Regime::Clamped {
                svd,
                clamped,
                active: [active[0] > 0.0, active[1] > 0.0, active[2] > 0.0],
                grad,
                hess,
                log_j,
            },
        }
    }

    pub fn is_clamped(&self) -> bool {
        matches!(self.regime, Regime::Clamped { .. })
    }

    pub fn energy(&self) -> f64 {
        let Lame { mu, lambda } = self.lame;
        match &self.regime {
            Regime::Direct { f, log_j, .. } => {
                0.5 * mu * (f.norm_squared() - 3.0) - mu * log_j + 0.5 * lambda * log_j * log_j
            }
            Regime::Clamped { clamped, log_j, .. } => {
                0.5 * mu * (clamped.norm_squared() - 3.0) - mu * log_j + 0.5 * lambda * log_j * log_j
            }
        }
    }

    /// First Piola-Kirchhoff stress `dpsi/dF`.
    pub fn piola(&self) -> Matrix3<f64> {
        let Lame { mu, lambda } = self.lame;
        match &self.regime {
            Regime::Direct { f, f_inv_t, log_j } => mu * (f - f_inv_t) + lambda * log_j * f_inv_t,
            Regime::Clamped { svd, grad, .. } => svd.u * Matrix3::from_diagonal(grad) * svd.v.transpose(),
        }
    }

    /// Directional derivative of the Piola stress, `dP = dP/dF : dF`.
    pub fn piola_differential(&self, df: &Matrix3<f64>) -> Matrix3<f64> {
        let Lame { mu, lambda } = self.lame;
        match &self.regime {
            Regime::Direct { f_inv_t, log_j, .. } => {
                let tr = (f_inv_t.transpose() * df).trace();
                mu * df + (mu - lambda * log_j) * (f_inv_t * df.transpose() * f_inv_t) + lambda * tr * f_inv_t
            }
            Regime::Clamped {
                svd,
                clamped,
                active,
                grad,
                hess,
                log_j,
            } => {
                let s = &svd.sigma;
                let dft = svd.u.transpose() * df * svd.v;
                let mut dpt = Matrix3::zeros();
                for i in 0..3 {
                    dpt[(i, i)] = (0..3).map(|k| hess[(i, k)] * dft[(k, k)]).sum();
                }
                let c = mu - lambda * log_j;
                for i in 0..3 {
                    for k in (i + 1)..3 {
                        let q = if active[i] && active[k] {
                            mu + c / (clamped[i] * clamped[k])
                        } else {
                            safe_quotient(grad[i] - grad[k], s[i] - s[k])
                        };
                        let r = safe_quotient(grad[i] + grad[k], s[i] + s[k]);
                        let a = 0.5 * (q + r);
                        let b = 0.5 * (q - r);
                        dpt[(i, k)] = a * dft[(i, k)] + b * dft[(k, i)];
                        dpt[(k, i)] = b * dft[(i, k)] + a * dft[(k, i)];
                    }
                }
                svd.u * dpt * svd.v.transpose()
            }
        }
    }
}

/// Neo-Hookean energy density at `F` with singular values thresholded at
/// `threshold`.
pub fn energy_density(f: &Matrix3<f64>, mu: f64, lambda: f64, threshold: f64) -> f64 {
    StressPoint::new(f, Lame { mu, lambda }, threshold).energy()
}

// ---------------------------------------------------------------------------
// Element kernels

/// Edge-matrix perturbation produced by moving node `a` of an element along
/// axis `k`.
#[inline]
pub(crate) fn edge_perturbation(a: usize, k: usize) -> Matrix3<f64> {
    let mut d = Matrix3::zeros();
    if a == 0 {
        for c in 0..3 {
            d[(k, c)] = -1.0;
        }
    } else {
        d[(k, a - 1)] = 1.0;
    }
    d
}

/// Spreads an edge-space force matrix `H` (columns = nodes 1..3) to the four
/// element nodes.
#[inline]
pub(crate) fn nodal_from_edges(h: &Matrix3<f64>) -> [Vec3; 4] {
    let c1 = h.column(0).into_owned();
    let c2 = h.column(1).into_owned();
    let c3 = h.column(2).into_owned();
    [-(c1 + c2 + c3), c1, c2, c3]
}

pub type ElementBlock = [f64; 144];

/// Elastic body: a mesh with fixed rest geometry and material, evaluated at
/// arbitrary deformed positions.
#[derive(Debug, Clone)]
pub struct ElasticModel<'m> {
    mesh: &'m TetMesh,
    refs: Vec<ElementReference>,
    lame: Vec<Lame>,
    young: Vec<f64>,
    threshold: f64,
}

impl<'m> ElasticModel<'m> {
    pub fn new(
        mesh: &'m TetMesh,
        rest: &[Vec3],
        material: &MaterialModel,
        threshold: f64,
    ) -> Result<Self, ElasticityError> {
        let refs = element_references(mesh, rest)?;
        let young: Vec<f64> = (0..mesh.num_elements())
            .map(|e| material.element_young_modulus(e))
            .collect();
        let lame = young
            .iter()
            .map(|&e| lame_from_young_poisson(e, material.poisson()))
            .collect::<Result<_, _>>()?;
        Ok(ElasticModel {
            mesh,
            refs,
            lame,
            young,
            threshold,
        })
    }

    pub fn mesh(&self) -> &TetMesh {
        self.mesh
    }

    pub fn references(&self) -> &[ElementReference] {
        &self.refs
    }

    pub fn element_young(&self, e: usize) -> f64 {
        self.young[e]
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    #[inline]
    pub fn deformation_gradient(&self, x: &[Vec3], e: usize) -> Matrix3<f64> {
        edge_matrix(x, &self.mesh.tets[e]) * self.refs[e].inv_rest_shape
    }

    #[inline]
    pub fn stress_point(&self, x: &[Vec3], e: usize) -> StressPoint {
        StressPoint::new(&self.deformation_gradient(x, e), self.lame[e], self.threshold)
    }

    pub fn element_energy(&self, x: &[Vec3], e: usize) -> f64 {
        self.refs[e].rest_volume * self.stress_point(x, e).energy()
    }

    /// Gradient of the element energy with respect to its four nodes.
    pub fn element_gradient(&self, x: &[Vec3], e: usize) -> [Vec3; 4] {
        let r = &self.refs[e];
        let p = self.stress_point(x, e).piola();
        nodal_from_edges(&(r.rest_volume * p * r.inv_rest_shape.transpose()))
    }

    /// Element Hessian, row-major 12x12 over (node, axis).
    pub fn element_hessian(&self, x: &[Vec3], e: usize) -> ElementBlock {
        let r = &self.refs[e];
        let sp = self.stress_point(x, e);
        let bt = r.inv_rest_shape.transpose();
        let mut k = [0.0; 144];
        for col in 0..12 {
            let df = edge_perturbation(col / 3, col % 3) * r.inv_rest_shape;
            let dh = r.rest_volume * sp.piola_differential(&df) * bt;
            let nodal = nodal_from_edges(&dh);
            for row in 0..12 {
                k[12 * row + col] = nodal[row / 3][row % 3];
            }
        }
        for i in 0..12 {
            for j in (i + 1)..12 {
                let avg = 0.5 * (k[12 * i + j] + k[12 * j + i]);
                k[12 * i + j] = avg;
                k[12 * j + i] = avg;
            }
        }
        k
    }

    pub fn energy(&self, x: &[Vec3]) -> f64 {
        let per: Vec<f64> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| self.element_energy(x, e))
            .collect();
        per.iter().sum()
    }

    pub fn gradient(&self, x: &[Vec3]) -> Vec<Vec3> {
        let per: Vec<[Vec3; 4]> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| self.element_gradient(x, e))
            .collect();
        let mut g = vec![Vec3::zeros(); self.mesh.num_nodes()];
        for (tet, ge) in self.mesh.tets.iter().zip(&per) {
            for a in 0..4 {
                g[tet[a]] += ge[a];
            }
        }
        g
    }

    /// Assembled stiffness. With `project`, each element block is replaced
    /// by its nearest positive semi-definite matrix before assembly.
    pub fn hessian(&self, x: &[Vec3], layout: &StiffnessLayout, project: bool) -> CsrMatrix {
        let blocks: Vec<ElementBlock> = (0..self.mesh.num_elements())
            .into_par_iter()
            .map(|e| {
                let k = self.element_hessian(x, e);
                if project {
                    project_psd(&k)
                } else {
                    k
                }
            })
            .collect();
        layout.assemble(blocks.iter())
    }

    /// Derivative of the rest volume with respect to the element's four rest
    /// positions.
    pub fn rest_volume_gradient(&self, e: usize) -> [Vec3; 4] {
        let r = &self.refs[e];
        // dV = V tr(B dDm) with B = Dm^-1, so dV/dDm = V B^T.
        nodal_from_edges(&(r.rest_volume * r.inv_rest_shape.transpose()))
    }

    /// Gradient with respect to the element's rest positions of
    /// `sum_a lambda_a . dW_e/dx_a`, holding `x` and `lambda` fixed.
    pub fn element_rest_adjoint(&self, x: &[Vec3], e: usize, lambda: &[Vec3; 4]) -> [Vec3; 4] {
        let r = &self.refs[e];
        let b = r.inv_rest_shape;
        let v = r.rest_volume;
        let ds = edge_matrix(x, &self.mesh.tets[e]);
        let sp = StressPoint::new(&(ds * b), self.lame[e], self.threshold);
        let p = sp.piola();
        let lam = Matrix3::from_columns(&[lambda[1] - lambda[0], lambda[2] - lambda[0], lambda[3] - lambda[0]]);
        let base = lam.dot(&(p * b.transpose()));
        let mut out = [Vec3::zeros(); 4];
        for (a, node) in out.iter_mut().enumerate() {
            for k in 0..3 {
                let ddm = edge_perturbation(a, k);
                let db = -b * ddm * b;
                let dv = v * (b * ddm).trace();
                let dp = sp.piola_differential(&(ds * db));
                node[k] = dv * base + v * lam.dot(&(dp * b.transpose())) + v * lam.dot(&(p * db.transpose()));
            }
        }
        out
    }

    /// True when any element needs singular-value clamping at `x`.
    pub fn any_clamped(&self, x: &[Vec3]) -> bool {
        (0..self.mesh.num_elements()).any(|e| self.stress_point(x, e).is_clamped())
    }
}

/// Eigenvalue clamping of a symmetric 12x12 block at zero.
pub fn project_psd(k: &ElementBlock) -> ElementBlock {
    let m = SMatrix::<f64, 12, 12>::from_row_slice(k);
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return *k;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let p = eig.eigenvectors * SMatrix::<f64, 12, 12>::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let mut out = [0.0; 144];
    for i in 0..12 {
        for j in 0..12 {
            out[12 * i + j] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    out
}

/// `W(X, x, P)`: total elastic energy.
pub fn total_energy(
    mesh: &TetMesh,
    rest: &[Vec3],
    x: &[Vec3],
    material: &MaterialModel,
    threshold: f64,
) -> Result<f64, ElasticityError> {
    Ok(ElasticModel::new(mesh, rest, material, threshold)?.energy(x))
}

/// `dW/dx`, one 3-vector per node.
pub fn total_gradient(
    mesh: &TetMesh,
    rest: &[Vec3],
    x: &[Vec3],
    material: &MaterialModel,
    threshold: f64,
) -> Result<Vec<Vec3>, ElasticityError> {
    Ok(ElasticModel::new(mesh, rest, material, threshold)?.gradient(x))
}

/// `d^2 W / dx^2` assembled into the mesh's block sparsity pattern.
pub fn total_hessian(
    mesh: &TetMesh,
    rest: &[Vec3],
    x: &[Vec3],
    material: &MaterialModel,
    threshold: f64,
) -> Result<CsrMatrix, ElasticityError> {
    let layout = StiffnessLayout::new(mesh);
    Ok(ElasticModel::new(mesh, rest, material, threshold)?.hessian(x, &layout, false))
}
