//! Sparse symmetric storage and a skyline (envelope) Cholesky solver.
//!
//! Stiffness matrices are assembled into a fixed CSR pattern derived from the
//! mesh connectivity, so that assembly order and therefore rounding is the
//! same on every run. Factorization uses a reverse Cuthill-McKee ordering of
//! the node graph, which keeps the envelope narrow for the elongated meshes
//! used here.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mesh::TetMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

/// Square sparse matrix in compressed-row form. Both triangles are stored.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// Replaces the rows and columns of masked degrees of freedom by the
    /// identity, which eliminates them from the system without changing the
    /// free-free block.
    pub fn eliminate(&mut self, masked: &[bool]) {
        for i in 0..self.n {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            for k in r {
                let j = self.col_idx[k];
                if masked[i] || masked[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|` relative to the largest
    /// entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                scale = scale.max(v.abs());
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Block sparsity of a tetrahedral mesh with three degrees of freedom per
/// node, plus the scatter map from 12x12 element blocks into CSR storage.
#[derive(Debug, Clone)]
pub struct StiffnessLayout {
    template: CsrMatrix,
    scatter: Vec<[usize; 144]>,
    ordering: Vec<usize>,
}

impl StiffnessLayout {
    pub fn new(mesh: &TetMesh) -> Self {
        let n = mesh.num_nodes();
        let neighbors = mesh.node_neighbors();
        let mut row_ptr = Vec::with_capacity(3 * n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for a in 0..n {
            let mut nodes: Vec<usize> = neighbors[a].clone();
            nodes.push(a);
            nodes.sort_unstable();
            for _ in 0..3 {
                for &b in &nodes {
                    col_idx.extend([3 * b, 3 * b + 1, 3 * b + 2]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        let template = CsrMatrix {
            n: 3 * n,
            values: vec![0.0; col_idx.len()],
            row_ptr,
            col_idx,
        };
        let scatter = mesh
            .tets
            .iter()
            .map(|tet| {
                let mut map = [0usize; 144];
                for r in 0..12 {
                    let gi = 3 * tet[r / 3] + r % 3;
                    let (cols, _) = template.row(gi);
                    let base = template.row_ptr[gi];
                    for c in 0..12 {
                        let gj = 3 * tet[c / 3] + c % 3;
                        let k = cols.binary_search(&gj).expect("pattern covers element");
                        map[12 * r + c] = base + k;
                    }
                }
                map
            })
            .collect();
        StiffnessLayout {
            template,
            scatter,
            ordering: dof_ordering(&neighbors),
        }
    }

    pub fn zero_matrix(&self) -> CsrMatrix {
        self.template.clone()
    }

    /// Adds element blocks (row-major 12x12, element order) into a fresh
    /// matrix. Accumulation runs in element order so the result is
    /// independent of how the blocks were computed.
    pub fn assemble<'a, I>(&self, blocks: I) -> CsrMatrix
    where
        I: IntoIterator<Item = &'a [f64; 144]>,
    {
        let mut m = self.zero_matrix();
        for (e, block) in blocks.into_iter().enumerate() {
            let map = &self.scatter[e];
            for k in 0..144 {
                m.values[map[k]] += block[k];
            }
        }
        m
    }

    /// Fill-reducing permutation of degrees of freedom (new -> old).
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }
}

/// Reverse Cuthill-McKee on the node graph, expanded to 3 dofs per node.
fn dof_ordering(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let n = neighbors.len();
    let degree = |v: usize| neighbors[v].len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v))
            .unwrap();
        let root = pseudo_peripheral(neighbors, start, &visited);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbors[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree(u), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order.iter().flat_map(|&v| [3 * v, 3 * v + 1, 3 * v + 2]).collect()
}

fn pseudo_peripheral(neighbors: &[Vec<usize>], start: usize, blocked: &[bool]) -> usize {
    let levels = |root: usize| -> (usize, usize) {
        let mut dist = vec![usize::MAX; neighbors.len()];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut last = root;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &u in &neighbors[v] {
                if !blocked[u] && dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        // Among the deepest level, prefer the lowest degree.
        let depth = dist[last];
        let far = (0..neighbors.len())
            .filter(|&v| dist[v] == depth)
            .min_by_key(|&v| (neighbors[v].len(), v))
            .unwrap_or(last);
        (far, depth)
    };
    let mut root = start;
    let (mut far, mut depth) = levels(root);
    for _ in 0..8 {
        let (f2, d2) = levels(far);
        if d2 <= depth {
            break;
        }
        root = far;
        far = f2;
        depth = d2;
    }
    root
}

/// Envelope-stored lower Cholesky factor `P A P^T = L L^T`.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors `A + shift * I` using the permutation `perm` (new -> old).
    pub fn factor(a: &CsrMatrix, perm: &[usize], shift: f64) -> Result<Self, LinalgError> {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            let (cols, _) = a.row(old);
            for &c in cols {
                let pc = inv[c];
                if pc < first[new] {
                    first[new] = pc;
                }
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let pc = inv[c];
                if pc <= new {
                    data[start[new] + pc - first[new]] += v;
                }
            }
            data[start[new] + new - first[new]] += shift;
        }
        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            for j in fi..=i {
                let fj = first[j];
                let sj = start[j];
                let k0 = fi.max(fj);
                let mut s = data[si + j - fi];
                let li = &data[si + k0 - fi..si + j - fi];
                let lj = &data[sj + k0 - fj..sj + j - fj];
                for (x, y) in li.iter().zip(lj) {
                    s -= x * y;
                }
                if j < i {
                    data[si + j - fi] = s / data[sj + j - fj];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { pivot: i, value: s });
                    }
                    data[si + i - fi] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky {
            perm: perm.to_vec(),
            first,
            start,
            data,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[si + k - fi] * y[k];
            }
            y[i] = s / self.data[si + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let yi = y[i] / self.data[si + i - fi];
            y[i] = yi;
            for k in fi..i {
                y[k] -= self.data[si + k - fi] * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }
}

/// Factors `a`, escalating a Tikhonov shift through powers of ten when the
/// plain factorization fails. Returns the factor and the shift used (0 when
/// none was needed).
pub fn factor_with_shift(a: &CsrMatrix, perm: &[usize]) -> Result<(SkylineCholesky, f64), LinalgError> {
    match SkylineCholesky::factor(a, perm, 0.0) {
        Ok(f) => Ok((f, 0.0)),
        Err(first_err) => {
            let scale = (0..a.dim()).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(first_err);
            }
            let mut exp = scale.log10().floor() as i32 - 12;
            let top = scale.log10().ceil() as i32 + 2;
            while exp <= top {
                let shift = 10f64.powi(exp);
                if let Ok(f) = SkylineCholesky::factor(a, perm, shift) {
                    return Ok((f, shift));
                }
                exp += 1;
            }
            Err(first_err)
        }
    }
}
