//! Tetrahedral meshes, Tetgen ASCII I/O, fixed-vertex sets and material
//! cluster weights.
//!
//! Node and element indices are 0-based everywhere in memory. Tetgen files
//! number their records from 1 (or occasionally from 0); the base is taken
//! from the first node record and conversion happens only while reading and
//! writing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("element {element} references node {index}, but the mesh has {num_nodes} nodes")]
    IndexOutOfRange {
        element: usize,
        index: i64,
        num_nodes: usize,
    },
    #[error("elements with non-positive rest volume: {elements:?}")]
    NonPositiveVolume { elements: Vec<usize> },
    #[error("fixed vertex {index} out of range (mesh has {num_nodes} nodes)")]
    FixedOutOfRange { index: usize, num_nodes: usize },
    #[error("expected {expected} cluster labels (one per element), found {found}")]
    LabelCount { expected: usize, found: usize },
    #[error("element {element} has label {label}, but only {num_clusters} clusters exist")]
    LabelOutOfRange {
        element: usize,
        label: usize,
        num_clusters: usize,
    },
    #[error("cluster weights of element {element} are invalid: {message}")]
    InvalidWeights { element: usize, message: String },
}

/// Tetrahedral mesh with its rest-state node positions and the set of
/// vertices pinned by hard boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct TetMesh {
    pub nodes: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    fixed: Vec<bool>,
    fixed_list: Vec<usize>,
}

impl TetMesh {
    /// Builds a mesh, checking index ranges and rest-state orientation.
    pub fn new(nodes: Vec<Vec3>, tets: Vec<[usize; 4]>) -> Result<Self, MeshError> {
        let n = nodes.len();
        for (e, tet) in tets.iter().enumerate() {
            if let Some(&bad) = tet.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange {
                    element: e,
                    index: bad as i64,
                    num_nodes: n,
                });
            }
        }
        let mesh = TetMesh {
            fixed: vec![false; n],
            fixed_list: Vec::new(),
            nodes,
            tets,
        };
        let bad = mesh.non_positive_elements(&mesh.nodes);
        if !bad.is_empty() {
            return Err(MeshError::NonPositiveVolume { elements: bad });
        }
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    /// Replaces the fixed-vertex set. Duplicates are collapsed.
    pub fn set_fixed_vertices<I: IntoIterator<Item = usize>>(
        &mut self,
        ids: I,
    ) -> Result<(), MeshError> {
        let n = self.nodes.len();
        let mut fixed = vec![false; n];
        for i in ids {
            if i >= n {
                return Err(MeshError::FixedOutOfRange {
                    index: i,
                    num_nodes: n,
                });
            }
            fixed[i] = true;
        }
        self.fixed_list = (0..n).filter(|&i| fixed[i]).collect();
        self.fixed = fixed;
        Ok(())
    }

    pub fn with_fixed_vertices<I: IntoIterator<Item = usize>>(
        mut self,
        ids: I,
    ) -> Result<Self, MeshError> {
        self.set_fixed_vertices(ids)?;
        Ok(self)
    }

    /// Sorted list of fixed vertex ids.
    pub fn fixed_vertices(&self) -> &[usize] {
        &self.fixed_list
    }

    #[inline]
    pub fn is_fixed(&self, node: usize) -> bool {
        self.fixed[node]
    }

    /// Same connectivity and boundary set, new node positions.
    pub fn with_positions(&self, nodes: Vec<Vec3>) -> Result<Self, MeshError> {
        assert_eq!(nodes.len(), self.nodes.len(), "node count mismatch");
        let bad = self.non_positive_elements(&nodes);
        if !bad.is_empty() {
            return Err(MeshError::NonPositiveVolume { elements: bad });
        }
        Ok(TetMesh {
            nodes,
            tets: self.tets.clone(),
            fixed: self.fixed.clone(),
            fixed_list: self.fixed_list.clone(),
        })
    }

    /// Edge matrix `[p1 - p0, p2 - p0, p3 - p0]` of element `e` for an
    /// arbitrary position array sharing this mesh's connectivity.
    #[inline]
    pub fn edge_matrix(&self, positions: &[Vec3], e: usize) -> Matrix3<f64> {
        edge_matrix(positions, &self.tets[e])
    }

    /// Elements whose signed volume in `positions` is not strictly positive.
    pub fn non_positive_elements(&self, positions: &[Vec3]) -> Vec<usize> {
        (0..self.tets.len())
            .filter(|&e| !(signed_volume(positions, &self.tets[e]) > 0.0))
            .collect()
    }

    pub fn rest_volumes(&self) -> Vec<f64> {
        (0..self.tets.len())
            .map(|e| element_volume(self, e))
            .collect()
    }

    /// For every node, the elements incident to it, in increasing order.
    pub fn node_elements(&self) -> Vec<Vec<usize>> {
        let mut incident = vec![Vec::new(); self.nodes.len()];
        for (e, tet) in self.tets.iter().enumerate() {
            for &v in tet {
                incident[v].push(e);
            }
        }
        incident
    }

    /// Node adjacency (nodes sharing an element), excluding the node itself.
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.nodes.len()];
        for tet in &self.tets {
            for &a in tet {
                for &b in tet {
                    if a != b {
                        sets[a].insert(b);
                    }
                }
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Vertices lying on a boundary triangle (a face used by exactly one
    /// element), sorted.
    pub fn surface_vertices(&self) -> Vec<usize> {
        let mut faces: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for tet in &self.tets {
            for skip in 0..4 {
                let mut f = [0usize; 3];
                let mut k = 0;
                for (i, &v) in tet.iter().enumerate() {
                    if i != skip {
                        f[k] = v;
                        k += 1;
                    }
                }
                f.sort_unstable();
                *faces.entry(f).or_insert(0) += 1;
            }
        }
        let mut on_surface = BTreeSet::new();
        for (f, count) in faces {
            if count == 1 {
                on_surface.extend(f);
            }
        }
        on_surface.into_iter().collect()
    }

    /// Largest distance between two corners of the axis-aligned bounding box.
    pub fn diameter(&self) -> f64 {
        bounding_box_diagonal(&self.nodes)
    }
}

pub fn bounding_box_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

#[inline]
pub fn edge_matrix(positions: &[Vec3], tet: &[usize; 4]) -> Matrix3<f64> {
    let p0 = positions[tet[0]];
    Matrix3::from_columns(&[
        positions[tet[1]] - p0,
        positions[tet[2]] - p0,
        positions[tet[3]] - p0,
    ])
}

/// Signed volume `det([p1-p0, p2-p0, p3-p0]) / 6`.
#[inline]
pub fn signed_volume(positions: &[Vec3], tet: &[usize; 4]) -> f64 {
    edge_matrix(positions, tet).determinant() / 6.0
}

/// Signed volume of element `e` in the mesh rest state.
pub fn element_volume(mesh: &TetMesh, e: usize) -> f64 {
    signed_volume(&mesh.nodes, &mesh.tets[e])
}

// ---------------------------------------------------------------------------
// Tetgen I/O

struct Records<'a> {
    path: &'a Path,
    lines: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Records<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .filter_map(|(i, line)| {
                let content = line.split('#').next().unwrap_or("");
                let fields: Vec<&str> = content.split_whitespace().collect();
                (!fields.is_empty()).then_some((i + 1, fields))
            })
            .collect();
        Records { path, lines }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> MeshError {
        MeshError::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T, MeshError> {
        field
            .parse::<T>()
            .map_err(|_| self.err(line, format!("invalid {what} '{field}'")))
    }
}

fn read_text(path: &Path) -> Result<String, MeshError> {
    fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a Tetgen `.node` file. Returns positions and the index base used
/// by the file (1 for standard Tetgen output).
pub fn read_node_file(path: &Path) -> Result<(Vec<Vec3>, i64), MeshError> {
    let text = read_text(path)?;
    let rec = Records::new(path, &text);
    let Some((hline, header)) = rec.lines.first() else {
        return Err(rec.err(1, "missing header"));
    };
    if header.len() < 2 {
        return Err(rec.err(*hline, "header must be '<count> 3 <attributes> <markers>'"));
    }
    let count: usize = rec.parse(*hline, header[0], "node count")?;
    let dim: usize = rec.parse(*hline, header[1], "dimension")?;
    if dim != 3 {
        return Err(rec.err(*hline, format!("dimension must be 3, found {dim}")));
    }
    let body = &rec.lines[1..];
    if body.len() < count {
        let line = body.last().map_or(*hline, |l| l.0);
        return Err(rec.err(line, format!("expected {count} node rows, found {}", body.len())));
    }
    let mut base = 1;
    let mut nodes = Vec::with_capacity(count);
    for (k, (line, fields)) in body[..count].iter().enumerate() {
        if fields.len() < 4 {
            return Err(rec.err(*line, "node row needs an id and three coordinates"));
        }
        let id: i64 = rec.parse(*line, fields[0], "node id")?;
        if k == 0 {
            base = id;
            if base != 0 && base != 1 {
                return Err(rec.err(*line, format!("first node id must be 0 or 1, found {id}")));
            }
        }
        if id != base + k as i64 {
            return Err(rec.err(*line, format!("expected node id {}, found {id}", base + k as i64)));
        }
        let mut p = Vec3::zeros();
        for c in 0..3 {
            p[c] = rec.parse(*line, fields[1 + c], "coordinate")?;
        }
        nodes.push(p);
    }
    Ok((nodes, base))
}

/// Parses a Tetgen `.ele` file with 4-node elements, converting node ids
/// from `base` to 0-based.
pub fn read_ele_file(path: &Path, base: i64, num_nodes: usize) -> Result<Vec<[usize; 4]>, MeshError> {
    let text = read_text(path)?;
    let rec = Records::new(path, &text);
    let Some((hline, header)) = rec.lines.first() else {
        return Err(rec.err(1, "missing header"));
    };
    if header.len() < 2 {
        return Err(rec.err(*hline, "header must be '<count> 4 <attributes>'"));
    }
    let count: usize = rec.parse(*hline, header[0], "element count")?;
    let per: usize = rec.parse(*hline, header[1], "nodes per element")?;
    if per != 4 {
        return Err(rec.err(*hline, format!("only 4-node tetrahedra are supported, found {per}")));
    }
    let body = &rec.lines[1..];
    if body.len() < count {
        let line = body.last().map_or(*hline, |l| l.0);
        return Err(rec.err(line, format!("expected {count} element rows, found {}", body.len())));
    }
    let mut tets = Vec::with_capacity(count);
    for (e, (line, fields)) in body[..count].iter().enumerate() {
        if fields.len() < 5 {
            return Err(rec.err(*line, "element row needs an id and four node ids"));
        }
        let mut tet = [0usize; 4];
        for c in 0..4 {
            let raw: i64 = rec.parse(*line, fields[1 + c], "node id")?;
            let idx = raw - base;
            if idx < 0 || idx as usize >= num_nodes {
                return Err(MeshError::IndexOutOfRange {
                    element: e,
                    index: idx,
                    num_nodes,
                });
            }
            tet[c] = idx as usize;
        }
        tets.push(tet);
    }
    Ok(tets)
}

/// Loads a mesh from Tetgen `.node` / `.ele` files. The fixed-vertex set
/// starts empty.
pub fn load_mesh(node_path: &Path, ele_path: &Path) -> Result<TetMesh, MeshError> {
    let (nodes, base) = read_node_file(node_path)?;
    let tets = read_ele_file(ele_path, base, nodes.len())?;
    TetMesh::new(nodes, tets)
}

pub fn write_node<W: Write>(mut w: W, nodes: &[Vec3]) -> io::Result<()> {
    writeln!(w, "{} 3 0 0", nodes.len())?;
    for (i, p) in nodes.iter().enumerate() {
        writeln!(w, "{} {:e} {:e} {:e}", i + 1, p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn write_ele<W: Write>(mut w: W, tets: &[[usize; 4]]) -> io::Result<()> {
    writeln!(w, "{} 4 0", tets.len())?;
    for (e, t) in tets.iter().enumerate() {
        writeln!(w, "{} {} {} {} {}", e + 1, t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1)?;
    }
    Ok(())
}

pub fn save_mesh(mesh: &TetMesh, node_path: &Path, ele_path: &Path) -> io::Result<()> {
    let mut buf = Vec::new();
    write_node(&mut buf, &mesh.nodes)?;
    fs::write(node_path, &buf)?;
    buf.clear();
    write_ele(&mut buf, &mesh.tets)?;
    fs::write(ele_path, &buf)
}

fn parse_index_lines(path: &Path) -> Result<Vec<(usize, usize)>, MeshError> {
    let text = read_text(path)?;
    let rec = Records::new(path, &text);
    let mut out = Vec::with_capacity(rec.lines.len());
    for (line, fields) in &rec.lines {
        if fields.len() != 1 {
            return Err(rec.err(*line, "expected exactly one integer per line"));
        }
        out.push((*line, rec.parse(*line, fields[0], "index")?));
    }
    Ok(out)
}

/// Reads a fixed-vertex file: one 0-based node index per line, `#` comments.
pub fn read_fixed_vertices(path: &Path) -> Result<Vec<usize>, MeshError> {
    Ok(parse_index_lines(path)?.into_iter().map(|(_, i)| i).collect())
}

/// Reads a cluster label file: one integer per element, in element order.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, MeshError> {
    Ok(parse_index_lines(path)?.into_iter().map(|(_, i)| i).collect())
}

pub fn write_indices<W: Write>(mut w: W, ids: &[usize]) -> io::Result<()> {
    for i in ids {
        writeln!(w, "{i}")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Material clusters

/// Per-element cluster weights. Rows are sparse `(cluster, weight)` lists
/// sorted by cluster index; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    num_clusters: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl ClusterMap {
    pub fn from_rows(num_clusters: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, MeshError> {
        for (e, row) in rows.iter().enumerate() {
            let invalid = |message: String| MeshError::InvalidWeights { element: e, message };
            if row.is_empty() {
                return Err(invalid("empty row".into()));
            }
            let mut sum = 0.0;
            for &(c, w) in row {
                if c >= num_clusters {
                    return Err(invalid(format!("cluster {c} out of range")));
                }
                if !(w >= 0.0) {
                    return Err(invalid(format!("negative weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(invalid(format!("weights sum to {sum}")));
            }
        }
        Ok(ClusterMap { num_clusters, rows })
    }

    /// Every element assigned exclusively to cluster 0.
    pub fn single(num_elements: usize) -> Self {
        ClusterMap {
            num_clusters: 1,
            rows: vec![vec![(0, 1.0)]; num_elements],
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_elements(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, e: usize) -> &[(usize, f64)] {
        &self.rows[e]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
}

/// Builds cluster weights from per-element labels.
///
/// An element whose vertex-adjacent neighbourhood (itself included) carries a
/// single label gets weight 1 on it. Otherwise the element is on a cluster
/// boundary and is weighted uniformly over the distinct labels found in that
/// neighbourhood.
pub fn build_cluster_weights(
    mesh: &TetMesh,
    labels: &[usize],
    num_clusters: usize,
) -> Result<ClusterMap, MeshError> {
    if labels.len() != mesh.num_elements() {
        return Err(MeshError::LabelCount {
            expected: mesh.num_elements(),
            found: labels.len(),
        });
    }
    if let Some((e, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_clusters) {
        return Err(MeshError::LabelOutOfRange {
            element: e,
            label,
            num_clusters,
        });
    }
    let incident = mesh.node_elements();
    let rows = mesh
        .tets
        .iter()
        .map(|tet| {
            let mut seen = BTreeSet::new();
            for &v in tet {
                for &nb in &incident[v] {
                    seen.insert(labels[nb]);
                }
            }
            let w = 1.0 / seen.len() as f64;
            seen.into_iter().map(|c| (c, w)).collect()
        })
        .collect();
    Ok(ClusterMap { num_clusters, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tet_nodes() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ]
    }

    fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    const UNIT_NODE: &str = "4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n";

    #[test]
    fn loads_single_tet() {
        let dir = tempfile::tempdir().unwrap();
        let node = write_tmp(dir.path(), "a.node", UNIT_NODE);
        let ele = write_tmp(dir.path(), "a.ele", "1 4 0\n1 1 2 3 4\n");
        let mesh = load_mesh(&node, &ele).unwrap();
        assert_eq!(mesh.num_nodes(), 4);
        assert_eq!(mesh.num_elements(), 1);
        assert_eq!(mesh.tets[0], [0, 1, 2, 3]);
        assert!(mesh.fixed_vertices().is_empty());
    }

    #[test]
    fn swapped_orientation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let node = write_tmp(dir.path(), "a.node", UNIT_NODE);
        let ele = write_tmp(dir.path(), "a.ele", "1 4 0\n1 1 2 4 3\n");
        match load_mesh(&node, &ele) {
            Err(MeshError::NonPositiveVolume { elements }) => assert_eq!(elements, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let node = write_tmp(dir.path(), "a.node", "# comment\n4 3 0 0\n1 0 0 0\n2 1 x 0\n3 0 1 0\n4 0 0 1\n");
        match read_node_file(&node) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let node = write_tmp(dir.path(), "b.node", UNIT_NODE);
        let ele = write_tmp(dir.path(), "b.ele", "1 4 0\n1 1 2 3 9\n");
        assert!(matches!(
            load_mesh(&node, &ele),
            Err(MeshError::IndexOutOfRange { element: 0, index: 8, num_nodes: 4 })
        ));
        let ele = write_tmp(dir.path(), "c.ele", "two 4 0\n");
        assert!(matches!(load_mesh(&node, &ele), Err(MeshError::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_mesh(Path::new("/nonexistent/x.node"), Path::new("/nonexistent/x.ele")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.node"));
    }

    #[test]
    fn zero_based_tetgen_files_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let node = write_tmp(dir.path(), "z.node", "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n");
        let ele = write_tmp(dir.path(), "z.ele", "1 4 0\n0 0 1 2 3\n");
        let mesh = load_mesh(&node, &ele).unwrap();
        assert_eq!(mesh.tets[0], [0, 1, 2, 3]);
    }

    #[test]
    fn volumes() {
        let mesh = TetMesh::new(unit_tet_nodes(), vec![[0, 1, 2, 3]]).unwrap();
        assert!((element_volume(&mesh, 0) - 1.0 / 6.0).abs() < 1e-15);
        let scaled: Vec<Vec3> = unit_tet_nodes().iter().map(|p| p * 2.0).collect();
        assert!((signed_volume(&scaled, &[0, 1, 2, 3]) - 8.0 / 6.0).abs() < 1e-14);
        let flat = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ];
        assert_eq!(signed_volume(&flat, &[0, 1, 2, 3]), 0.0);
    }

    #[test]
    fn fixed_vertices_file_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "f.txt", "# pinned\n0\n2 # trailing\n\n2\n");
        let ids = read_fixed_vertices(&p).unwrap();
        assert_eq!(ids, vec![0, 2, 2]);
        let mut mesh = TetMesh::new(unit_tet_nodes(), vec![[0, 1, 2, 3]]).unwrap();
        mesh.set_fixed_vertices(ids).unwrap();
        assert_eq!(mesh.fixed_vertices(), &[0, 2]);
        assert!(mesh.is_fixed(2) && !mesh.is_fixed(1));
        assert!(matches!(
            mesh.set_fixed_vertices([7]),
            Err(MeshError::FixedOutOfRange { index: 7, .. })
        ));
    }

    fn two_tets() -> TetMesh {
        let mut nodes = unit_tet_nodes();
        nodes.push(Vec3::new(1.0, 1.0, 1.0));
        // Second tet shares face (1, 2, 3) and lies on the other side of it.
        TetMesh::new(nodes, vec![[0, 1, 2, 3], [1, 2, 3, 4]]).unwrap()
    }

    #[test]
    fn cluster_weights_single_label() {
        let mesh = two_tets();
        let map = build_cluster_weights(&mesh, &[0, 0], 1).unwrap();
        for e in 0..2 {
            assert_eq!(map.row(e), &[(0, 1.0)]);
        }
    }

    #[test]
    fn cluster_weights_two_tets_blend() {
        let mesh = two_tets();
        let map = build_cluster_weights(&mesh, &[0, 1], 2).unwrap();
        for e in 0..2 {
            assert_eq!(map.row(e), &[(0, 0.5), (1, 0.5)]);
        }
    }

    #[test]
    fn cluster_weights_three_labels() {
        // Fan of three tets around the shared edge (0, 1).
        let nodes = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-1.0, -1.0, 0.0),
        ];
        let mut tets = vec![[0, 2, 3, 1], [0, 3, 4, 1], [0, 4, 2, 1]];
        for t in tets.iter_mut() {
            if signed_volume(&nodes, t) < 0.0 {
                t.swap(1, 2);
            }
        }
        let mesh = TetMesh::new(nodes, tets).unwrap();
        let map = build_cluster_weights(&mesh, &[0, 1, 2], 3).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(map.row(0), &[(0, third), (1, third), (2, third)]);
    }

    #[test]
    fn cluster_label_errors() {
        let mesh = two_tets();
        assert!(matches!(
            build_cluster_weights(&mesh, &[0, 3], 2),
            Err(MeshError::LabelOutOfRange { element: 1, label: 3, .. })
        ));
        assert!(matches!(
            build_cluster_weights(&mesh, &[0], 2),
            Err(MeshError::LabelCount { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn surface_of_two_tets_is_every_vertex() {
        assert_eq!(two_tets().surface_vertices(), vec![0, 1, 2, 3, 4]);
    }
}
