//! Output files are written to a temporary file in the target directory and
//! renamed into place, so an interrupted run leaves either the old file or
//! the complete new one.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use gravinv::mesh::{read_node_file, write_node, Vec3};
use gravinv::pose::{PoseObservation, PoseRecord};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

pub fn write_atomic<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let tmp = NamedTempFile::new_in(dir).map_err(CliError::io(dir))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(CliError::io(path))?;
        w.flush().map_err(CliError::io(path))?;
    }
    tmp.as_file().sync_all().map_err(CliError::io(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

pub fn write_node_file(path: &Path, nodes: &[Vec3]) -> Result<(), CliError> {
    write_atomic(path, |w| write_node(w, nodes))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for row in rows {
            out.write_record(row)?;
        }
        out.flush()
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A poses file is a JSON list of `{gravity, observed, targets}` records.
pub fn read_poses(path: &Path) -> Result<Vec<PoseObservation>, CliError> {
    let records: Vec<PoseRecord> = read_json(path)?;
    Ok(records.into_iter().map(PoseObservation::from).collect())
}

pub fn write_poses(path: &Path, poses: &[PoseObservation]) -> Result<(), CliError> {
    let records: Vec<PoseRecord> = poses.iter().map(PoseRecord::from).collect();
    write_json(path, &records)
}

/// Positions from a `.node` file, checked against the expected count.
pub fn read_positions(path: &Path, expected: usize) -> Result<Vec<Vec3>, CliError> {
    let (nodes, _) = read_node_file(path)?;
    if nodes.len() != expected {
        return Err(CliError::Config(format!(
            "{} has {} nodes, the mesh has {expected}",
            path.display(),
            nodes.len()
        )));
    }
    Ok(nodes)
}
