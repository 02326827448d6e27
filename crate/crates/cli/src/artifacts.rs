//! Artifact writers: CSV tables with a resolved-config preamble and
//! unit-carrying headers, and legacy-VTK ASCII field dumps.
//!
//! Every CSV is a pure function of config and seed, so re-runs are
//! byte-identical; wall-clock data lives only in `timings.csv` and
//! `trace.csv`, which are documented as measurement artifacts. VTK files
//! are deterministic except for the generation stamp in their title line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use stmlmc::mesh::Mesh;
use stmlmc::system::SpaceTimeField;

use crate::CliError;

/// A CSV table under construction: preamble comments, one header row
/// naming units, then data rows.
pub struct CsvTable {
    buffer: String,
    columns: usize,
}

impl CsvTable {
    /// `preamble` is emitted verbatim (already `# `-prefixed lines);
    /// `header` entries are "name [unit]" strings.
    pub fn new(preamble: &str, header: &[&str]) -> CsvTable {
        let mut buffer = String::new();
        buffer.push_str(preamble);
        buffer.push_str(&header.join(","));
        buffer.push('\n');
        CsvTable {
            buffer,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width must match header");
        self.buffer.push_str(&cells.join(","));
        self.buffer.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.buffer).map_err(|e| {
            CliError::Run(stmlmc::Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            )))
        })
    }
}

/// Shortest-roundtrip decimal rendering (deterministic per bit pattern).
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Run(stmlmc::Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.display()),
        )))
    })
}

/// Write one time block of a space-time field as a legacy-VTK ASCII
/// unstructured grid. `step` is the 1-based time index (block step-1),
/// `t` its physical time. The title line carries the generation stamp and
/// is the only line allowed to differ between identical runs.
#[allow(clippy::too_many_arguments)]
pub fn write_vtk(
    dir: &Path,
    stem: &str,
    field_name: &str,
    mesh: &Mesh,
    field: &SpaceTimeField,
    step: usize,
    t: f64,
    seed: u64,
) -> Result<PathBuf, CliError> {
    assert!(step >= 1 && step <= field.m, "step out of range");
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(
        s,
        "{field_name} level={} step={step} t={t}ms seed={seed} generated={stamp}s",
        field.level
    );
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let n = mesh.n_nodes();
    let _ = writeln!(s, "POINTS {n} double");
    for i in 0..n {
        let x = mesh.node(i);
        let _ = writeln!(s, "{} {} {}", num(x[0]), num(x[1]), num(x[2]));
    }
    let e = mesh.n_elements();
    let verts = mesh.element(0).len();
    let _ = writeln!(s, "CELLS {e} {}", e * (verts + 1));
    for el in 0..e {
        let _ = write!(s, "{verts}");
        for &v in mesh.element(el) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let cell_type = match verts {
        2 => 3,  // VTK_LINE
        3 => 5,  // VTK_TRIANGLE
        _ => 10, // VTK_TETRA
    };
    let _ = writeln!(s, "CELL_TYPES {e}");
    for _ in 0..e {
        let _ = writeln!(s, "{cell_type}");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    let _ = writeln!(s, "SCALARS {field_name} double 1");
    s.push_str("LOOKUP_TABLE default\n");
    for v in field.block(step - 1) {
        let _ = writeln!(s, "{}", num(*v));
    }
    let path = dir.join(format!("{stem}_step{step:04}.vtk"));
    fs::write(&path, s).map_err(|e| {
        CliError::Run(stmlmc::Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        )))
    })?;
    Ok(path)
}

/// Resolve the requested 1-based dump steps against a field's block count:
/// empty means "final step only"; out-of-range entries are rejected.
pub fn dump_steps(requested: &[usize], m: usize) -> Result<Vec<usize>, CliError> {
    if requested.is_empty() {
        return Ok(vec![m]);
    }
    let mut steps = requested.to_vec();
    steps.sort_unstable();
    steps.dedup();
    if let Some(&bad) = steps.iter().find(|&&k| k > m) {
        return Err(CliError::Config(format!(
            "output.vtk_steps: step {bad} exceeds the {m} steps of the target level"
        )));
    }
    Ok(steps)
}
