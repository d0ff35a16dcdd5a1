//! CSV and VTK writers for run histories, shapes and verification reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::ScalarField;
use crate::geometry::Mesh;
use crate::nonsmooth::ActiveSet;
use crate::optimizer::{IterationRecord, RunHistory};
use crate::verify::ReportRow;

pub const HISTORY_HEADER: &str = "iter,J_inf,J_2,n_active,epsilon,step,psi,wall_ms";

/// Scientific notation with 17 significant digits, enough to read back the
/// same `f64`.
fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_history(records: &[IterationRecord]) -> String {
    let mut s = String::with_capacity(64 * (records.len() + 1));
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            num(r.j_inf),
            num(r.j2),
            r.n_active,
            num(r.epsilon),
            num(r.step),
            num(r.psi),
            num(r.wall_ms)
        );
    }
    s
}

pub fn write_history(history: &RunHistory, path: &Path) -> Result<()> {
    write_file(path, &format_history(&history.records))
}

pub fn parse_history(text: &str, path: &Path) -> Result<Vec<IterationRecord>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == HISTORY_HEADER => {}
        other => return Err(parse_err(1, format!("expected header `{HISTORY_HEADER}`, found {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_err(line_no, format!("expected 8 fields, found {}", fields.len())));
        }
        let f = |k: usize| -> Result<f64> {
            fields[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("field {}: {e}", k + 1)))
        };
        let u = |k: usize| -> Result<usize> {
            fields[k]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(line_no, format!("field {}: {e}", k + 1)))
        };
        out.push(IterationRecord {
            iter: u(0)?,
            j_inf: f(1)?,
            j2: f(2)?,
            n_active: u(3)?,
            epsilon: f(4)?,
            step: f(5)?,
            psi: f(6)?,
            wall_ms: f(7)?,
        });
    }
    Ok(out)
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_history(&text, path)
}

/// Boundary polygon as `x,y` rows closed by repeating the first point,
/// followed by an `active_x,active_y` block when an active set is given.
pub fn format_shape(mesh: &Mesh, active: Option<&ActiveSet>) -> String {
    let mut s = String::from("x,y\n");
    let boundary = mesh.boundary_points();
    for p in boundary.iter().chain(boundary.first()) {
        let _ = writeln!(s, "{},{}", num(p[0]), num(p[1]));
    }
    if let Some(a) = active {
        s.push_str("active_x,active_y\n");
        for &v in &a.nodes {
            let p = mesh.node(v);
            let _ = writeln!(s, "{},{}", num(p[0]), num(p[1]));
        }
    }
    s
}

pub fn write_shape(mesh: &Mesh, active: Option<&ActiveSet>, path: &Path) -> Result<()> {
    write_file(path, &format_shape(mesh, active))
}

/// Legacy ASCII VTK unstructured grid with optional nodal scalars.
pub fn format_vtk(mesh: &Mesh, fields: &[(&str, &ScalarField)]) -> Result<String> {
    let mut s = String::from("# vtk DataFile Version 3.0\nmesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(s, "{} {} 0", num(p[0]), num(p[1]));
    }
    let nt = mesh.n_triangles();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
        for (name, field) in fields {
            field.check(mesh)?;
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid VTK field name `{name}`")));
            }
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in &field.0 {
                let _ = writeln!(s, "{}", num(*v));
            }
        }
    }
    Ok(s)
}

pub fn write_vtk(mesh: &Mesh, fields: &[(&str, &ScalarField)], path: &Path) -> Result<()> {
    write_file(path, &format_vtk(mesh, fields)?)
}

pub const REPORT_HEADER: &str = "test,metric,value,pass";

pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.test, r.metric, num(r.value), r.pass);
    }
    s
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    write_file(path, &format_report(rows))
}
