use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SimState;

const VTK_QUAD: u8 = 9;
const VTK_HEXAHEDRON: u8 = 12;

/// Legacy ASCII VTK text for a state. `flag` is appended to the title line.
///
/// Numbers use Rust's shortest round-trip formatting, so values are exact
/// and integers carry a trailing `.0`.
pub fn render_vtk(state: &SimState, flag: Option<&str>) -> String {
    let mesh = state.mesh();
    let dim = mesh.dim();
    let n = mesh.node_count();
    let ne = mesh.element_count();
    let npe = mesh.nodes_per_element();
    let mut s = String::with_capacity(64 * n);

    s.push_str("# vtk DataFile Version 3.0\n");
    let mut title = format!("haptosim t={:?}", state.time);
    if let Some(f) = flag {
        let clean: String = f.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        let _ = write!(title, " {clean}");
    }
    title.truncate(255);
    s.push_str(&title);
    s.push('\n');
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(s, "POINTS {n} double");
    for i in 0..n {
        let x = mesh.node(i);
        let z = if dim == 3 { x[2] } else { 0.0 };
        let _ = writeln!(s, "{:?} {:?} {:?}", x[0], x[1], z);
    }

    let _ = writeln!(s, "CELLS {ne} {}", ne * (npe + 1));
    for cell in mesh.elements() {
        s.push_str(&npe.to_string());
        for v in cell {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    let ty = if dim == 3 { VTK_HEXAHEDRON } else { VTK_QUAD };
    for _ in 0..ne {
        let _ = writeln!(s, "{ty}");
    }

    let _ = writeln!(s, "POINT_DATA {n}");
    for (name, f) in ["u", "c", "p"].iter().zip(state.fields()) {
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for v in f.coeffs() {
            let _ = writeln!(s, "{v:?}");
        }
    }
    s
}

pub fn write_vtk(state: &SimState, path: &Path) -> Result<()> {
    write_vtk_flagged(state, path, None)
}

/// As [`write_vtk`], marking the file (for breakdown artifacts).
pub fn write_vtk_flagged(state: &SimState, path: &Path, flag: Option<&str>) -> Result<()> {
    std::fs::write(path, render_vtk(state, flag)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_mesh, FeField};
    use std::sync::Arc;

    /// Token-level reader for the subset of the legacy format we emit.
    fn check_grammar(text: &str) -> std::result::Result<(usize, usize, Vec<Vec<f64>>), String> {
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or("unexpected end of file".to_string());
        if next()? != "# vtk DataFile Version 3.0" {
            return Err("bad header".into());
        }
        let title = next()?;
        if title.len() > 255 {
            return Err("title too long".into());
        }
        if next()? != "ASCII" || next()? != "DATASET UNSTRUCTURED_GRID" {
            return Err("bad format/dataset line".into());
        }
        let pts: Vec<String> = next()?.split(' ').map(String::from).collect();
        if pts.len() != 3 || pts[0] != "POINTS" || pts[2] != "double" {
            return Err("bad POINTS line".into());
        }
        let n: usize = pts[1].parse().map_err(|_| "bad point count")?;
        for _ in 0..n {
            let row = next()?;
            let toks: Vec<&str> = row.split(' ').collect();
            if toks.len() != 3 || toks.iter().any(|t| t.parse::<f64>().is_err()) {
                return Err(format!("bad point row `{row}`"));
            }
        }
        let cells: Vec<String> = next()?.split(' ').map(String::from).collect();
        if cells.len() != 3 || cells[0] != "CELLS" {
            return Err("bad CELLS line".into());
        }
        let ne: usize = cells[1].parse().map_err(|_| "bad cell count")?;
        let size: usize = cells[2].parse().map_err(|_| "bad cell size")?;
        let mut total = 0;
        for _ in 0..ne {
            let toks: Vec<usize> = next()?
                .split(' ')
                .map(|t| t.parse::<usize>().map_err(|_| "bad connectivity".to_string()))
                .collect::<std::result::Result<_, _>>()?;
            if toks.is_empty() || toks[0] + 1 != toks.len() || toks[1..].iter().any(|&v| v >= n) {
                return Err("bad cell row".into());
            }
            total += toks.len();
        }
        if total != size {
            return Err("cell size mismatch".into());
        }
        if next()? != format!("CELL_TYPES {ne}") {
            return Err("bad CELL_TYPES line".into());
        }
        for _ in 0..ne {
            let t = next()?;
            if t != "9" && t != "12" {
                return Err(format!("bad cell type {t}"));
            }
        }
        if next()? != format!("POINT_DATA {n}") {
            return Err("bad POINT_DATA line".into());
        }
        let mut data = Vec::new();
        for name in ["u", "c", "p"] {
            if next()? != format!("SCALARS {name} double 1") || next()? != "LOOKUP_TABLE default" {
                return Err(format!("bad SCALARS block for {name}"));
            }
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                vals.push(next()?.parse::<f64>().map_err(|_| "bad scalar")?);
            }
            data.push(vals);
        }
        if lines.next().is_some() {
            return Err("trailing content".into());
        }
        Ok((n, ne, data))
    }

    fn state(dim: usize, cells: usize, f: impl Fn(&[f64]) -> [f64; 3]) -> SimState {
        let ext = vec![[0.0, 1.0]; dim];
        let m = Arc::new(build_structured_mesh(dim, &ext, &vec![cells; dim], 0).unwrap());
        let field = |k: usize| crate::mesh::interpolate(|x| f(x)[k], &m).unwrap();
        SimState::new(0.5, field(0), field(1), field(2)).unwrap()
    }

    #[test]
    fn single_quad() {
        let s = state(2, 1, |_| [1.0, 1.0, 1.0]);
        let text = render_vtk(&s, None);
        let (n, ne, data) = check_grammar(&text).unwrap();
        assert_eq!((n, ne), (4, 1));
        assert!(text.contains("CELL_TYPES 1\n9\n"));
        assert!(text.contains("CELLS 1 5\n4 0 1 3 2\n"));
        let scalars = text.split("POINT_DATA 4\n").nth(1).unwrap();
        for line in scalars
            .lines()
            .filter(|l| !l.starts_with("SCALARS") && !l.starts_with("LOOKUP"))
        {
            assert_eq!(line, "1.0");
        }
        assert!(data.iter().all(|v| v.len() == 4));
    }

    #[test]
    fn hexahedra_and_round_trip() {
        let s = state(3, 2, |x| [x[0] / 3.0, 1.0 - x[1] * 0.1, x[2].sin()]);
        let text = render_vtk(&s, None);
        let (n, ne, data) = check_grammar(&text).unwrap();
        assert_eq!((n, ne), (27, 8));
        assert!(text.contains("\n12\n"));
        for (got, f) in data.iter().zip(s.fields()) {
            assert_eq!(got.as_slice(), f.coeffs());
        }
    }

    #[test]
    fn flagged_title_and_determinism() {
        let s = state(2, 3, |x| [x[0], x[1], 0.25]);
        let a = render_vtk(&s, Some("BREAKDOWN: min u\n< 0"));
        assert_eq!(a.lines().nth(1).unwrap(), "haptosim t=0.5 BREAKDOWN: min u < 0");
        check_grammar(&a).unwrap();
        assert_eq!(a, render_vtk(&s, Some("BREAKDOWN: min u\n< 0")));
    }

    #[test]
    fn io_error_names_path() {
        let s = state(2, 1, |_| [0.0; 3]);
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("missing").join("x.vtk");
        match write_vtk(&s, &bad) {
            Err(Error::Io { path, .. }) => assert_eq!(path, bad),
            other => panic!("{other:?}"),
        }
        let good = dir.path().join("x.vtk");
        write_vtk(&s, &good).unwrap();
        check_grammar(&std::fs::read_to_string(good).unwrap()).unwrap();
    }

    #[test]
    fn mismatched_field_is_unrepresentable() {
        let m = Arc::new(build_structured_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], &[1, 1], 0).unwrap());
        let other = Arc::new(build_structured_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], &[2, 2], 0).unwrap());
        let a = FeField::constant(m, 1.0);
        let b = FeField::constant(other, 1.0);
        assert!(SimState::new(0.0, a.clone(), b, a).is_err());
    }
}
