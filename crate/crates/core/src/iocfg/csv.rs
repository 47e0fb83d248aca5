use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stepper::DiagnosticsRow;

pub const DIAGNOSTICS_HEADER: &str = "time,max_u,min_u,max_c,min_c,max_p,min_p,mass_u,mass_c,mass_p,fp_iters,breakdown";

pub fn render_diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from(DIAGNOSTICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            r.time,
            r.max[0],
            r.min[0],
            r.max[1],
            r.min[1],
            r.max[2],
            r.min[2],
            r.mass[0],
            r.mass[1],
            r.mass[2],
            r.fp_iters,
            u8::from(r.breakdown)
        );
    }
    s
}

pub fn write_diagnostics_csv(rows: &[DiagnosticsRow], path: &Path) -> Result<()> {
    std::fs::write(path, render_diagnostics_csv(rows)).map_err(|e| Error::io(path, e))
}
