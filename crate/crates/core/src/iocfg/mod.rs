//! Run configuration, VTK snapshots and CSV diagnostics.

mod config;
mod csv;
mod vtk;

pub use config::{parse_config, render_config, MeshSpec, RunConfig, CONFIG_KEYS};
pub use csv::{render_diagnostics_csv, write_diagnostics_csv, DIAGNOSTICS_HEADER};
pub use vtk::{render_vtk, write_vtk, write_vtk_flagged};
