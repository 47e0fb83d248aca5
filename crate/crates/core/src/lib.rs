//! Finite element simulation of a haptotaxis model of cancer invasion.
//!
//! Q1 elements on structured box meshes (2D and 3D), a θ-scheme in time and a
//! relaxed fixed-point iteration that decouples the cell density `u`, the
//! extracellular matrix `c` and the protease `p` within each step.

// Index loops mirror the element formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod iocfg;
pub mod linsolve;
pub mod mesh;
pub mod model;
pub mod stepper;
pub mod verify;

pub use error::{Error, Result};
pub use iocfg::{parse_config, render_config, MeshSpec, RunConfig};
pub use mesh::{build_structured_mesh, interpolate, FeField, StructuredMesh};
pub use model::{paper_initial_data, rescale_to_unit_chi_eps, w_diagnostic, InitialData, Parameters, SimState};
pub use stepper::{
    fixed_point_advance, run, run_observed, snapshot_steps, Advance, BreakdownReason, BreakdownReport, Diagnostics,
    DiagnosticsRow, FixedPointReport, Operators, RunOutput, Snapshot,
};
