//! θ-scheme time stepping with relaxed fixed-point decoupling.
//!
//! Each time step solves three linear systems per pass, in the order u, c, p,
//! with the p solve using the freshly computed u and c. Passes repeat until
//! successive iterates agree to `tol_fp` in the Euclidean norm of their
//! coefficient vectors.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{Assembler, Form};
use crate::iocfg::RunConfig;
use crate::linsolve::{diff_norm2, dot, CsrMatrix, LinearSolver, SolveOptions};
use crate::mesh::{FeField, StructuredMesh};
use crate::model::{steps_to, Parameters, SimState};

/// Undershoot below this flags a step as oscillating.
pub const OSCILLATION_TOL: f64 = 1e-10;

/// Field names in the order the scheme solves them.
pub const FIELD_NAMES: [&str; 3] = ["u", "c", "p"];

/// Matrices that depend only on the mesh, plus a factorised mass matrix.
#[derive(Debug, Clone)]
pub struct Operators {
    assembler: Assembler,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    // ∫φ_i, so that ∫v_h = node_weights · v
    node_weights: Vec<f64>,
    mass_solver: LinearSolver,
    solve_opts: SolveOptions,
}

impl Operators {
    pub fn new(mesh: Arc<StructuredMesh>, tol_lin: f64) -> Result<Self> {
        let assembler = Assembler::new(mesh)?;
        let mass = assembler.assemble(Form::Mass)?;
        let stiffness = assembler.assemble(Form::Stiffness)?;
        let node_weights = mass.row_sums();
        let solve_opts = SolveOptions::with_tol(tol_lin);
        let mass_solver = LinearSolver::new(mass.clone(), solve_opts)?;
        Ok(Operators {
            assembler,
            mass,
            stiffness,
            node_weights,
            mass_solver,
            solve_opts,
        })
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        self.assembler.mesh()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// `∫ v_h` for a nodal coefficient vector.
    pub fn integral(&self, coeffs: &[f64]) -> f64 {
        dot(&self.node_weights, coeffs)
    }

    fn nnz(&self) -> usize {
        self.mass.nnz()
    }

    fn form_values(&self, form: Form<'_>) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.nnz()];
        self.assembler.assemble_into(form, &mut v)?;
        Ok(v)
    }

    fn matrix(&self, values: Vec<f64>) -> Result<CsrMatrix> {
        CsrMatrix::from_pattern(Arc::clone(self.mass.pattern()), values)
    }

    fn solve(&self, values: Vec<f64>, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        let solver = LinearSolver::new(self.matrix(values)?, self.solve_opts)?;
        solver.solve_from(rhs, Some(guess)).map(|(x, _)| x)
    }
}

fn combine(n: usize, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for &(a, v) in terms {
        if a != 0.0 {
            for (o, x) in out.iter_mut().zip(v) {
                *o += a * x;
            }
        }
    }
    out
}

/// Right-hand sides built from the previous time level; fixed for a step.
struct Explicit {
    u: Vec<f64>,
    c: Vec<f64>,
    p: Vec<f64>,
}

impl Explicit {
    fn new(ops: &Operators, prm: &Parameters, un: &[f64], cn: &[f64], pn: &[f64]) -> Result<Self> {
        Ok(Explicit {
            u: explicit_u(ops, prm, un, cn)?,
            c: explicit_c(ops, prm, cn, pn)?,
            p: explicit_p(ops, prm, un, cn, pn)?,
        })
    }
}

fn explicit_u(ops: &Operators, prm: &Parameters, un: &[f64], cn: &[f64]) -> Result<Vec<f64>> {
    let w = (1.0 - prm.theta) * prm.dt;
    if w == 0.0 {
        return ops.mass.spmv(un);
    }
    let n = ops.nnz();
    let b = if prm.chi != 0.0 {
        ops.form_values(Form::Haptotaxis(cn))?
    } else {
        vec![0.0; n]
    };
    let wm = ops.form_values(Form::WeightedMass(un))?;
    let a = combine(
        n,
        &[
            (1.0 + w * prm.mu, ops.mass.values()),
            (-w / prm.alpha, ops.stiffness.values()),
            (w * prm.chi, &b),
            (-w * prm.mu, &wm),
        ],
    );
    ops.matrix(a)?.spmv(un)
}

fn explicit_c(ops: &Operators, prm: &Parameters, cn: &[f64], pn: &[f64]) -> Result<Vec<f64>> {
    let w = (1.0 - prm.theta) * prm.dt;
    if w == 0.0 {
        return ops.mass.spmv(cn);
    }
    let wp = ops.form_values(Form::WeightedMass(pn))?;
    let a = combine(ops.nnz(), &[(1.0, ops.mass.values()), (-w, &wp)]);
    ops.matrix(a)?.spmv(cn)
}

fn explicit_p(ops: &Operators, prm: &Parameters, un: &[f64], cn: &[f64], pn: &[f64]) -> Result<Vec<f64>> {
    let w = (1.0 - prm.theta) * prm.dt / prm.epsilon;
    let mut rhs = ops.mass.spmv(pn)?;
    for r in &mut rhs {
        *r *= 1.0 - w;
    }
    if w != 0.0 {
        let f = ops.assembler.assemble_load_product(un, cn)?;
        for (r, fi) in rhs.iter_mut().zip(&f) {
            *r += w * fi;
        }
    }
    Ok(rhs)
}

fn implicit_u(ops: &Operators, prm: &Parameters, rhs: &[f64], u_it: &[f64], c_it: &[f64]) -> Result<Vec<f64>> {
    let w = prm.theta * prm.dt;
    let n = ops.nnz();
    let b = if prm.chi != 0.0 && w != 0.0 {
        ops.form_values(Form::Haptotaxis(c_it))?
    } else {
        vec![0.0; n]
    };
    let wm = if w != 0.0 {
        ops.form_values(Form::WeightedMass(u_it))?
    } else {
        vec![0.0; n]
    };
    let a = combine(
        n,
        &[
            (1.0 - w * prm.mu, ops.mass.values()),
            (w / prm.alpha, ops.stiffness.values()),
            (-w * prm.chi, &b),
            (w * prm.mu, &wm),
        ],
    );
    ops.solve(a, rhs, u_it)
}

fn implicit_c(ops: &Operators, prm: &Parameters, rhs: &[f64], p_it: &[f64], c_guess: &[f64]) -> Result<Vec<f64>> {
    let w = prm.theta * prm.dt;
    if w == 0.0 {
        return ops.mass_solver.solve_from(rhs, Some(c_guess)).map(|(x, _)| x);
    }
    let wp = ops.form_values(Form::WeightedMass(p_it))?;
    let a = combine(ops.nnz(), &[(1.0, ops.mass.values()), (w, &wp)]);
    ops.solve(a, rhs, c_guess)
}

fn implicit_p(
    ops: &Operators,
    prm: &Parameters,
    rhs: &[f64],
    u_k: &[f64],
    c_k: &[f64],
    p_guess: &[f64],
) -> Result<Vec<f64>> {
    let w = prm.theta * prm.dt / prm.epsilon;
    let mut b = rhs.to_vec();
    if w != 0.0 {
        let f = ops.assembler.assemble_load_product(u_k, c_k)?;
        for (r, fi) in b.iter_mut().zip(&f) {
            *r += w * fi;
        }
    }
    let scale = 1.0 / (1.0 + w);
    for r in &mut b {
        *r *= scale;
    }
    ops.mass_solver.solve_from(&b, Some(p_guess)).map(|(x, _)| x)
}

fn check_fields(fields: &[&FeField], ops: &Operators) -> Result<()> {
    for f in fields {
        if !(Arc::ptr_eq(f.mesh(), ops.mesh()) || **f.mesh() == **ops.mesh()) {
            return Err(Error::Input("fields must live on the operators' mesh".into()));
        }
    }
    Ok(())
}

fn wrap(mesh: &Arc<StructuredMesh>, v: Vec<f64>) -> Result<FeField> {
    FeField::new(Arc::clone(mesh), v)
}

/// One solve of the u equation with coefficients frozen at the given iterates.
pub fn step_u(
    u_prev: &FeField,
    c_prev: &FeField,
    u_iter: &FeField,
    c_iter: &FeField,
    params: &Parameters,
    ops: &Operators,
) -> Result<FeField> {
    check_fields(&[u_prev, c_prev, u_iter, c_iter], ops)?;
    let rhs = explicit_u(ops, params, u_prev.coeffs(), c_prev.coeffs())?;
    let x = implicit_u(ops, params, &rhs, u_iter.coeffs(), c_iter.coeffs())?;
    wrap(u_prev.mesh(), x)
}

/// One solve of the c equation with the protease frozen at `p_iter`.
pub fn step_c(
    c_prev: &FeField,
    p_prev: &FeField,
    p_iter: &FeField,
    params: &Parameters,
    ops: &Operators,
) -> Result<FeField> {
    check_fields(&[c_prev, p_prev, p_iter], ops)?;
    let rhs = explicit_c(ops, params, c_prev.coeffs(), p_prev.coeffs())?;
    let x = implicit_c(ops, params, &rhs, p_iter.coeffs(), c_prev.coeffs())?;
    wrap(c_prev.mesh(), x)
}

/// One solve of the p equation given the new u and c iterates.
pub fn step_p(
    p_prev: &FeField,
    u_prev: &FeField,
    c_prev: &FeField,
    u_iter: &FeField,
    c_iter: &FeField,
    params: &Parameters,
    ops: &Operators,
) -> Result<FeField> {
    check_fields(&[p_prev, u_prev, c_prev, u_iter, c_iter], ops)?;
    let rhs = explicit_p(ops, params, u_prev.coeffs(), c_prev.coeffs(), p_prev.coeffs())?;
    let x = implicit_p(ops, params, &rhs, u_iter.coeffs(), c_iter.coeffs(), p_prev.coeffs())?;
    wrap(p_prev.mesh(), x)
}

/// Convergence record of one time step's fixed-point loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// Passes executed.
    pub iterations: usize,
    /// Last `(‖Δu‖₂, ‖Δc‖₂, ‖Δp‖₂)`.
    pub residuals: [f64; 3],
    pub converged: bool,
    /// Residuals of every pass.
    pub history: Vec<[f64; 3]>,
    /// Relaxation factor in force at the last pass.
    pub beta: f64,
}

impl FixedPointReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BreakdownReason {
    NonFinite {
        field: &'static str,
    },
    Blowup {
        field: &'static str,
        value: f64,
    },
    /// `min u < -undershoot_limit` at `strikes` time levels.
    Undershoot {
        min_u: f64,
        strikes: usize,
    },
}

impl std::fmt::Display for BreakdownReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BreakdownReason::NonFinite { field } => write!(f, "non-finite values in {field}"),
            BreakdownReason::Blowup { field, value } => write!(f, "|{field}| reached {value:e}"),
            BreakdownReason::Undershoot { min_u, strikes } => {
                write!(
                    f,
                    "min u = {min_u:e}, undershoot limit exceeded at {strikes} time levels"
                )
            }
        }
    }
}

/// Why and where a run stopped early.
#[derive(Debug, Clone)]
pub struct BreakdownReport {
    pub time: f64,
    pub step: usize,
    pub reason: BreakdownReason,
    pub report: FixedPointReport,
    /// The offending iterate, or the committed state for undershoot.
    pub state: SimState,
}

/// Outcome of advancing one time step.
#[derive(Debug, Clone)]
pub enum Advance {
    Committed(SimState, FixedPointReport),
    Breakdown(Box<BreakdownReport>),
}

fn screen(fields: [&[f64]; 3], threshold: f64) -> Option<BreakdownReason> {
    for (name, f) in FIELD_NAMES.iter().zip(fields) {
        if f.iter().any(|v| !v.is_finite()) {
            return Some(BreakdownReason::NonFinite { field: name });
        }
        let m = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > threshold {
            return Some(BreakdownReason::Blowup { field: name, value: m });
        }
    }
    None
}

/// Advance `state` by one step of size `params.dt`.
pub fn fixed_point_advance(state: &SimState, params: &Parameters, ops: &Operators) -> Result<Advance> {
    advance_to(state, state.time + params.dt, params, ops)
}

pub(crate) fn advance_to(state: &SimState, t_next: f64, prm: &Parameters, ops: &Operators) -> Result<Advance> {
    check_fields(&[&state.u, &state.c, &state.p], ops)?;
    let mesh = state.mesh();
    let (un, cn, pn) = (state.u.coeffs(), state.c.coeffs(), state.p.coeffs());
    let expl = Explicit::new(ops, prm, un, cn, pn).map_err(|e| step_error(t_next, "u", 0, e))?;

    let mut it = [un.to_vec(), cn.to_vec(), pn.to_vec()];
    let mut beta = if prm.backtracking { 1.0 } else { prm.beta };
    let mut history = Vec::new();
    let mut last_total = f64::INFINITY;

    for pass in 1..=prm.max_fp_iters {
        let u_new = implicit_u(ops, prm, &expl.u, &it[0], &it[1]).map_err(|e| step_error(t_next, "u", pass, e))?;
        let c_new = implicit_c(ops, prm, &expl.c, &it[2], &it[1]).map_err(|e| step_error(t_next, "c", pass, e))?;
        let p_new =
            implicit_p(ops, prm, &expl.p, &u_new, &c_new, &it[2]).map_err(|e| step_error(t_next, "p", pass, e))?;

        let residuals = [
            diff_norm2(&u_new, &it[0]),
            diff_norm2(&c_new, &it[1]),
            diff_norm2(&p_new, &it[2]),
        ];
        history.push(residuals);
        let report = |converged| FixedPointReport {
            iterations: pass,
            residuals,
            converged,
            history: history.clone(),
            beta,
        };

        if let Some(reason) = screen([&u_new, &c_new, &p_new], prm.blowup_threshold) {
            let state = SimState {
                time: t_next,
                u: wrap(mesh, u_new)?,
                c: wrap(mesh, c_new)?,
                p: wrap(mesh, p_new)?,
            };
            return Ok(Advance::Breakdown(Box::new(BreakdownReport {
                time: t_next,
                step: 0,
                reason,
                report: report(false),
                state,
            })));
        }

        if residuals.iter().all(|&r| r < prm.tol_fp) {
            let report = report(true);
            let next = SimState {
                time: t_next,
                u: wrap(mesh, u_new)?,
                c: wrap(mesh, c_new)?,
                p: wrap(mesh, p_new)?,
            };
            return Ok(Advance::Committed(next, report));
        }

        if prm.backtracking {
            let total = residuals.iter().sum::<f64>();
            if total > last_total && beta > 1.0 / 1024.0 {
                beta *= 0.5;
            }
            last_total = total;
        }
        for (old, new) in it.iter_mut().zip([u_new, c_new, p_new]) {
            for (o, n) in old.iter_mut().zip(new) {
                *o = beta * n + (1.0 - beta) * *o;
            }
        }
    }

    let residuals = *history.last().expect("max_fp_iters ≥ 1");
    Err(Error::NonConvergence {
        time: t_next,
        report: FixedPointReport {
            iterations: prm.max_fp_iters,
            residuals,
            converged: false,
            history,
            beta,
        },
    })
}

fn step_error(time: f64, field: &'static str, pass: usize, e: Error) -> Error {
    Error::Step {
        time,
        field,
        pass,
        source: Box::new(e),
    }
}

/// Per-time-level monitors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub time: f64,
    pub max: [f64; 3],
    pub min: [f64; 3],
    /// `∫u_h, ∫c_h, ∫p_h` with the consistent mass matrix.
    pub mass: [f64; 3],
    pub fp_iters: usize,
    pub breakdown: bool,
    /// Some field undershoots zero by more than [`OSCILLATION_TOL`].
    pub oscillation: bool,
}

impl DiagnosticsRow {
    pub fn measure(state: &SimState, ops: &Operators, fp_iters: usize, breakdown: bool) -> Self {
        let fields = state.fields();
        let max = fields.map(|f| f.max());
        let min = fields.map(|f| f.min());
        let mass = fields.map(|f| ops.integral(f.coeffs()));
        DiagnosticsRow {
            time: state.time,
            max,
            min,
            mass,
            fp_iters,
            breakdown,
            oscillation: min.iter().any(|&m| m < -OSCILLATION_TOL),
        }
    }
}

/// Time series of monitors plus human-readable warnings.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticsRow>,
    pub warnings: Vec<String>,
    /// Set when the run stopped early.
    pub breakdown: Option<BreakdownReason>,
}

impl Diagnostics {
    /// Maximum of u at `time`, if that level was reached.
    pub fn max_u_at(&self, time: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.time - time).abs() <= 1e-9 * time.abs().max(1.0))
            .map(|r| r.max[0])
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub state: SimState,
    pub breakdown: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub final_state: SimState,
    pub diagnostics: Diagnostics,
    pub snapshots: Vec<Snapshot>,
    pub reports: Vec<FixedPointReport>,
    pub breakdown: Option<Box<BreakdownReport>>,
}

/// Step indices at which a run keeps snapshots.
pub fn snapshot_steps(config: &RunConfig) -> Result<BTreeSet<usize>> {
    let prm = &config.params;
    let n_steps = prm.step_count()?;
    let mut wanted: BTreeSet<usize> = config
        .snapshots
        .iter()
        .filter_map(|&t| steps_to(t, prm.dt))
        .filter(|&s| s <= n_steps)
        .collect();
    if config.vtk_every > 0 {
        wanted.extend((0..=n_steps).step_by(config.vtk_every));
    }
    Ok(wanted)
}

/// Run a configuration to its final time or to breakdown.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    run_observed(config, |_, _| {})
}

/// As [`run`], calling `observe` after every committed time level.
pub fn run_observed<F>(config: &RunConfig, mut observe: F) -> Result<RunOutput>
where
    F: FnMut(&SimState, &DiagnosticsRow),
{
    config.validate()?;
    let prm = &config.params;
    let mesh = Arc::new(config.mesh.build()?);
    let ops = Operators::new(Arc::clone(&mesh), prm.tol_lin)?;
    let (mut state, warnings) = SimState::initial(&mesh, &config.initial)?;
    let n_steps = prm.step_count()?;

    let wanted = snapshot_steps(config)?;

    let mut diagnostics = Diagnostics {
        warnings,
        ..Default::default()
    };
    let mut snapshots = Vec::new();
    let mut reports = Vec::new();
    let mut breakdown = None;

    let first = DiagnosticsRow::measure(&state, &ops, 0, false);
    observe(&state, &first);
    diagnostics.rows.push(first);
    if wanted.contains(&0) {
        snapshots.push(Snapshot {
            step: 0,
            state: state.clone(),
            breakdown: false,
        });
    }

    let mut strikes = 0;
    for step in 1..=n_steps {
        let t = step as f64 * prm.dt;
        let mut outcome = advance_to(&state, t, prm, &ops)?;
        if let Advance::Committed(next, report) = &outcome {
            let min_u = next.u.min();
            if min_u < -prm.undershoot_limit {
                strikes += 1;
                if prm.undershoot_strikes > 0 && strikes >= prm.undershoot_strikes {
                    outcome = Advance::Breakdown(Box::new(BreakdownReport {
                        time: t,
                        step,
                        reason: BreakdownReason::Undershoot { min_u, strikes },
                        report: report.clone(),
                        state: next.clone(),
                    }));
                }
            }
        }
        match outcome {
            Advance::Committed(next, report) => {
                let row = DiagnosticsRow::measure(&next, &ops, report.iterations, false);
                monitor(&mut diagnostics, &row, prm);
                observe(&next, &row);
                diagnostics.rows.push(row);
                reports.push(report);
                state = next;
                if wanted.contains(&step) {
                    snapshots.push(Snapshot {
                        step,
                        state: state.clone(),
                        breakdown: false,
                    });
                }
            }
            Advance::Breakdown(mut b) => {
                b.step = step;
                let row = DiagnosticsRow::measure(&b.state, &ops, b.report.iterations, true);
                observe(&b.state, &row);
                diagnostics.rows.push(row);
                diagnostics.warnings.push(format!("breakdown at t = {t}: {}", b.reason));
                diagnostics.breakdown = Some(b.reason.clone());
                reports.push(b.report.clone());
                snapshots.push(Snapshot {
                    step,
                    state: b.state.clone(),
                    breakdown: true,
                });
                breakdown = Some(b);
                break;
            }
        }
    }

    Ok(RunOutput {
        final_state: state,
        diagnostics,
        snapshots,
        reports,
        breakdown,
    })
}

fn monitor(diag: &mut Diagnostics, row: &DiagnosticsRow, prm: &Parameters) {
    if row.oscillation {
        diag.warnings.push(format!(
            "oscillation at t = {}: min (u, c, p) = ({:e}, {:e}, {:e})",
            row.time, row.min[0], row.min[1], row.min[2]
        ));
    }
    if let Some(prev) = diag.rows.last() {
        let rise = row.max[1] - prev.max[1];
        if row.min[2] >= 0.0 && rise > 10.0 * prm.tol_fp {
            diag.warnings
                .push(format!("max c increased by {rise:e} at t = {}", row.time));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    fn unit_mesh(cells: usize) -> Arc<StructuredMesh> {
        Arc::new(build_structured_mesh(2, &[[0.0, 1.0], [0.0, 1.0]], &[cells, cells], 0).unwrap())
    }

    fn constant(mesh: &Arc<StructuredMesh>, v: f64) -> FeField {
        FeField::constant(Arc::clone(mesh), v)
    }

    fn assert_const(f: &FeField, v: f64, tol: f64) {
        for &x in f.coeffs() {
            assert!((x - v).abs() <= tol, "{x} vs {v}");
        }
    }

    fn ops(mesh: &Arc<StructuredMesh>) -> Operators {
        Operators::new(Arc::clone(mesh), 1e-13).unwrap()
    }

    #[test]
    fn heat_equation_keeps_constants() {
        let m = unit_mesh(3);
        let o = ops(&m);
        let prm = Parameters {
            chi: 0.0,
            mu: 1e-300,
            ..Default::default()
        };
        let u = constant(&m, 0.7);
        let c = constant(&m, 0.3);
        let out = step_u(&u, &c, &u, &c, &prm, &o).unwrap();
        assert_const(&out, 0.7, 1e-12);
    }

    #[test]
    fn logistic_recurrence() {
        let m = unit_mesh(2);
        let o = ops(&m);
        let prm = Parameters {
            chi: 0.0,
            mu: 1.0,
            theta: 1.0,
            dt: 1.0,
            ..Default::default()
        };
        let u = constant(&m, 0.5);
        let c = constant(&m, 1.0);
        let out = step_u(&u, &c, &u, &c, &prm, &o).unwrap();
        assert_const(&out, 1.0, 1e-12);
    }

    #[test]
    fn logistic_fixed_point_is_beta_independent() {
        let m = unit_mesh(1);
        let o = ops(&m);
        for beta in [0.25, 0.5] {
            let prm = Parameters {
                chi: 0.0,
                mu: 1.0,
                theta: 1.0,
                dt: 1.0,
                beta,
                tol_fp: 1e-13,
                max_fp_iters: 500,
                ..Default::default()
            };
            let s = SimState::new(0.0, constant(&m, 0.5), constant(&m, 1.0), constant(&m, 0.0)).unwrap();
            match fixed_point_advance(&s, &prm, &o).unwrap() {
                Advance::Committed(next, rep) => {
                    assert!(rep.converged);
                    assert_const(&next.u, 0.5f64.sqrt(), 1e-11);
                }
                Advance::Breakdown(b) => panic!("{:?}", b.reason),
            }
        }
    }

    #[test]
    fn unrelaxed_logistic_iteration_oscillates() {
        // u ← 0.5/u has slope −1 at its fixed point, so β = 1 cycles between 1 and 0.5
        let m = unit_mesh(1);
        let o = ops(&m);
        let prm = Parameters {
            chi: 0.0,
            mu: 1.0,
            theta: 1.0,
            dt: 1.0,
            beta: 1.0,
            max_fp_iters: 50,
            ..Default::default()
        };
        let s = SimState::new(0.0, constant(&m, 0.5), constant(&m, 1.0), constant(&m, 0.0)).unwrap();
        match fixed_point_advance(&s, &prm, &o) {
            Err(Error::NonConvergence { report, .. }) => assert!((report.residuals[0] - 1.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn c_without_protease_is_frozen() {
        let m = unit_mesh(2);
        let o = ops(&m);
        let prm = Parameters::default();
        let c = interpolate_xy(&m);
        let p = constant(&m, 0.0);
        let out = step_c(&c, &p, &p, &prm, &o).unwrap();
        for (a, b) in out.coeffs().iter().zip(c.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    fn interpolate_xy(m: &Arc<StructuredMesh>) -> FeField {
        crate::mesh::interpolate(|x| 1.0 + x[0] * x[1], m).unwrap()
    }

    #[test]
    fn c_recurrence_and_linearity() {
        let m = unit_mesh(2);
        let o = ops(&m);
        let prm = Parameters {
            theta: 0.5,
            dt: 1.0,
            ..Default::default()
        };
        let one = constant(&m, 1.0);
        let out = step_c(&one, &one, &one, &prm, &o).unwrap();
        assert_const(&out, 1.0 / 3.0, 1e-13);

        let c = interpolate_xy(&m);
        let c2 = FeField::new(m.clone(), c.coeffs().iter().map(|v| 2.0 * v).collect()).unwrap();
        let p = crate::mesh::interpolate(|x| x[0], &m).unwrap();
        let a = step_c(&c, &p, &p, &prm, &o).unwrap();
        let b = step_c(&c2, &p, &p, &prm, &o).unwrap();
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn p_recurrences() {
        let m = unit_mesh(2);
        let o = ops(&m);
        let zero = constant(&m, 0.0);
        let one = constant(&m, 1.0);
        let prm = Parameters {
            theta: 0.5,
            dt: 1.0,
            epsilon: 0.2,
            ..Default::default()
        };
        assert_const(&step_p(&zero, &zero, &one, &zero, &one, &prm, &o).unwrap(), 0.0, 0.0);
        let out = step_p(&zero, &one, &one, &one, &one, &prm, &o).unwrap();
        assert_const(&out, 10.0 / 7.0, 1e-12);

        // θ = 1: (1 + Δt/ε) p = pⁿ + (Δt/ε) u c
        let prm = Parameters {
            theta: 1.0,
            dt: 0.5,
            epsilon: 0.2,
            ..Default::default()
        };
        let pn = constant(&m, 0.3);
        let u = constant(&m, 0.6);
        let c = constant(&m, 0.8);
        let out = step_p(&pn, &zero, &zero, &u, &c, &prm, &o).unwrap();
        assert_const(&out, (0.3 + 2.5 * 0.48) / 3.5, 1e-12);
    }

    #[test]
    fn decoupled_linear_regime_needs_two_passes() {
        let m = unit_mesh(2);
        let o = ops(&m);
        let prm = Parameters {
            chi: 0.0,
            mu: 1e-300,
            beta: 1.0,
            ..Default::default()
        };
        let s = SimState::new(0.0, constant(&m, 0.4), constant(&m, 0.9), constant(&m, 0.0)).unwrap();
        // p ≡ 0 initially but is produced by u c, so this is not fully decoupled;
        // with c ≡ 0 nothing couples and the second pass reproduces the first.
        let s0 = SimState::new(0.0, constant(&m, 0.4), constant(&m, 0.0), constant(&m, 0.2)).unwrap();
        match fixed_point_advance(&s0, &prm, &o).unwrap() {
            Advance::Committed(_, rep) => assert_eq!(rep.iterations, 2),
            Advance::Breakdown(b) => panic!("{:?}", b.reason),
        }
        match fixed_point_advance(&s, &prm, &o).unwrap() {
            Advance::Committed(_, rep) => assert!(rep.iterations > 2),
            Advance::Breakdown(b) => panic!("{:?}", b.reason),
        }
    }

    #[test]
    fn blowup_is_a_breakdown() {
        let m = unit_mesh(1);
        let o = ops(&m);
        let prm = Parameters {
            blowup_threshold: 1.0,
            ..Default::default()
        };
        let s = SimState::new(0.0, constant(&m, 2.0), constant(&m, 1.0), constant(&m, 0.0)).unwrap();
        match fixed_point_advance(&s, &prm, &o).unwrap() {
            Advance::Breakdown(b) => {
                assert!(matches!(b.reason, BreakdownReason::Blowup { field: "u", .. }));
                assert_eq!(b.report.iterations, 1);
            }
            Advance::Committed(..) => panic!("expected breakdown"),
        }
    }

    #[test]
    fn nonconvergence_reports_history() {
        let m = unit_mesh(1);
        let o = ops(&m);
        let prm = Parameters {
            max_fp_iters: 2,
            tol_fp: 1e-300,
            ..Default::default()
        };
        let s = SimState::new(0.0, constant(&m, 0.5), constant(&m, 1.0), constant(&m, 0.1)).unwrap();
        match fixed_point_advance(&s, &prm, &o) {
            Err(Error::NonConvergence { time, report }) => {
                assert_eq!(time, 1.0);
                assert_eq!(report.iterations, 2);
                assert_eq!(report.history.len(), 2);
                assert!(!report.converged);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_mesh_is_rejected() {
        let m = unit_mesh(1);
        let o = ops(&unit_mesh(2));
        let f = constant(&m, 1.0);
        assert!(step_c(&f, &f, &f, &Parameters::default(), &o).is_err());
    }

    #[test]
    fn masses_of_constants() {
        let m = Arc::new(build_structured_mesh(2, &[[0.0, 2.0], [0.0, 3.0]], &[2, 3], 1).unwrap());
        let o = ops(&m);
        let s = SimState::new(0.0, constant(&m, 1.0), constant(&m, 0.5), constant(&m, 0.0)).unwrap();
        let row = DiagnosticsRow::measure(&s, &o, 0, false);
        assert!((row.mass[0] - 6.0).abs() < 1e-12);
        assert!((row.mass[1] - 3.0).abs() < 1e-12);
        assert_eq!(row.mass[2], 0.0);
        assert!(!row.oscillation);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn constants_stay_constant(
            u in 0.0f64..1.5,
            c in 0.0f64..1.5,
            p in 0.0f64..1.5,
            theta in 0.5f64..=1.0,
            mu in 0.01f64..2.0,
            chi in 0.0f64..1.0,
        ) {
            let m = unit_mesh(3);
            let o = ops(&m);
            let prm = Parameters { theta, mu, chi, dt: 0.25, tol_fp: 1e-12, ..Default::default() };
            let s = SimState::new(0.0, constant(&m, u), constant(&m, c), constant(&m, p)).unwrap();
            match fixed_point_advance(&s, &prm, &o).unwrap() {
                Advance::Committed(next, _) => {
                    for f in next.fields() {
                        let (lo, hi) = (f.min(), f.max());
                        proptest::prop_assert!(hi - lo <= 10.0 * 1e-12 * hi.abs().max(1.0));
                    }
                }
                Advance::Breakdown(b) => proptest::prop_assert!(false, "{:?}", b.reason),
            }
        }
    }
}
