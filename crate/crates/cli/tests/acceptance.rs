//! Acceptance suite. Each test prints one `PASS`/`FAIL` line per criterion
//! and then asserts it. Run with `cargo test --test acceptance -- --nocapture`
//! to see the report lines.

use std::path::Path;
use std::process::Command;

use haptosim::verify::{element_matrix_crosscheck, scaling_equivalence, temporal_order_study, ORDER_STUDY_Y0};
use haptosim::{run, run_observed, RunConfig};

/// Relative tolerance on figure-caption maxima.
const CAPTION_REL_TOL: f64 = 0.01;
/// Undershoot that counts as breakdown evidence in C3.
const C3_UNDERSHOOT: f64 = -1e-3;
const C3_LATEST_ONSET: f64 = 5.0;
/// Ten times the fixed-point tolerance.
const C4_TOL: f64 = 1e-7;
const C5_ORDER_TOL: f64 = 0.1;
const C5_DTS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
const C6_TOL: f64 = 1e-13;
const C7_MONOTONE_TOL: f64 = 1e-7;
const C7_NONNEG_TOL: f64 = 1e-10;
const C9_MAX_PASSES: usize = 100;
const C9_RESIDUAL: f64 = 1e-8;
const C9_BETA_AGREEMENT: f64 = 1e-7;

const CAPTION_TIMES: [f64; 4] = [5.0, 15.0, 25.0, 35.0];

fn report(id: &str, passed: bool, detail: &str) {
    println!("{} {id}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{id} failed: {detail}");
}

/// 2D baseline on (0,20)^2 with a 32x32 grid and the paper initial data.
fn paper_2d(chi: f64, mu: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.params.chi = chi;
    cfg.params.mu = mu;
    cfg.snapshots = CAPTION_TIMES.to_vec();
    cfg
}

fn caption_check(id: &str, chi: f64, mu: f64, expected: [f64; 4]) {
    let mut cfg = paper_2d(chi, mu);
    cfg.params.t_final = 35.0;
    let out = run(&cfg).expect("run failed");
    assert!(out.breakdown.is_none(), "{id}: unexpected breakdown");
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (t, want) in CAPTION_TIMES.iter().zip(expected) {
        let got = out.diagnostics.max_u_at(*t).expect("snapshot time not reached");
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        cells.push(format!("t={t}: {got:.6} vs {want}"));
    }
    report(
        id,
        worst <= CAPTION_REL_TOL,
        &format!(
            "chi={chi} mu={mu:?}: {}; worst rel dev {worst:.2e} (tol {CAPTION_REL_TOL:e})",
            cells.join(", ")
        ),
    );
}

#[test]
fn c1_caption_mu_sweep() {
    caption_check("C1", 0.01, 1e-10, [0.3106, 0.1348, 0.08619, 0.06333]);
}

#[test]
fn c2_caption_chi_sweep_low() {
    caption_check("C2a", 0.25, 0.01, [0.1788, 0.07284, 0.04968, 0.03984]);
}

#[test]
fn c2_caption_chi_sweep_high() {
    caption_check("C2b", 0.75, 0.01, [0.1018, 0.03925, 0.02622, 0.02060]);
}

#[test]
fn c3_breakdown_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c125");
    let status = Command::new(env!("CARGO_BIN_EXE_haptosim"))
        .args(["run", "-q", "--set", "chi=1.25", "--set", "mu=0.01", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    let csv = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // columns: time, max_u, min_u, ..., breakdown
    let onset = rows
        .iter()
        .find(|r| r[2] < C3_UNDERSHOOT || r[1..10].iter().any(|v| !v.is_finite()))
        .map(|r| r[0]);
    let last = rows.last().unwrap();
    let stopped_at = last[0];
    let flagged = last[11] == 1.0;
    let code = status.code();
    let passed = code == Some(3) && flagged && stopped_at < 50.0 && onset.is_some_and(|t| t <= C3_LATEST_ONSET);
    report(
        "C3",
        passed,
        &format!(
            "exit code {code:?} (want 3), first undershoot < {C3_UNDERSHOOT:e} at t={onset:?} (want <= {C3_LATEST_ONSET}), \
             stopped at t={stopped_at}, breakdown flagged {flagged}"
        ),
    );
    assert!(Path::new(&out).read_dir().unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with("breakdown_")));
}

#[test]
fn c4_scaling_equivalence() {
    let mut cfg = RunConfig::default();
    cfg.params.t_final = 10.0;
    cfg.snapshots.clear();
    let r = scaling_equivalence(&cfg).unwrap();
    report(
        "C4",
        r.discrepancy <= C4_TOL,
        &format!(
            "max nodal difference over t in [0,10]: {:.3e} (tol {C4_TOL:e})",
            r.discrepancy
        ),
    );
}

#[test]
fn c5_temporal_order() {
    let half = temporal_order_study(0.5, &C5_DTS, ORDER_STUDY_Y0).unwrap();
    let full = temporal_order_study(1.0, &C5_DTS, ORDER_STUDY_Y0).unwrap();
    let passed = (half.order - 2.0).abs() <= C5_ORDER_TOL && (full.order - 1.0).abs() <= C5_ORDER_TOL;
    report(
        "C5",
        passed,
        &format!(
            "order {:.4} for theta=0.5 (want 2), {:.4} for theta=1 (want 1), tol {C5_ORDER_TOL}",
            half.order, full.order
        ),
    );
}

#[test]
fn c6_element_exactness() {
    let r = element_matrix_crosscheck().unwrap();
    let dev = r.max_deviation();
    report(
        "C6",
        r.elements >= 100 && dev <= C6_TOL,
        &format!(
            "{} random elements (2D and 3D), max deviation {dev:.3e} (tol {C6_TOL:e})",
            r.elements
        ),
    );
}

#[test]
fn c7_invariant_monitors() {
    let cfg = RunConfig::default();
    let out = run(&cfg).unwrap();
    let rows = &out.diagnostics.rows;
    let c0 = rows[0].max[1];
    let worst_rise = rows
        .windows(2)
        .map(|w| w[1].max[1] - w[0].max[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_excess = rows.iter().map(|r| r.max[1] - c0).fold(f64::NEG_INFINITY, f64::max);
    let min_c = rows.iter().map(|r| r.min[1]).fold(f64::INFINITY, f64::min);
    let min_p = rows.iter().map(|r| r.min[2]).fold(f64::INFINITY, f64::min);
    let passed = worst_rise <= C7_MONOTONE_TOL
        && worst_excess <= C7_MONOTONE_TOL
        && min_c >= -C7_NONNEG_TOL
        && min_p >= -C7_NONNEG_TOL;
    report(
        "C7",
        passed,
        &format!(
            "largest per-step rise of max c {worst_rise:.3e}, max c - max c0 {worst_excess:.3e} (tol {C7_MONOTONE_TOL:e}); \
             min c {min_c:.3e}, min p {min_p:.3e} (floor -{C7_NONNEG_TOL:e})"
        ),
    );
}

#[test]
fn c8_three_dimensional_completion() {
    let mut cfg = RunConfig::default();
    cfg.mesh.dim = 3;
    cfg.params.chi = 1.0;
    cfg.params.mu = 1.0;
    cfg.params.t_final = 35.0;
    cfg.snapshots.clear();
    let start = std::time::Instant::now();
    let out = run(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let last = out.diagnostics.rows.last().unwrap();
    let volume = out.final_state.u.mesh().volume();
    let (mean_u, mean_c) = (last.mass[0] / volume, last.mass[1] / volume);
    let passed = out.breakdown.is_none() && (last.time - 35.0).abs() < 1e-9 && mean_u > mean_c;
    report(
        "C8",
        passed,
        &format!(
            "32^3 run reached t={} breakdown={}; mean u {mean_u:.4} vs mean c {mean_c:.4}; {elapsed:.0} s",
            last.time,
            out.breakdown.is_some()
        ),
    );
}

/// Committed coefficient vectors at every step.
fn trajectory(cfg: &RunConfig) -> (Vec<Vec<f64>>, usize, f64, bool) {
    let mut states = Vec::new();
    let out = run_observed(cfg, |s, _| {
        let mut v = s.u.coeffs().to_vec();
        v.extend_from_slice(s.c.coeffs());
        v.extend_from_slice(s.p.coeffs());
        states.push(v);
    })
    .unwrap();
    let passes = out.reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    let residual = out.reports.iter().map(|r| r.max_residual()).fold(0.0, f64::max);
    let converged = out.breakdown.is_none() && out.reports.iter().all(|r| r.converged);
    (states, passes, residual, converged)
}

#[test]
fn c9_fixed_point_robustness() {
    let configs = [
        (0.01, 1e-10),
        (0.01, 0.5),
        (0.01, 1.0),
        (0.25, 0.01),
        (0.75, 0.01),
        (1.0, 1.0),
    ];
    let mut all = true;
    let mut lines = Vec::new();
    for (chi, mu) in configs {
        let mut cfg = paper_2d(chi, mu);
        cfg.snapshots.clear();
        cfg.params.max_fp_iters = C9_MAX_PASSES;
        let (a, pa, ra, ca) = trajectory(&cfg);
        cfg.params.beta = 0.25;
        let (b, pb, rb, cb) = trajectory(&cfg);
        let gap = a
            .iter()
            .zip(&b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        let ok = ca
            && cb
            && a.len() == b.len()
            && pa.max(pb) <= C9_MAX_PASSES
            && ra.max(rb) < C9_RESIDUAL
            && gap <= C9_BETA_AGREEMENT;
        all &= ok;
        lines.push(format!(
            "chi={chi} mu={mu:?}: passes {pa}/{pb}, residual {:.1e}, beta gap {gap:.1e}",
            ra.max(rb)
        ));
    }
    report(
        "C9",
        all,
        &format!(
            "{} (limits: {C9_MAX_PASSES} passes, residual {C9_RESIDUAL:e}, gap {C9_BETA_AGREEMENT:e})",
            lines.join("; ")
        ),
    );
}
