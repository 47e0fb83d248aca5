use haptosim::iocfg::{render_diagnostics_csv, DIAGNOSTICS_HEADER};
use haptosim::{parse_config, render_config, run, run_observed, BreakdownReason, InitialData, RunConfig};

fn small(extra: &str) -> RunConfig {
    parse_config(&format!(
        "domain_max = 5\nrefinements = 3\nt_final = 4\nsnapshots = 2, 4\n{extra}"
    ))
    .unwrap()
}

#[test]
fn zero_length_run_records_only_the_initial_level() {
    let mut cfg = small("");
    cfg.params.t_final = 0.0;
    cfg.snapshots = vec![0.0];
    let out = run(&cfg).unwrap();
    assert_eq!(out.diagnostics.rows.len(), 1);
    assert_eq!(out.diagnostics.rows[0].time, 0.0);
    assert!(out.reports.is_empty());
    assert_eq!(out.snapshots.len(), 1);
    let csv = render_diagnostics_csv(&out.diagnostics.rows);
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(csv.lines().next().unwrap(), DIAGNOSTICS_HEADER);
}

#[test]
fn run_visits_every_level_once_and_keeps_requested_snapshots() {
    let cfg = small("");
    let mut times = Vec::new();
    let out = run_observed(&cfg, |s, row| {
        assert_eq!(s.time, row.time);
        times.push(s.time);
    })
    .unwrap();
    assert_eq!(times, [0.0, 1.0, 2.0, 3.0, 4.0]);
    assert_eq!(out.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(), [2, 4]);
    assert_eq!(out.reports.len(), 4);
    assert!(out
        .reports
        .iter()
        .all(|r| r.converged && r.max_residual() < cfg.params.tol_fp));
    assert_eq!(out.final_state.time, 4.0);
    assert!(out.breakdown.is_none());
    assert_eq!(out.diagnostics.max_u_at(4.0), Some(out.final_state.u.max()));
}

#[test]
fn runs_are_bitwise_reproducible() {
    let cfg = small("chi = 0.5\n");
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.final_state.u.coeffs(), b.final_state.u.coeffs());
    assert_eq!(a.final_state.p.coeffs(), b.final_state.p.coeffs());
}

#[test]
fn rendered_configuration_reproduces_the_run() {
    let cfg = small("chi = 0.3\ntheta = 1\ninitial = gaussian 1 0.5 0.5 0 2\n");
    let back = parse_config(&render_config(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let a = run(&cfg).unwrap();
    let b = run(&back).unwrap();
    assert_eq!(a.final_state.c.coeffs(), b.final_state.c.coeffs());
}

#[test]
fn blowup_stops_the_run_with_a_flagged_level() {
    let mut cfg = small("blowup_threshold = 0.5\n");
    cfg.initial = InitialData::Constant { u: 0.4, c: 1.0, p: 0.0 };
    let out = run(&cfg).unwrap();
    let b = out.breakdown.expect("logistic growth must cross 0.5");
    assert!(matches!(b.reason, BreakdownReason::Blowup { .. }), "{:?}", b.reason);
    let last = out.diagnostics.rows.last().unwrap();
    assert!(last.breakdown);
    assert_eq!(last.time, b.time);
    assert!(out.snapshots.last().unwrap().breakdown);
    // the state before breakdown is the last committed one
    assert!(out.final_state.time < b.time);
}

#[test]
fn persistent_undershoot_is_a_breakdown() {
    // coarse grid under-resolves the initial data and oscillates
    let cfg = parse_config("refinements = 3\nt_final = 10\nchi = 1.25\nmu = 0.01\n").unwrap();
    let out = run(&cfg).unwrap();
    let b = out.breakdown.expect("expected an undershoot breakdown");
    match b.reason {
        BreakdownReason::Undershoot { min_u, strikes } => {
            assert!(min_u < -cfg.params.undershoot_limit);
            assert_eq!(strikes, cfg.params.undershoot_strikes);
        }
        other => panic!("unexpected reason {other:?}"),
    }
    assert!(out.diagnostics.rows.iter().any(|r| r.oscillation));

    // disabling the strike rule lets the same run finish
    let mut relaxed = cfg.clone();
    relaxed.params.undershoot_strikes = 0;
    let out = run(&relaxed).unwrap();
    assert!(out.breakdown.is_none());
    assert_eq!(out.final_state.time, 10.0);
}

#[test]
fn nonconvergence_is_an_error_with_history() {
    let cfg = small("max_fp_iters = 2\n");
    match run(&cfg) {
        Err(haptosim::Error::NonConvergence { time, report }) => {
            assert_eq!(time, 1.0);
            assert_eq!(report.iterations, 2);
            assert_eq!(report.history.len(), 2);
            assert!(!report.converged);
        }
        other => panic!("expected nonconvergence, got {other:?}"),
    }
}

#[test]
fn three_dimensional_smoke_run() {
    let cfg = parse_config("dim = 3\ndomain_max = 2.5\nrefinements = 2\nt_final = 2\nchi = 1\nmu = 1\n").unwrap();
    let out = run(&cfg).unwrap();
    assert_eq!(out.final_state.u.coeffs().len(), 125);
    assert!(out.breakdown.is_none());
    let row = out.diagnostics.rows.last().unwrap();
    assert!(row.max.iter().chain(&row.min).all(|v| v.is_finite()));
}
