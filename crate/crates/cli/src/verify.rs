use std::path::Path;

use haptosim::fem::{element_mass, element_stiffness};
use haptosim::mesh::ElementGeometry;
use haptosim::verify::{
    constant_data_run, element_matrix_crosscheck, ode_oracle, order_study_params, scaling_equivalence,
    temporal_order_study, ORDER_STUDY_Y0,
};
use haptosim::{Error, InitialData, MeshSpec, Parameters, RunConfig};

use crate::args::{Suite, VerifyArgs};
use crate::failure::CliError;

/// Step sizes of the temporal order study.
pub const ORDER_DTS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

struct Check {
    name: String,
    value: f64,
    limit: f64,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
        }
    }

    fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

type Checks = Result<Vec<Check>, Error>;
type SuiteFn = Box<dyn Fn() -> Checks>;

fn element_suite() -> Checks {
    let report = element_matrix_crosscheck()?;
    let mut checks = vec![
        Check::at_most("element mass vs 5-point Gauss", report.mass, 1e-13),
        Check::at_most("element stiffness vs 5-point Gauss", report.stiffness, 1e-13),
        Check::at_most("element weighted mass vs 5-point Gauss", report.weighted_mass, 1e-13),
        Check::at_most("element haptotaxis vs 5-point Gauss", report.haptotaxis, 1e-13),
        Check::at_most("element product load vs 5-point Gauss", report.load_product, 1e-13),
    ];

    let unit = ElementGeometry::unit(2);
    let m = element_mass(&unit)?;
    let k = element_stiffness(&unit)?;
    // diagonal, edge neighbour, opposite corner
    let mut dev = 0.0f64;
    for (i, j, mv, kv) in [
        (0, 0, 1.0 / 9.0, 2.0 / 3.0),
        (0, 1, 1.0 / 18.0, -1.0 / 6.0),
        (0, 2, 1.0 / 36.0, -1.0 / 3.0),
    ] {
        dev = dev.max((m.get(i, j) - mv).abs()).max((k.get(i, j) - kv).abs());
    }
    checks.push(Check::at_most("unit square mass/stiffness vs exact", dev, 1e-14));

    let cube = element_mass(&ElementGeometry::unit(3))?;
    let dev = (0..8)
        .map(|i| ((0..8).map(|j| cube.get(i, j)).sum::<f64>() - 0.125).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("unit cube mass row sums vs 1/8", dev, 1e-14));
    Ok(checks)
}

fn ode_suite() -> Checks {
    let prm = order_study_params(0.5);
    let a = ode_oracle(&prm, ORDER_STUDY_Y0, 1.0, 10_000)?.end();
    let b = ode_oracle(&prm, ORDER_STUDY_Y0, 1.0, 20_000)?.end();
    let self_conv = (0..3).map(|k| ((a[k] - b[k]) / b[k]).abs()).fold(0.0, f64::max);

    let fine = Parameters { dt: 1e-3, ..prm };
    let got = constant_data_run(&fine, ORDER_STUDY_Y0, 1.0)?;
    let agree = (0..3).map(|k| (got[k] - b[k]).abs()).fold(0.0, f64::max);

    let zero = ode_oracle(&prm, [0.0, 0.7, 0.0], 1.0, 100)?.end();
    let equilibrium = (zero[0].abs()).max((zero[1] - 0.7).abs()).max(zero[2].abs());
    Ok(vec![
        Check::at_most("oracle self-convergence (relative)", self_conv, 1e-12),
        Check::at_most("scheme vs oracle, dt = 1e-3 on [0, 1]", agree, 1e-5),
        Check::at_most("oracle keeps the u = p = 0 equilibrium", equilibrium, 0.0),
    ])
}

fn order_suite(out: Option<&Path>) -> Checks {
    let mut checks = Vec::new();
    for (theta, expected) in [(0.5, 2.0), (1.0, 1.0)] {
        let study = temporal_order_study(theta, &ORDER_DTS, ORDER_STUDY_Y0)?;
        if let Some(dir) = out {
            study.write_csv(&dir.join(format!("order_theta_{theta}.csv")))?;
        }
        checks.push(Check::at_most(
            format!("theta = {theta}: |order - {expected}| (order {:.4})", study.order),
            (study.order - expected).abs(),
            0.1,
        ));
    }
    Ok(checks)
}

/// Paper baseline over `t ∈ [0, 10]`.
pub fn scaling_baseline() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.params.t_final = 10.0;
    cfg.snapshots.clear();
    cfg
}

fn scaling_suite() -> Checks {
    let baseline = scaling_equivalence(&scaling_baseline())?;

    let mut unit = scaling_baseline();
    unit.params.chi = 1.0;
    unit.params.epsilon = 1.0;
    unit.params.t_final = 3.0;
    unit.mesh.refinements = 3;
    let identical = scaling_equivalence(&unit)?;

    let single = RunConfig {
        // tight fixed-point tolerance so both sides reach their exact discrete solutions
        params: Parameters {
            dt: 0.5,
            t_final: 0.5,
            chi: 0.3,
            epsilon: 0.4,
            tol_fp: 1e-15,
            max_fp_iters: 500,
            tol_lin: 1e-14,
            ..Parameters::default()
        },
        mesh: MeshSpec {
            base_cells: vec![1],
            refinements: 0,
            domain_max: vec![1.0],
            ..MeshSpec::default()
        },
        initial: InitialData::Constant { u: 0.4, c: 0.9, p: 0.2 },
        snapshots: Vec::new(),
        ..RunConfig::default()
    };
    let single = scaling_equivalence(&single)?;
    Ok(vec![
        Check::at_most("scaling equivalence, baseline to t = 10", baseline.discrepancy, 1e-8),
        Check::at_most("scaling equivalence, chi = epsilon = 1", identical.discrepancy, 0.0),
        Check::at_most("scaling equivalence, one element one step", single.discrepancy, 1e-13),
    ])
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Other(Error::io(dir, e)))?;
    }
    let suites: Vec<(&str, SuiteFn)> = {
        let out = args.out.clone();
        let all: Vec<(&str, Suite, SuiteFn)> = vec![
            ("element", Suite::Element, Box::new(element_suite)),
            ("ode", Suite::Ode, Box::new(ode_suite)),
            ("order", Suite::Order, Box::new(move || order_suite(out.as_deref()))),
            ("scaling", Suite::Scaling, Box::new(scaling_suite)),
        ];
        all.into_iter()
            .filter(|(_, s, _)| args.suite == Suite::All || *s == args.suite)
            .map(|(n, _, f)| (n, f))
            .collect()
    };

    let mut failures = 0;
    for (name, suite) in suites {
        match suite() {
            Ok(checks) => {
                for c in checks {
                    let verdict = if c.passed() { "PASS" } else { "FAIL" };
                    println!("{verdict} [{name}] {}: {:.3e} (limit {:.1e})", c.name, c.value, c.limit);
                    if !c.passed() {
                        failures += 1;
                        eprintln!(
                            "tolerance violated: [{name}] {} = {:e} > {:e}",
                            c.name, c.value, c.limit
                        );
                    }
                }
            }
            Err(e) => {
                failures += 1;
                println!("FAIL [{name}] study aborted: {e}");
                eprintln!("study aborted: [{name}] {e}");
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Verification { count: failures });
    }
    Ok(())
}
