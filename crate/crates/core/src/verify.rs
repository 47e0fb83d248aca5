//! Independent oracles and study harnesses.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{self, ElementMatrix};
use crate::iocfg::{MeshSpec, RunConfig};
use crate::mesh::{build_structured_mesh, local_vertices, ElementGeometry};
use crate::model::{rescale_to_unit_chi_eps, InitialData, Parameters, SimState};
use crate::stepper::{advance_to, run, Advance, Operators};

/// Scalar trajectory of the spatially constant reduction
/// `u' = μu(1−u)`, `c' = −pc`, `p' = (uc − p)/ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub substeps: usize,
}

impl OdeTrajectory {
    pub fn end(&self) -> [f64; 3] {
        *self.states.last().expect("trajectory holds the initial state")
    }
}

fn rhs(prm: &Parameters, y: [f64; 3]) -> [f64; 3] {
    let [u, c, p] = y;
    [prm.mu * u * (1.0 - u), -p * c, (u * c - p) / prm.epsilon]
}

/// Classical RK4 with `substeps` uniform steps on `[0, t_end]`.
pub fn ode_oracle(params: &Parameters, y0: [f64; 3], t_end: f64, substeps: usize) -> Result<OdeTrajectory> {
    if substeps == 0 {
        return Err(Error::Input("ode_oracle needs at least one substep".into()));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::Input(format!("invalid end time {t_end}")));
    }
    let h = t_end / substeps as f64;
    let mut y = y0;
    let mut times = vec![0.0];
    let mut states = vec![y];
    let add = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    for i in 1..=substeps {
        let k1 = rhs(params, y);
        let k2 = rhs(params, add(y, k1, h / 2.0));
        let k3 = rhs(params, add(y, k2, h / 2.0));
        let k4 = rhs(params, add(y, k3, h));
        for j in 0..3 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Verification(format!(
                "ODE oracle produced non-finite state at substep {i}"
            )));
        }
        times.push(i as f64 * h);
        states.push(y);
    }
    Ok(OdeTrajectory {
        times,
        states,
        substeps,
    })
}

/// Integrate one step of the scheme on a single element with spatially
/// constant data and return the nodal value at `t_end`.
pub fn constant_data_run(params: &Parameters, y0: [f64; 3], t_end: f64) -> Result<[f64; 3]> {
    let n = crate::model::steps_to(t_end, params.dt)
        .ok_or_else(|| Error::Input(format!("t_end = {t_end} is not a multiple of dt = {}", params.dt)))?;
    let dim = 2;
    let mesh = Arc::new(build_structured_mesh(dim, &[[0.0, 1.0], [0.0, 1.0]], &[1, 1], 0)?);
    let ops = Operators::new(Arc::clone(&mesh), params.tol_lin)?;
    let data = InitialData::Constant {
        u: y0[0],
        c: y0[1],
        p: y0[2],
    };
    let (mut state, _) = SimState::initial(&mesh, &data)?;
    for step in 1..=n {
        match advance_to(&state, step as f64 * params.dt, params, &ops)? {
            Advance::Committed(next, _) => state = next,
            Advance::Breakdown(b) => {
                return Err(Error::Verification(format!(
                    "constant-data run broke down: {}",
                    b.reason
                )))
            }
        }
    }
    Ok([state.u.coeffs()[0], state.c.coeffs()[0], state.p.coeffs()[0]])
}

/// One row of an order study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderPoint {
    pub dt: f64,
    pub error: f64,
    /// Slope to the previous (larger) step size; `None` for the first row.
    pub local_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub theta: f64,
    pub points: Vec<OrderPoint>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

impl OrderStudy {
    /// CSV with columns `dt,error,estimated_order`; the fitted order goes on every row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dt,error,estimated_order\n");
        for p in &self.points {
            let _ = writeln!(s, "{:?},{:?},{:?}", p.dt, p.error, self.order);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Defaults for the order study: paper reaction parameters over `t ∈ [0, 1]`.
pub fn order_study_params(theta: f64) -> Parameters {
    Parameters {
        theta,
        mu: 1.0,
        epsilon: 0.2,
        t_final: 1.0,
        tol_fp: 1e-13,
        max_fp_iters: 500,
        tol_lin: 1e-14,
        ..Parameters::default()
    }
}

pub const ORDER_STUDY_Y0: [f64; 3] = [0.2, 1.0, 0.5];

/// Endpoint errors in ℓ∞ over components against [`ode_oracle`].
pub fn temporal_order_study(theta: f64, dts: &[f64], y0: [f64; 3]) -> Result<OrderStudy> {
    if dts.len() < 2 {
        return Err(Error::Input("order study needs at least two step sizes".into()));
    }
    for w in dts.windows(2) {
        if !(w[0] > 0.0 && w[1] > 0.0) || (w[0] - w[1]).abs() <= 1e-14 * w[0].abs() {
            return Err(Error::Input(format!(
                "step sizes must be positive and distinct, got {dts:?}"
            )));
        }
    }
    let base = order_study_params(theta);
    let t_end = base.t_final;
    let exact = ode_oracle(&base, y0, t_end, 20_000)?.end();
    let mut points: Vec<OrderPoint> = Vec::with_capacity(dts.len());
    for &dt in dts {
        let prm = Parameters { dt, ..base };
        let got = constant_data_run(&prm, y0, t_end).map_err(|e| match e {
            Error::NonConvergence { time, .. } => {
                Error::Verification(format!("fixed point failed at t = {time} with dt = {dt}"))
            }
            other => other,
        })?;
        let error = (0..3).map(|k| (got[k] - exact[k]).abs()).fold(0.0, f64::max);
        let local_order = points
            .last()
            .map(|prev| (prev.error / error).ln() / (prev.dt / dt).ln());
        points.push(OrderPoint { dt, error, local_order });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.dt.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let order = least_squares_slope(&xs, &ys);
    if !order.is_finite() {
        return Err(Error::Verification(format!(
            "order fit is not finite (errors {:?})",
            ys
        )));
    }
    Ok(OrderStudy { theta, points, order })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Max absolute nodal difference over fields and compared levels.
    pub discrepancy: f64,
    /// Per compared time (original units): max difference.
    pub per_time: Vec<(f64, f64)>,
}

/// Run `config` and its `χ = ε = 1` transform side by side and compare every
/// time level after mapping back to the original variables.
pub fn scaling_equivalence(config: &RunConfig) -> Result<ScalingReport> {
    config.validate()?;
    let prm = &config.params;
    let extents = config.mesh.extents();
    let scaled = rescale_to_unit_chi_eps(prm, &extents, &config.initial)?;

    let mut original = config.clone();
    original.vtk_every = 1;
    original.out_dir = None;
    let mut transformed = original.clone();
    transformed.params = scaled.params;
    transformed.initial = scaled.initial.clone();
    transformed.snapshots = Vec::new();
    let (lo, hi): (Vec<f64>, Vec<f64>) = scaled.extents.iter().map(|e| (e[0], e[1])).unzip();
    transformed.mesh = MeshSpec {
        domain_min: lo,
        domain_max: hi,
        ..config.mesh.clone()
    };

    let a = run(&original)?;
    let b = run(&transformed)?;
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::Verification(format!(
            "runs produced {} vs {} levels (breakdown in one of them?)",
            a.snapshots.len(),
            b.snapshots.len()
        )));
    }
    let mesh_a = a.final_state.mesh();
    if mesh_a.cells_per_axis() != b.final_state.mesh().cells_per_axis() {
        return Err(Error::Input("scaling equivalence needs identical grid topology".into()));
    }
    let mut per_time = Vec::new();
    let mut worst = 0.0f64;
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        let restored = scaled.restore_state(&sb.state, mesh_a)?;
        let mut d = 0.0f64;
        for (fa, fb) in sa.state.fields().iter().zip(restored.fields()) {
            for (x, y) in fa.coeffs().iter().zip(fb.coeffs()) {
                d = d.max((x - y).abs());
            }
        }
        per_time.push((sa.state.time, d));
        worst = worst.max(d);
    }
    Ok(ScalingReport {
        discrepancy: worst,
        per_time,
    })
}

/// Maximum deviation of each element form from the independent oracle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrosscheckReport {
    pub elements: usize,
    pub mass: f64,
    pub stiffness: f64,
    pub weighted_mass: f64,
    pub haptotaxis: f64,
    pub load_product: f64,
}

impl CrosscheckReport {
    pub fn max_deviation(&self) -> f64 {
        [
            self.mass,
            self.stiffness,
            self.weighted_mass,
            self.haptotaxis,
            self.load_product,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn merge(&mut self, other: &CrosscheckReport) {
        self.elements += other.elements;
        self.mass = self.mass.max(other.mass);
        self.stiffness = self.stiffness.max(other.stiffness);
        self.weighted_mass = self.weighted_mass.max(other.weighted_mass);
        self.haptotaxis = self.haptotaxis.max(other.haptotaxis);
        self.load_product = self.load_product.max(other.load_product);
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x.push(0.5 * (1.0 - z));
        w.push(1.0 / ((1.0 - z * z) * dp * dp));
    }
    (x, w)
}

/// Physical-coordinate Q1 basis: values and gradients at `x` in the element.
fn oracle_basis(geom: &ElementGeometry, x: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let d = geom.dim;
    let verts = local_vertices(d);
    let mut vals = Vec::with_capacity(verts.len());
    let mut grads = Vec::with_capacity(verts.len());
    for v in verts {
        // 1D hat on each axis: (x − a)/h towards the upper vertex, (b − x)/h towards the lower one
        let mut f = [0.0; 3];
        let mut df = [0.0; 3];
        for k in 0..d {
            let (a, h) = (geom.origin[k], geom.size[k]);
            if v[k] == 1 {
                f[k] = (x[k] - a) / h;
                df[k] = 1.0 / h;
            } else {
                f[k] = (a + h - x[k]) / h;
                df[k] = -1.0 / h;
            }
        }
        let mut value = 1.0;
        for k in 0..d {
            value *= f[k];
        }
        let mut g = [0.0; 3];
        for k in 0..d {
            let mut prod = df[k];
            for m in 0..d {
                if m != k {
                    prod *= f[m];
                }
            }
            g[k] = prod;
        }
        vals.push(value);
        grads.push(g);
    }
    (vals, grads)
}

struct OracleForms {
    mass: ElementMatrix,
    stiffness: ElementMatrix,
    weighted: ElementMatrix,
    hapto: ElementMatrix,
    load: Vec<f64>,
}

fn oracle_forms(geom: &ElementGeometry, w: &[f64], c: &[f64], a: &[f64], b: &[f64]) -> OracleForms {
    let d = geom.dim;
    let n = 1 << d;
    let (xs, ws) = gauss_legendre_unit(5);
    let mut mass = vec![vec![0.0; n]; n];
    let mut stiff = vec![vec![0.0; n]; n];
    let mut weighted = vec![vec![0.0; n]; n];
    let mut hapto = vec![vec![0.0; n]; n];
    let mut load = vec![0.0; n];
    let vol = geom.volume();
    let total = 5usize.pow(d as u32);
    for q in 0..total {
        let mut idx = q;
        let mut x = [0.0; 3];
        let mut weight = vol;
        for k in 0..d {
            let i = idx % 5;
            idx /= 5;
            x[k] = geom.origin[k] + geom.size[k] * xs[i];
            weight *= ws[i];
        }
        let (phi, grad) = oracle_basis(geom, &x);
        let interp = |v: &[f64]| phi.iter().zip(v).map(|(p, c)| p * c).sum::<f64>();
        let wq = interp(w);
        let abq = interp(a) * interp(b);
        let mut gc = [0.0; 3];
        for (g, ci) in grad.iter().zip(c) {
            for k in 0..d {
                gc[k] += g[k] * ci;
            }
        }
        for j in 0..n {
            load[j] += weight * abq * phi[j];
            for i in 0..n {
                let gg: f64 = (0..d).map(|k| grad[i][k] * grad[j][k]).sum();
                let cg: f64 = (0..d).map(|k| gc[k] * grad[j][k]).sum();
                mass[j][i] += weight * phi[i] * phi[j];
                stiff[j][i] += weight * gg;
                weighted[j][i] += weight * wq * phi[i] * phi[j];
                hapto[j][i] += weight * phi[i] * cg;
            }
        }
    }
    OracleForms {
        mass: ElementMatrix::from_rows(&mass),
        stiffness: ElementMatrix::from_rows(&stiff),
        weighted: ElementMatrix::from_rows(&weighted),
        hapto: ElementMatrix::from_rows(&hapto),
        load,
    }
}

/// Compare element forms on `count` random elements per dimension (2D and 3D)
/// with random nodal coefficient fields.
pub fn element_matrix_crosscheck_with(count: usize, seed: u64) -> Result<CrosscheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = CrosscheckReport::default();
    for dim in [2usize, 3] {
        let n = 1 << dim;
        for _ in 0..count {
            let origin: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let size: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..2.0)).collect();
            let geom = ElementGeometry::new(dim, &origin, &size)?;
            let mut field = || -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let (w, c, a, b) = (field(), field(), field(), field());
            let oracle = oracle_forms(&geom, &w, &c, &a, &b);
            let load = fem::element_load_product(&geom, &a, &b)?;
            let load_dev = load
                .iter()
                .zip(&oracle.load)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            total.merge(&CrosscheckReport {
                elements: 1,
                mass: fem::element_mass(&geom)?.max_abs_diff(&oracle.mass),
                stiffness: fem::element_stiffness(&geom)?.max_abs_diff(&oracle.stiffness),
                weighted_mass: fem::element_weighted_mass(&geom, &w)?.max_abs_diff(&oracle.weighted),
                haptotaxis: fem::element_haptotaxis(&geom, &c)?.max_abs_diff(&oracle.hapto),
                load_product: load_dev,
            });
        }
    }
    Ok(total)
}

/// 50 random elements in each of 2D and 3D with a fixed seed.
pub fn element_matrix_crosscheck() -> Result<CrosscheckReport> {
    element_matrix_crosscheck_with(50, 0x5eed)
}
