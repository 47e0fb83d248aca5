//! Model parameters, initial data and exact transformations of the system
//!
//! ```text
//!   u_t = (1/α) Δu − χ ∇·(u ∇c) + μ u (1 − u)
//!   c_t = −p c
//!   p_t = (u c − p) / ε
//! ```
//!
//! with the zero-flux condition `(1/α) ∂_ν u = χ u ∂_ν c` on the boundary.
//! The boundary condition is natural for the weak form and never appears
//! explicitly in the discrete scheme.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{interpolate, FeField, StructuredMesh};

/// Model and scheme constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parameters {
    /// Inverse diffusivity: `Δu` is multiplied by `1/alpha`.
    pub alpha: f64,
    /// Haptotactic sensitivity.
    pub chi: f64,
    /// Logistic proliferation rate.
    pub mu: f64,
    /// Protease time scale.
    pub epsilon: f64,
    /// Time-stepping parameter; 0.5 is Crank–Nicolson, 1 implicit Euler.
    pub theta: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Relaxation factor of the fixed-point iteration.
    pub beta: f64,
    pub tol_fp: f64,
    pub max_fp_iters: usize,
    pub tol_lin: f64,
    /// A run breaks down once any coefficient exceeds this in magnitude.
    pub blowup_threshold: f64,
    /// Undershoot of u that counts as an oscillation strike.
    pub undershoot_limit: f64,
    /// A run breaks down at the time level where the strike count reaches
    /// this value; 0 disables the check. A single strike is tolerated
    /// because a Crank–Nicolson start from steep data can undershoot once
    /// and recover.
    pub undershoot_strikes: usize,
    /// Start every step with β = 1 and halve it whenever the residual grows.
    pub backtracking: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            alpha: 10.0,
            chi: 0.01,
            mu: 0.5,
            epsilon: 0.2,
            theta: 0.5,
            dt: 1.0,
            t_final: 50.0,
            beta: 0.5,
            tol_fp: 1e-8,
            max_fp_iters: 100,
            tol_lin: 1e-12,
            blowup_threshold: 1e6,
            undershoot_limit: 1e-3,
            undershoot_strikes: 2,
            backtracking: false,
        }
    }
}

impl Parameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("epsilon", self.epsilon),
            ("dt", self.dt),
            ("tol_fp", self.tol_fp),
            ("tol_lin", self.tol_lin),
            ("blowup_threshold", self.blowup_threshold),
            ("undershoot_limit", self.undershoot_limit),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return Err(Error::config("chi", format!("must be ≥ 0, got {}", self.chi)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::config("t_final", format!("must be ≥ 0, got {}", self.t_final)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(
                "theta",
                format!("must lie in [0, 1], got {}", self.theta),
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta", format!("must lie in (0, 1], got {}", self.beta)));
        }
        if self.max_fp_iters == 0 {
            return Err(Error::config("max_fp_iters", "must be at least 1"));
        }
        self.step_count()?;
        Ok(())
    }

    /// Number of uniform steps `T / Δt`; `T` must be a multiple of `Δt`.
    pub fn step_count(&self) -> Result<usize> {
        steps_to(self.t_final, self.dt).ok_or_else(|| {
            Error::config(
                "t_final",
                format!("{} is not a multiple of dt = {}", self.t_final, self.dt),
            )
        })
    }
}

/// `Some(n)` when `t ≈ n·dt` to 1e-12 relative.
pub(crate) fn steps_to(t: f64, dt: f64) -> Option<usize> {
    let n = (t / dt).round();
    if n < 0.0 || !n.is_finite() {
        return None;
    }
    ((n * dt - t).abs() <= 1e-12 * t.abs().max(1.0)).then_some(n as usize)
}

type PointFn = Arc<dyn Fn(&[f64]) -> [f64; 3] + Send + Sync>;

/// Initial data `(u₀, c₀, p₀)`.
#[derive(Clone)]
pub enum InitialData {
    /// With `g(x) = exp(−|x|² / width²)`:
    /// `u₀ = u_amp·g`, `c₀ = c_base − c_amp·g`, `p₀ = p_amp·g`.
    Gaussian {
        u_amp: f64,
        c_base: f64,
        c_amp: f64,
        p_amp: f64,
        width: f64,
    },
    Constant {
        u: f64,
        c: f64,
        p: f64,
    },
    /// Arbitrary pointwise functions.
    Custom(PointFn),
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Gaussian {
                u_amp,
                c_base,
                c_amp,
                p_amp,
                width,
            } => f
                .debug_struct("Gaussian")
                .field("u_amp", u_amp)
                .field("c_base", c_base)
                .field("c_amp", c_amp)
                .field("p_amp", p_amp)
                .field("width", width)
                .finish(),
            InitialData::Constant { u, c, p } => f
                .debug_struct("Constant")
                .field("u", u)
                .field("c", c)
                .field("p", p)
                .finish(),
            InitialData::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for InitialData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                InitialData::Gaussian {
                    u_amp: a1,
                    c_base: b1,
                    c_amp: c1,
                    p_amp: d1,
                    width: w1,
                },
                InitialData::Gaussian {
                    u_amp: a2,
                    c_base: b2,
                    c_amp: c2,
                    p_amp: d2,
                    width: w2,
                },
            ) => a1 == a2 && b1 == b2 && c1 == c2 && d1 == d2 && w1 == w2,
            (InitialData::Constant { u: a, c: b, p: d }, InitialData::Constant { u: x, c: y, p: z }) => {
                a == x && b == y && d == z
            }
            (InitialData::Custom(f), InitialData::Custom(g)) => Arc::ptr_eq(f, g),
            _ => false,
        }
    }
}

/// `u₀ = e^{−|x|²}`, `c₀ = 1 − ½e^{−|x|²}`, `p₀ = ½e^{−|x|²}`: a small
/// tumour at the origin corner of the domain.
pub fn paper_initial_data() -> InitialData {
    InitialData::Gaussian {
        u_amp: 1.0,
        c_base: 1.0,
        c_amp: 0.5,
        p_amp: 0.5,
        width: 1.0,
    }
}

impl InitialData {
    pub fn is_paper(&self) -> bool {
        *self == paper_initial_data()
    }

    pub fn eval(&self, x: &[f64]) -> [f64; 3] {
        match self {
            InitialData::Gaussian {
                u_amp,
                c_base,
                c_amp,
                p_amp,
                width,
            } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let g = (-r2 / (width * width)).exp();
                [u_amp * g, c_base - c_amp * g, p_amp * g]
            }
            InitialData::Constant { u, c, p } => [*u, *c, *p],
            InitialData::Custom(f) => f(x),
        }
    }

    /// Nodal interpolation of the three fields.
    ///
    /// Negative nodal values are reported as warnings rather than errors.
    pub fn interpolate(&self, mesh: &Arc<StructuredMesh>) -> Result<([FeField; 3], Vec<String>)> {
        let names = ["u0", "c0", "p0"];
        let u = interpolate(|x| self.eval(x)[0], mesh)?;
        let c = interpolate(|x| self.eval(x)[1], mesh)?;
        let p = interpolate(|x| self.eval(x)[2], mesh)?;
        let mut warnings = Vec::new();
        for (name, f) in names.iter().zip([&u, &c, &p]) {
            let min = f.min();
            if min < 0.0 {
                warnings.push(format!("initial {name} is negative at some node (min {min:e})"));
            }
        }
        Ok(([u, c, p], warnings))
    }
}

/// The three fields at one time level.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub u: FeField,
    pub c: FeField,
    pub p: FeField,
}

impl SimState {
    pub fn new(time: f64, u: FeField, c: FeField, p: FeField) -> Result<Self> {
        u.check_same_mesh(&c)?;
        u.check_same_mesh(&p)?;
        if !(time >= 0.0) {
            return Err(Error::Input(format!("state time must be ≥ 0, got {time}")));
        }
        Ok(SimState { time, u, c, p })
    }

    pub fn initial(mesh: &Arc<StructuredMesh>, data: &InitialData) -> Result<(Self, Vec<String>)> {
        let ([u, c, p], warnings) = data.interpolate(mesh)?;
        Ok((SimState { time: 0.0, u, c, p }, warnings))
    }

    pub fn mesh(&self) -> &Arc<StructuredMesh> {
        self.u.mesh()
    }

    pub fn fields(&self) -> [&FeField; 3] {
        [&self.u, &self.c, &self.p]
    }
}

/// Result of mapping a problem onto one with `χ = ε = 1`.
///
/// The transformed solution relates to the original through
/// `(u, c, p)(x, t) = (ũ, c̃/ε, p̃/ε)(x/√χ, t/ε)`.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub params: Parameters,
    pub extents: Vec<[f64; 2]>,
    pub initial: InitialData,
    /// Original χ and ε, needed to map results back.
    pub chi: f64,
    pub epsilon: f64,
}

impl Rescaled {
    /// Length scale `1/√χ` applied to coordinates.
    pub fn space_factor(&self) -> f64 {
        1.0 / self.chi.sqrt()
    }

    /// Time scale `1/ε` applied to times (and the step size).
    pub fn time_factor(&self) -> f64 {
        1.0 / self.epsilon
    }

    pub fn map_time(&self, t: f64) -> f64 {
        t / self.epsilon
    }

    /// Original-problem nodal values from transformed ones: `(ũ, c̃/ε, p̃/ε)`.
    pub fn restore_values(&self, v: [f64; 3]) -> [f64; 3] {
        [v[0], v[1] / self.epsilon, v[2] / self.epsilon]
    }

    /// Map a transformed state back to the original variables, onto `mesh`
    /// (which must have the same topology).
    pub fn restore_state(&self, state: &SimState, mesh: &Arc<StructuredMesh>) -> Result<SimState> {
        if mesh.node_count() != state.mesh().node_count() || mesh.cells_per_axis() != state.mesh().cells_per_axis() {
            return Err(Error::Input("restore_state needs meshes of identical topology".into()));
        }
        let scale = |f: &FeField, s: f64| FeField::new(Arc::clone(mesh), f.coeffs().iter().map(|v| v * s).collect());
        SimState::new(
            state.time * self.epsilon,
            scale(&state.u, 1.0)?,
            scale(&state.c, 1.0 / self.epsilon)?,
            scale(&state.p, 1.0 / self.epsilon)?,
        )
    }

    /// Parameters of the original problem recovered from the transformed ones.
    pub fn restore_params(&self) -> Parameters {
        Parameters {
            alpha: self.params.alpha * self.epsilon / self.chi,
            chi: self.chi,
            mu: self.params.mu / self.epsilon,
            epsilon: self.epsilon,
            dt: self.params.dt * self.epsilon,
            t_final: self.params.t_final * self.epsilon,
            ..self.params
        }
    }
}

/// `α̃ = αχ/ε, χ̃ = 1, μ̃ = εμ, ε̃ = 1` on `Ω/√χ`, with `Δt̃ = Δt/ε` and
/// `ũ₀(x̃) = u₀(√χ x̃)`, `c̃₀ = ε c₀(√χ x̃)`, `p̃₀ = ε p₀(√χ x̃)`.
pub fn rescale_to_unit_chi_eps(params: &Parameters, extents: &[[f64; 2]], initial: &InitialData) -> Result<Rescaled> {
    let (chi, eps) = (params.chi, params.epsilon);
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(Error::config("chi", "rescaling requires chi > 0"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("epsilon", "rescaling requires epsilon > 0"));
    }
    let root = chi.sqrt();
    let new_params = Parameters {
        alpha: params.alpha * chi / eps,
        chi: 1.0,
        mu: eps * params.mu,
        epsilon: 1.0,
        dt: params.dt / eps,
        t_final: params.t_final / eps,
        ..*params
    };
    let new_extents = extents.iter().map(|[lo, hi]| [lo / root, hi / root]).collect();
    let new_initial = match initial {
        InitialData::Gaussian {
            u_amp,
            c_base,
            c_amp,
            p_amp,
            width,
        } => InitialData::Gaussian {
            u_amp: *u_amp,
            c_base: eps * c_base,
            c_amp: eps * c_amp,
            p_amp: eps * p_amp,
            width: width / root,
        },
        InitialData::Constant { u, c, p } => InitialData::Constant {
            u: *u,
            c: eps * c,
            p: eps * p,
        },
        InitialData::Custom(f) => {
            let f = Arc::clone(f);
            InitialData::Custom(Arc::new(move |x: &[f64]| {
                let scaled: Vec<f64> = x.iter().map(|v| v * root).collect();
                let [u, c, p] = f(&scaled);
                [u, eps * c, eps * p]
            }))
        }
    };
    Ok(Rescaled {
        params: new_params,
        extents: new_extents,
        initial: new_initial,
        chi,
        epsilon: eps,
    })
}

/// Nodal `w = u·e^{−αc}`.
pub fn w_diagnostic(u: &FeField, c: &FeField, alpha: f64) -> Result<FeField> {
    u.check_same_mesh(c)?;
    let w = u
        .coeffs()
        .iter()
        .zip(c.coeffs())
        .map(|(u, c)| u * (-alpha * c).exp())
        .collect();
    FeField::new(Arc::clone(u.mesh()), w)
}
