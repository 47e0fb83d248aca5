use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::mesh::{build_structured_mesh, StructuredMesh};
use crate::model::{paper_initial_data, steps_to, InitialData, Parameters};

/// Refuse meshes beyond this many nodes.
const MAX_NODES: f64 = 5e7;

/// Every key the configuration format accepts, in rendering order.
pub const CONFIG_KEYS: &[&str] = &[
    "dim",
    "domain_min",
    "domain_max",
    "base_cells",
    "refinements",
    "alpha",
    "chi",
    "mu",
    "epsilon",
    "theta",
    "dt",
    "t_final",
    "beta",
    "tol_fp",
    "max_fp_iters",
    "tol_lin",
    "blowup_threshold",
    "undershoot_limit",
    "undershoot_strikes",
    "backtracking",
    "initial",
    "snapshots",
    "out_dir",
    "vtk_every",
];

/// Box domain and grid. Per-axis lists of length 1 apply to every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub dim: usize,
    pub domain_min: Vec<f64>,
    pub domain_max: Vec<f64>,
    pub base_cells: Vec<usize>,
    pub refinements: u32,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            dim: 2,
            domain_min: vec![0.0],
            domain_max: vec![20.0],
            base_cells: vec![1],
            refinements: 5,
        }
    }
}

fn per_axis<T: Copy>(key: &str, v: &[T], dim: usize) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(Error::config(key, format!("expected 1 or {dim} values, got {n}"))),
    }
}

impl MeshSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::config("dim", format!("must be 2 or 3, got {}", self.dim)));
        }
        let lo = per_axis("domain_min", &self.domain_min, self.dim)?;
        let hi = per_axis("domain_max", &self.domain_max, self.dim)?;
        let cells = per_axis("base_cells", &self.base_cells, self.dim)?;
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::config("domain_max", format!("domain [{a}, {b}] is empty")));
            }
        }
        if cells.contains(&0) {
            return Err(Error::config("base_cells", "every axis needs at least one cell"));
        }
        if self.refinements > 16 {
            return Err(Error::config(
                "refinements",
                format!("{} is too large", self.refinements),
            ));
        }
        let nodes: f64 = cells
            .iter()
            .map(|&c| (c as f64) * 2f64.powi(self.refinements as i32) + 1.0)
            .product();
        if nodes > MAX_NODES {
            return Err(Error::config("refinements", format!("mesh would have {nodes:e} nodes")));
        }
        Ok(())
    }

    pub fn extents(&self) -> Vec<[f64; 2]> {
        let lo = per_axis("domain_min", &self.domain_min, self.dim).unwrap_or_default();
        let hi = per_axis("domain_max", &self.domain_max, self.dim).unwrap_or_default();
        lo.into_iter().zip(hi).map(|(a, b)| [a, b]).collect()
    }

    pub fn build(&self) -> Result<StructuredMesh> {
        self.validate()?;
        let cells = per_axis("base_cells", &self.base_cells, self.dim)?;
        build_structured_mesh(self.dim, &self.extents(), &cells, self.refinements)
    }
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: Parameters,
    pub mesh: MeshSpec,
    pub initial: InitialData,
    /// Times at which full snapshots are kept; times past `t_final` never occur.
    pub snapshots: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    /// Additionally keep every `vtk_every`-th level; 0 disables.
    pub vtk_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: Parameters::default(),
            mesh: MeshSpec::default(),
            initial: paper_initial_data(),
            snapshots: vec![5.0, 15.0, 25.0, 35.0],
            out_dir: None,
            vtk_every: 0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", v.trim())))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = v
        .split([',', ' ', '\t'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    items.into_iter().map(|s| num(key, s)).collect()
}

fn parse_initial(v: &str) -> Result<InitialData> {
    let mut words = v.split_whitespace();
    let kind = words.next().unwrap_or("");
    let args: Vec<&str> = words.collect();
    let nums = || list::<f64>("initial", &args.join(" "));
    match kind {
        "paper" | "paper-gaussian" if args.is_empty() => Ok(paper_initial_data()),
        "gaussian" => match nums()?.as_slice() {
            &[u_amp, c_base, c_amp, p_amp, width] => {
                if !(width > 0.0) {
                    return Err(Error::config("initial", "gaussian width must be positive"));
                }
                Ok(InitialData::Gaussian {
                    u_amp,
                    c_base,
                    c_amp,
                    p_amp,
                    width,
                })
            }
            _ => Err(Error::config(
                "initial",
                "gaussian takes u_amp c_base c_amp p_amp width",
            )),
        },
        "constant" => match nums()?.as_slice() {
            &[u, c, p] => Ok(InitialData::Constant { u, c, p }),
            _ => Err(Error::config("initial", "constant takes u c p")),
        },
        _ => Err(Error::config(
            "initial",
            format!("unknown initial data `{v}` (paper-gaussian, gaussian …, constant …)"),
        )),
    }
}

fn render_initial(d: &InitialData) -> Result<String> {
    Ok(match d {
        d if d.is_paper() => "paper-gaussian".to_string(),
        InitialData::Gaussian {
            u_amp,
            c_base,
            c_amp,
            p_amp,
            width,
        } => {
            format!("gaussian {u_amp:?} {c_base:?} {c_amp:?} {p_amp:?} {width:?}")
        }
        InitialData::Constant { u, c, p } => format!("constant {u:?} {c:?} {p:?}"),
        InitialData::Custom(_) => return Err(Error::config("initial", "custom initial data has no text form")),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

impl RunConfig {
    /// Assign one `key = value` pair; errors name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let p = &mut self.params;
        match key {
            "dim" => self.mesh.dim = num(key, v)?,
            "domain_min" => self.mesh.domain_min = list(key, v)?,
            "domain_max" => self.mesh.domain_max = list(key, v)?,
            "base_cells" => self.mesh.base_cells = list(key, v)?,
            "refinements" => self.mesh.refinements = num(key, v)?,
            "alpha" => p.alpha = num(key, v)?,
            "chi" => p.chi = num(key, v)?,
            "mu" => p.mu = num(key, v)?,
            "epsilon" => p.epsilon = num(key, v)?,
            "theta" => p.theta = num(key, v)?,
            "dt" => p.dt = num(key, v)?,
            "t_final" => p.t_final = num(key, v)?,
            "beta" => p.beta = num(key, v)?,
            "tol_fp" => p.tol_fp = num(key, v)?,
            "max_fp_iters" => p.max_fp_iters = num(key, v)?,
            "tol_lin" => p.tol_lin = num(key, v)?,
            "blowup_threshold" => p.blowup_threshold = num(key, v)?,
            "undershoot_limit" => p.undershoot_limit = num(key, v)?,
            "undershoot_strikes" => p.undershoot_strikes = num(key, v)?,
            "backtracking" => p.backtracking = parse_bool(key, v)?,
            "initial" => self.initial = parse_initial(v)?,
            "snapshots" => self.snapshots = list(key, v)?,
            "out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "vtk_every" => self.vtk_every = num(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.mesh.validate()?;
        for &t in &self.snapshots {
            if !(t >= 0.0 && t.is_finite()) || steps_to(t, self.params.dt).is_none() {
                return Err(Error::config(
                    "snapshots",
                    format!("{t} is not a nonnegative multiple of dt = {}", self.params.dt),
                ));
            }
        }
        Ok(())
    }
}

/// Parse the flat `key = value` format. `#` starts a comment; blank lines are
/// ignored; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                message: "missing key before `=`".into(),
            });
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        cfg.set(key, value).map_err(|e| match e {
            Error::Config { key, message } => Error::Parse {
                line,
                message: format!("`{key}`: {message}"),
            },
            other => other,
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

/// Text form of a configuration that [`parse_config`] maps back to an equal value.
pub fn render_config(cfg: &RunConfig) -> Result<String> {
    let p = &cfg.params;
    let m = &cfg.mesh;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("dim", m.dim.to_string());
    kv("domain_min", join(&m.domain_min));
    kv("domain_max", join(&m.domain_max));
    kv("base_cells", join(&m.base_cells));
    kv("refinements", m.refinements.to_string());
    kv("alpha", format!("{:?}", p.alpha));
    kv("chi", format!("{:?}", p.chi));
    kv("mu", format!("{:?}", p.mu));
    kv("epsilon", format!("{:?}", p.epsilon));
    kv("theta", format!("{:?}", p.theta));
    kv("dt", format!("{:?}", p.dt));
    kv("t_final", format!("{:?}", p.t_final));
    kv("beta", format!("{:?}", p.beta));
    kv("tol_fp", format!("{:?}", p.tol_fp));
    kv("max_fp_iters", p.max_fp_iters.to_string());
    kv("tol_lin", format!("{:?}", p.tol_lin));
    kv("blowup_threshold", format!("{:?}", p.blowup_threshold));
    kv("undershoot_limit", format!("{:?}", p.undershoot_limit));
    kv("undershoot_strikes", p.undershoot_strikes.to_string());
    kv("backtracking", p.backtracking.to_string());
    kv("initial", render_initial(&cfg.initial)?);
    kv("snapshots", join(&cfg.snapshots));
    if let Some(dir) = &cfg.out_dir {
        let d = dir
            .to_str()
            .ok_or_else(|| Error::config("out_dir", "path is not UTF-8"))?;
        if d.contains('#') || d.trim() != d {
            return Err(Error::config("out_dir", "path cannot be written in the config format"));
        }
        kv("out_dir", d.to_string());
    }
    kv("vtk_every", cfg.vtk_every.to_string());
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_default() {
        let c = parse_config("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.mesh.dim, 2);
        assert_eq!(c.mesh.extents(), vec![[0.0, 20.0], [0.0, 20.0]]);
        assert_eq!(c.mesh.refinements, 5);
        let mesh = c.mesh.build().unwrap();
        assert_eq!(mesh.node_count(), 1089);
    }

    #[test]
    fn comments_and_whitespace() {
        let c = parse_config("# header\n\n  chi = 0.75   # sweep\nmu=0.01\n").unwrap();
        assert_eq!(c.params.chi, 0.75);
        assert_eq!(c.params.mu, 0.01);
    }

    #[test]
    fn theta_out_of_range() {
        match parse_config("theta = 1.5") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "theta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn line_numbers() {
        for (text, want) in [
            ("alpha = 1\nbogus = 3\n", 2),
            ("alpha = 1\n\nchi 0.3\n", 3),
            ("mu = abc", 1),
            ("mu = 1\nmu = 2", 2),
            ("= 4", 1),
        ] {
            match parse_config(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn snapshots_must_hit_steps() {
        assert!(parse_config("dt = 1\nsnapshots = 2.5").is_err());
        let c = parse_config("dt = 0.5\nsnapshots = 2.5, 3").unwrap();
        assert_eq!(c.snapshots, vec![2.5, 3.0]);
        let c = parse_config("snapshots =").unwrap();
        assert!(c.snapshots.is_empty());
    }

    #[test]
    fn initial_forms() {
        let c = parse_config("initial = constant 1 0.5 0").unwrap();
        assert_eq!(c.initial, InitialData::Constant { u: 1.0, c: 0.5, p: 0.0 });
        let c = parse_config("initial = gaussian 1, 1, 0.5, 0.5, 1").unwrap();
        assert!(c.initial.is_paper());
        assert!(parse_config("initial = sinus").is_err());
        assert!(parse_config("initial = constant 1 2").is_err());
    }

    #[test]
    fn three_d_domain() {
        let c = parse_config("dim = 3\ndomain_max = 20, 20, 10\nbase_cells = 2 2 1\nrefinements = 1").unwrap();
        let m = c.mesh.build().unwrap();
        assert_eq!(m.cells_per_axis(), &[4, 4, 2]);
        assert!(parse_config("dim = 3\nbase_cells = 1, 2").is_err());
        assert!(parse_config("dim = 4").is_err());
    }

    #[test]
    fn huge_mesh_rejected() {
        match parse_config("dim = 3\nrefinements = 9") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "refinements"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn custom_initial_cannot_render() {
        let cfg = RunConfig {
            initial: InitialData::Custom(std::sync::Arc::new(|_: &[f64]| [0.0; 3])),
            ..Default::default()
        };
        assert!(render_config(&cfg).is_err());
    }

    fn positive() -> impl Strategy<Value = f64> {
        prop_oneof![1e-6f64..1e3, Just(1e-10), Just(0.2)]
    }

    prop_compose! {
        fn arb_config()(
            dim in 2usize..=3,
            lo in -10.0f64..0.0,
            width in 0.5f64..50.0,
            cells in 1usize..4,
            refinements in 0u32..4,
            alpha in positive(),
            chi in prop_oneof![Just(0.0), 0.0f64..2.0],
            mu in positive(),
            epsilon in positive(),
            theta in 0.0f64..=1.0,
            dt_steps in 1usize..8,
            beta in 0.01f64..=1.0,
            tol_fp in 1e-14f64..1e-4,
            max_fp_iters in 1usize..1000,
            backtracking in any::<bool>(),
            undershoot_strikes in 0usize..4,
            init in 0usize..3,
            amp in 0.0f64..2.0,
            nsnap in 0usize..4,
            out in proptest::option::of("[a-z][a-z0-9_/]{0,12}"),
            vtk_every in 0usize..5,
        ) -> RunConfig {
            let dt = 1.0 / dt_steps as f64;
            let initial = match init {
                0 => paper_initial_data(),
                1 => InitialData::Constant { u: amp, c: 1.0 - amp / 3.0, p: amp / 2.0 },
                _ => InitialData::Gaussian { u_amp: amp, c_base: 1.0, c_amp: 0.3, p_amp: 0.1, width: 1.0 + amp },
            };
            RunConfig {
                params: Parameters {
                    alpha, chi, mu, epsilon, theta, dt,
                    t_final: dt * 10.0,
                    beta, tol_fp, max_fp_iters,
                    backtracking,
                    undershoot_strikes,
                    ..Parameters::default()
                },
                mesh: MeshSpec {
                    dim,
                    domain_min: vec![lo],
                    domain_max: vec![lo + width; dim],
                    base_cells: vec![cells],
                    refinements,
                },
                initial,
                snapshots: (0..nsnap).map(|k| dt * (2 * k) as f64).collect(),
                out_dir: out.map(PathBuf::from),
                vtk_every,
            }
        }
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(cfg in arb_config()) {
            prop_assume!(cfg.validate().is_ok());
            let text = render_config(&cfg).unwrap();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
