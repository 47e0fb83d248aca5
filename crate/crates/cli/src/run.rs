use std::path::{Path, PathBuf};

use haptosim::iocfg::{render_config, write_diagnostics_csv, write_vtk_flagged};
use haptosim::{parse_config, run_observed, snapshot_steps, DiagnosticsRow, Error, RunConfig};

use crate::args::RunArgs;
use crate::failure::CliError;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HAPTOSIM_OUT";
const DEFAULT_ROOT: &str = "haptosim-out";

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(Error::io(p, e)))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| {
            CliError::Config(Error::Config {
                key: o.clone(),
                message: "override must look like key=value".into(),
            })
        })?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

fn resolve_out(cli: Option<&Path>, cfg: &RunConfig, config_path: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    let name = config_path
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    output_root().join(name)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Completed,
    Breakdown { time: f64, reason: String },
    NonConvergence { time: f64, detail: String },
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub status: Status,
    pub final_time: f64,
    /// `(t, max u)` at each configured snapshot time that was reached.
    pub max_u: Vec<(f64, Option<f64>)>,
}

fn snapshot_name(prefix: &str, step: usize, time: f64) -> String {
    format!("{prefix}_{step:05}_t{time}.vtk")
}

/// Run `cfg`, streaming snapshots into `out` and writing the diagnostics CSV
/// even when the run stops early.
pub fn execute(cfg: &RunConfig, out: &Path, progress: bool) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Other(Error::io(out, e)))?;
    if let Ok(text) = render_config(cfg) {
        let p = out.join("config.used");
        std::fs::write(&p, text).map_err(|e| CliError::Other(Error::io(&p, e)))?;
    }
    let wanted = snapshot_steps(cfg)?;
    let dt = cfg.params.dt;
    let mut rows: Vec<DiagnosticsRow> = Vec::new();
    let mut io_error = None;

    let result = run_observed(cfg, |state, row| {
        let step = (state.time / dt).round() as usize;
        if progress {
            eprintln!(
                "t = {:>8} | fp passes {:>3} | max u {:.6} | min u {:.3e}",
                state.time, row.fp_iters, row.max[0], row.min[0]
            );
        }
        let file = if row.breakdown {
            Some((snapshot_name("breakdown", step, state.time), Some("BREAKDOWN")))
        } else if wanted.contains(&step) {
            Some((snapshot_name("snapshot", step, state.time), None))
        } else {
            None
        };
        if let Some((name, flag)) = file {
            if let Err(e) = write_vtk_flagged(state, &out.join(name), flag) {
                io_error.get_or_insert(e);
            }
        }
        rows.push(row.clone());
    });

    let csv = out.join("diagnostics.csv");
    write_diagnostics_csv(&rows, &csv)?;
    if let Some(e) = io_error {
        return Err(CliError::Other(e));
    }

    let output = match result {
        Ok(o) => o,
        Err(Error::NonConvergence { time, report }) => {
            let detail = Error::NonConvergence { time, report }.to_string();
            return Ok(Summary {
                status: Status::NonConvergence { time, detail },
                final_time: rows.last().map_or(0.0, |r| r.time),
                max_u: max_u_table(cfg, &rows),
            });
        }
        Err(e) => return Err(e.into()),
    };
    let status = match &output.breakdown {
        Some(b) => Status::Breakdown {
            time: b.time,
            reason: b.reason.to_string(),
        },
        None => Status::Completed,
    };
    for w in &output.diagnostics.warnings {
        if progress {
            eprintln!("warning: {w}");
        }
    }
    Ok(Summary {
        status,
        final_time: rows.last().map_or(0.0, |r| r.time),
        max_u: max_u_table(cfg, &output.diagnostics.rows),
    })
}

fn max_u_table(cfg: &RunConfig, rows: &[DiagnosticsRow]) -> Vec<(f64, Option<f64>)> {
    cfg.snapshots
        .iter()
        .map(|&t| {
            let hit = rows
                .iter()
                .find(|r| !r.breakdown && (r.time - t).abs() <= 1e-9 * t.abs().max(1.0))
                .map(|r| r.max[0]);
            (t, hit)
        })
        .collect()
}

impl Summary {
    pub fn into_result(self) -> Result<Summary, CliError> {
        match &self.status {
            Status::Completed => Ok(self),
            Status::Breakdown { time, reason } => Err(CliError::Breakdown {
                time: *time,
                reason: reason.clone(),
            }),
            Status::NonConvergence { detail, .. } => Err(CliError::NonConvergence(detail.clone())),
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let out = resolve_out(args.out.as_deref(), &cfg, args.config.as_deref());
    let summary = execute(&cfg, &out, !args.quiet)?;
    println!("output: {}", out.display());
    for (t, m) in &summary.max_u {
        match m {
            Some(v) => println!("max u at t = {t}: {v:.6}"),
            None => println!("max u at t = {t}: not reached"),
        }
    }
    summary.into_result().map(|_| ())
}
