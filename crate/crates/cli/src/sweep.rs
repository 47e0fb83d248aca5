use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use haptosim::iocfg::CONFIG_KEYS;
use haptosim::{Error, RunConfig};
use rayon::prelude::*;

use crate::args::SweepArgs;
use crate::failure::{code, CliError};
use crate::run::{execute, load_config, output_root, Status, Summary};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_axis(spec: &str) -> Result<Axis, CliError> {
    let bad = |message: String| CliError::Config(Error::config(spec, message));
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| bad("axis must look like key=v1,v2,...".into()))?;
    let key = key.trim();
    if !CONFIG_KEYS.contains(&key) {
        return Err(bad(format!("unknown key `{key}`")));
    }
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(bad("axis has no values".into()));
    }
    Ok(Axis {
        key: key.to_string(),
        values,
    })
}

/// Cartesian product; the first axis varies slowest.
pub fn expand(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((axis.key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    combos
}

fn dir_name(combo: &[(String, String)]) -> String {
    combo
        .iter()
        .map(|(k, v)| format!("{k}-{v}"))
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-._+".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Child {
    combo: Vec<(String, String)>,
    dir: PathBuf,
    outcome: Result<Summary, String>,
}

fn status_cell(outcome: &Result<Summary, String>) -> (&'static str, u8) {
    match outcome {
        Ok(s) => match s.status {
            Status::Completed => ("completed", 0),
            Status::Breakdown { .. } => ("breakdown", code::BREAKDOWN),
            Status::NonConvergence { .. } => ("nonconvergence", code::NONCONVERGENCE),
        },
        Err(_) => ("error", code::OTHER),
    }
}

fn summary_csv(axes: &[Axis], base: &RunConfig, children: &[Child]) -> String {
    let mut s = String::from("run");
    for a in axes {
        let _ = write!(s, ",{}", a.key);
    }
    s.push_str(",status,exit_code,final_time");
    for t in &base.snapshots {
        let _ = write!(s, ",max_u_t{t}");
    }
    s.push('\n');
    for (i, c) in children.iter().enumerate() {
        let _ = write!(s, "{i}");
        for (_, v) in &c.combo {
            let _ = write!(s, ",{v}");
        }
        let (status, code) = status_cell(&c.outcome);
        let final_time = c
            .outcome
            .as_ref()
            .map(|o| format!("{:?}", o.final_time))
            .unwrap_or_default();
        let _ = write!(s, ",{status},{code},{final_time}");
        for t in &base.snapshots {
            let v = c
                .outcome
                .as_ref()
                .ok()
                .and_then(|o| o.max_u.iter().find(|(tt, _)| tt == t).and_then(|(_, m)| *m));
            match v {
                Some(m) => {
                    let _ = write!(s, ",{m:?}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    let axes = args.axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>, _>>()?;
    let root = match &args.out {
        Some(p) => p.clone(),
        None => base.out_dir.clone().unwrap_or_else(|| output_root().join("sweep")),
    };

    // Every combination must validate before anything runs.
    let mut jobs = Vec::new();
    for combo in expand(&axes) {
        let mut cfg = base.clone();
        for (k, v) in &combo {
            cfg.set(k, v)?;
        }
        cfg.out_dir = None;
        cfg.validate()?;
        let dir = root.join(dir_name(&combo));
        jobs.push((combo, cfg, dir));
    }

    let threads = args.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Other(Error::Input(format!("cannot start worker pool: {e}"))))?;
    let children: Vec<Child> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(combo, cfg, dir)| {
                let outcome = execute(&cfg, &dir, false).map_err(|e| e.to_string());
                Child { combo, dir, outcome }
            })
            .collect()
    });

    std::fs::create_dir_all(&root).map_err(|e| CliError::Other(Error::io(&root, e)))?;
    let csv = summary_csv(&axes, &base, &children);
    let path = root.join("summary.csv");
    std::fs::write(&path, &csv).map_err(|e| CliError::Other(Error::io(&path, e)))?;
    print!("{csv}");
    report_children(&children, &path);

    let worst = children
        .iter()
        .map(|c| status_cell(&c.outcome).1)
        .max_by_key(|&c| match c {
            code::OTHER => 3,
            code::NONCONVERGENCE => 2,
            code::BREAKDOWN => 1,
            _ => 0,
        })
        .unwrap_or(0);
    let failed = children.iter().filter(|c| status_cell(&c.outcome).1 != 0).count();
    if failed > 0 {
        return Err(CliError::Sweep {
            failed,
            total: children.len(),
            code: worst,
        });
    }
    Ok(())
}

fn report_children(children: &[Child], summary: &Path) {
    for c in children {
        match &c.outcome {
            Err(e) => eprintln!("{}: error: {e}", c.dir.display()),
            Ok(Summary {
                status: Status::Breakdown { time, reason },
                ..
            }) => {
                eprintln!("{}: breakdown at t = {time}: {reason}", c.dir.display())
            }
            Ok(Summary {
                status: Status::NonConvergence { detail, .. },
                ..
            }) => {
                eprintln!("{}: {detail}", c.dir.display())
            }
            Ok(_) => {}
        }
    }
    eprintln!("summary written to {}", summary.display());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_parse() {
        let a = parse_axis("mu=1e-10, 0.5,1.0").unwrap();
        assert_eq!(a.key, "mu");
        assert_eq!(a.values, vec!["1e-10", "0.5", "1.0"]);
        assert!(parse_axis("mu").is_err());
        assert!(parse_axis("nope=1,2").is_err());
        assert!(parse_axis("chi=").is_err());
    }

    #[test]
    fn cartesian_product() {
        let axes = vec![parse_axis("chi=0.25,0.75").unwrap(), parse_axis("mu=0.01,1").unwrap()];
        let combos = expand(&axes);
        assert_eq!(combos.len(), 4);
        assert_eq!(
            combos[0],
            vec![("chi".into(), "0.25".into()), ("mu".into(), "0.01".into())]
        );
        assert_eq!(
            combos[3],
            vec![("chi".into(), "0.75".into()), ("mu".into(), "1".into())]
        );
        assert_eq!(expand(&[]).len(), 1);
    }

    #[test]
    fn directory_names_are_safe() {
        let combo = vec![
            ("initial".to_string(), "constant 1 0.5 0".to_string()),
            ("mu".into(), "1e-10".into()),
        ];
        assert_eq!(dir_name(&combo), "initial-constant_1_0.5_0_mu-1e-10");
    }
}
