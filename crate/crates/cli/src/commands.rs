use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use conecert::certify::{
    certify_family, check_relaxation_membership, robustness_range, FamilyVerdict, Parametrization,
    RobustnessConfig,
};
use conecert::cone::{ConeFile, PolyhedralCone};
use conecert::conefind::{find_cone, prescreen, SearchConfig};
use conecert::sim::{
    classify_limit, cluster_fixed_points, integrate, LimitClass, DEFAULT_LIMIT_TOL,
    DEFAULT_WINDOW_FRAC,
};
use conecert::spectral::max_timestep;
use conecert::systems::{sample_jacobians, Builtin, ResolvedSystem, SystemFile, BUILTIN_NAMES};
use conecert::Error;

use crate::code;
use crate::output::{to_json, Recorder};
use crate::{Cli, Command, SystemArgs, X0Mode};

/// Fixed points closer than this (max norm) are counted as one.
const CLUSTER_TOL: f64 = 1e-3;

pub fn run(cli: Cli) -> Result<i32> {
    let name = match &cli.command {
        Command::Necessary { .. } => "necessary",
        Command::FindCone { .. } => "find-cone",
        Command::Certify { .. } => "certify",
        Command::Robust { .. } => "robust",
        Command::Simulate { .. } => "simulate",
    };
    let manifest_path = cli.manifest.clone().or_else(|| match &cli.command {
        Command::FindCone { out_dir, .. } | Command::Simulate { out_dir, .. } => {
            Some(out_dir.join("manifest.json"))
        }
        _ => None,
    });
    let mut rec = Recorder::new(name);
    let result = dispatch(cli.command, &mut rec);
    let status = match &result {
        Ok(c) => *c,
        Err(_) => code::USAGE,
    };
    rec.finish(status, manifest_path)?;
    result
}

fn dispatch(command: Command, rec: &mut Recorder) -> Result<i32> {
    match command {
        Command::Necessary {
            sys,
            gap_tol,
            samples,
            sample_box,
            seed,
            out,
        } => necessary(rec, &sys, gap_tol, samples, sample_box, seed, out),
        Command::FindCone {
            sys,
            seed,
            max_iter,
            tau_scale,
            widen_scale,
            test_interval,
            max_rays,
            init_epsilon,
            t_tol,
            out_dir,
        } => {
            let cfg = SearchConfig {
                tau_scale,
                widen_scale,
                max_iter,
                test_interval,
                t_tol,
                rng_seed: seed,
                init_epsilon,
                max_rays,
                ..SearchConfig::default()
            };
            find(rec, &sys, cfg, &out_dir)
        }
        Command::Certify {
            sys,
            cone,
            t_tol,
            out,
        } => certify(rec, &sys, &cone, t_tol, out),
        Command::Robust {
            sys,
            cone,
            free_param,
            seed_value,
            resolution,
            lower_cap,
            upper_cap,
            t_tol,
            out,
        } => {
            let cfg = RobustnessConfig {
                t_tol,
                resolution,
                lower_cap,
                upper_cap,
            };
            robust(rec, &sys, &cone, &free_param, seed_value, cfg, out)
        }
        Command::Simulate {
            sys,
            x0_mode,
            x0_file,
            n_traj,
            x0_box,
            dt,
            t_final,
            csv_stride,
            seed,
            out_dir,
        } => {
            let opts = SimOptions {
                x0_mode,
                x0_file,
                n_traj,
                x0_box,
                dt,
                t_final,
                csv_stride,
                seed,
            };
            simulate(rec, &sys, opts, &out_dir)
        }
    }
}

struct Loaded {
    resolved: ResolvedSystem,
    file: SystemFile,
}

fn parse_override(kv: &str) -> Result<(String, Value)> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{kv}` is not of the form KEY=VALUE"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn load_system(rec: &mut Recorder, args: &SystemArgs) -> Result<Loaded> {
    let path = Path::new(&args.system);
    let mut file = if path.is_file() {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        rec.input(&args.system, &bytes);
        serde_json::from_slice::<SystemFile>(&bytes)
            .with_context(|| format!("parsing {}", path.display()))?
    } else if BUILTIN_NAMES.contains(&args.system.as_str()) {
        SystemFile::Builtin {
            name: args.system.clone(),
            overrides: Map::new(),
        }
    } else {
        bail!(
            "`{}` is neither a file nor a built-in ({})",
            args.system,
            BUILTIN_NAMES.join(", ")
        );
    };
    let mut extra: Vec<(String, Value)> = args
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<_>>()?;
    if let Some(tau) = args.tau {
        extra.push(("tau".into(), json!(tau)));
    }
    if !extra.is_empty() {
        match &mut file {
            SystemFile::Builtin { overrides, .. } => overrides.extend(extra),
            _ => bail!("--set and --tau apply to built-in systems only"),
        }
    }
    if !path.is_file() {
        rec.input(&args.system, &serde_json::to_vec(&file)?);
    }
    let resolved = file.resolve().map_err(|e| anyhow!("{e}"))?;
    Ok(Loaded { resolved, file })
}

fn load_cone(rec: &mut Recorder, path: &Path) -> Result<PolyhedralCone> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    rec.input(&path.display().to_string(), &bytes);
    let file: ConeFile =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    PolyhedralCone::try_from(file).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn emit(rec: &mut Recorder, out: Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => rec.write(&p, bytes, true),
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct VertexSummary {
    vertex: usize,
    lambda: f64,
    gap: f64,
    max_timestep: Option<f64>,
}

fn necessary(
    rec: &mut Recorder,
    sys: &SystemArgs,
    gap_tol: f64,
    samples: usize,
    sample_box: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<i32> {
    let loaded = load_system(rec, sys)?;
    rec.config = json!({"system": loaded.file, "gap_tol": gap_tol, "samples": samples, "sample_box": sample_box, "seed": seed});
    let family = &loaded.resolved.family;
    let mut report = Map::new();
    let status = match prescreen(family, gap_tol) {
        Err(Error::SpectralFail { vertices }) => {
            report.insert("spectral_ok".into(), json!(false));
            report.insert("failed_vertices".into(), json!(vertices));
            code::SPECTRAL
        }
        Err(Error::OrientationDegenerate { vertex }) => {
            report.insert("spectral_ok".into(), json!(true));
            report.insert("geometric_ok".into(), json!(false));
            report.insert("orientation_degenerate_vertex".into(), json!(vertex));
            code::GEOMETRIC
        }
        Err(e) => return Err(anyhow!("{e}")),
        Ok(pre) => {
            let vertices: Vec<VertexSummary> = pre
                .spectral
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let t = max_timestep(s);
                    VertexSummary {
                        vertex: i,
                        lambda: s.lambda,
                        gap: s.gap,
                        max_timestep: t.is_finite().then_some(t),
                    }
                })
                .collect();
            report.insert("spectral_ok".into(), json!(true));
            report.insert("geometric_ok".into(), json!(pre.geometric_ok));
            report.insert("geometric_margin".into(), json!(pre.geometric_margin()));
            report.insert("vertices".into(), serde_json::to_value(vertices)?);
            if pre.geometric_ok {
                code::PASS
            } else {
                code::GEOMETRIC
            }
        }
    };
    if let (Some(b), true) = (&loaded.resolved.builtin, samples > 0) {
        let dynamics = b.instantiate().map_err(|e| anyhow!("{e}"))?;
        let n = dynamics.dim();
        let lo = vec![-sample_box; n];
        let hi = vec![sample_box; n];
        let js = sample_jacobians(dynamics.as_ref(), &lo, &hi, samples, seed)
            .map_err(|e| anyhow!("{e}"))?;
        let members = js
            .par_iter()
            .map(|j| check_relaxation_membership(j, family, 1e-7))
            .collect::<conecert::Result<Vec<bool>>>()
            .map_err(|e| anyhow!("{e}"))?;
        let inside = members.iter().filter(|&&m| m).count();
        report.insert(
            "sampled_jacobians".into(),
            json!({"count": samples, "in_relaxation": inside, "box_half_width": sample_box}),
        );
    }
    report.insert("passed".into(), json!(status == code::PASS));
    emit(rec, out, &to_json(&report)?)?;
    Ok(status)
}

fn find(rec: &mut Recorder, sys: &SystemArgs, cfg: SearchConfig, out_dir: &Path) -> Result<i32> {
    let loaded = load_system(rec, sys)?;
    rec.config = json!({"system": loaded.file, "search": cfg});
    match find_cone(&loaded.resolved.family, &cfg) {
        Ok(outcome) => {
            rec.write(
                &out_dir.join("report.json"),
                &to_json(&outcome.report)?,
                false,
            )?;
            match outcome.found {
                Some((cone, cert)) => {
                    rec.write(
                        &out_dir.join("cone.json"),
                        &to_json(&ConeFile::from(&cone))?,
                        true,
                    )?;
                    rec.write(&out_dir.join("certificate.json"), &to_json(&cert)?, true)?;
                    eprintln!(
                        "certified: {} rays, margin {:.3e}",
                        cone.num_rays(),
                        cert.margin()
                    );
                    Ok(code::PASS)
                }
                None => {
                    eprintln!("search failed: {:?}", outcome.report.termination);
                    Ok(code::SEARCH)
                }
            }
        }
        Err(
            e @ (Error::SpectralFail { .. }
            | Error::OrientationDegenerate { .. }
            | Error::InitFail { .. }),
        ) => {
            let report = json!({"termination": {"kind": "prescreen", "detail": e.to_string()}});
            rec.write(&out_dir.join("report.json"), &to_json(&report)?, true)?;
            eprintln!("search failed: {e}");
            Ok(code::SEARCH)
        }
        Err(e) => Err(anyhow!("{e}")),
    }
}

fn certify(
    rec: &mut Recorder,
    sys: &SystemArgs,
    cone_path: &Path,
    t_tol: f64,
    out: Option<PathBuf>,
) -> Result<i32> {
    let loaded = load_system(rec, sys)?;
    let cone = load_cone(rec, cone_path)?;
    rec.config = json!({"system": loaded.file, "t_tol": t_tol});
    match certify_family(&loaded.resolved.family, &cone, t_tol) {
        Ok(FamilyVerdict::Certified(cert)) => {
            emit(rec, out, &to_json(&cert)?)?;
            Ok(code::PASS)
        }
        Ok(FamilyVerdict::Rejected { vertex, margin }) => {
            let body = json!({"certified": false, "vertex": vertex, "margin": margin});
            emit(rec, out, &to_json(&body)?)?;
            Ok(code::CERTIFY)
        }
        Err(e @ (Error::NotPointed | Error::NotProper { .. })) => {
            let body = json!({"certified": false, "reason": e.to_string()});
            emit(rec, out, &to_json(&body)?)?;
            Ok(code::CERTIFY)
        }
        Err(e) => Err(anyhow!("{e}")),
    }
}

fn resolve_param(name: &str, builtin: Option<&Builtin>, count: usize) -> Result<usize> {
    if let Ok(i) = name.parse::<usize>() {
        if i < count {
            return Ok(i);
        }
        bail!("parameter index {i} out of range ({count} parameters)");
    }
    let names = builtin.map(Builtin::param_names).unwrap_or_default();
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| anyhow!("unknown parameter `{name}` (known: {})", names.join(", ")))
}

fn midpoint(p: &Parametrization, free: usize) -> f64 {
    let vals = p.param_vertices.iter().map(|v| v[free]);
    let lo = vals.clone().fold(f64::INFINITY, f64::min);
    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() {
        0.5 * (lo + hi)
    } else {
        0.0
    }
}

fn robust(
    rec: &mut Recorder,
    sys: &SystemArgs,
    cone_path: &Path,
    free_param: &str,
    seed_value: Option<f64>,
    cfg: RobustnessConfig,
    out: Option<PathBuf>,
) -> Result<i32> {
    let loaded = load_system(rec, sys)?;
    let cone = load_cone(rec, cone_path)?;
    let param = loaded
        .resolved
        .parametrization()
        .ok_or_else(|| anyhow!("robustness needs a parametrized system"))?;
    let free = resolve_param(
        free_param,
        loaded.resolved.builtin.as_ref(),
        param.directions.len(),
    )?;
    let seed = seed_value.unwrap_or_else(|| midpoint(param, free));
    rec.config = json!({
        "system": loaded.file,
        "free_param": free,
        "seed_value": seed,
        "t_tol": cfg.t_tol,
        "resolution": cfg.resolution,
        "lower_cap": cfg.lower_cap,
        "upper_cap": cfg.upper_cap,
    });
    match robustness_range(param, free, seed, &cone, &cfg) {
        Ok((lo, hi)) => {
            let body = json!({
                "free_param": free,
                "seed_value": seed,
                "interval": [lo, hi],
                "lower_capped": lo <= cfg.lower_cap,
                "upper_capped": hi >= cfg.upper_cap,
            });
            emit(rec, out, &to_json(&body)?)?;
            Ok(code::PASS)
        }
        Err(e @ Error::SeedInfeasible { .. }) => {
            eprintln!("{e}");
            Ok(code::CERTIFY)
        }
        Err(e) => Err(anyhow!("{e}")),
    }
}

struct SimOptions {
    x0_mode: X0Mode,
    x0_file: Option<PathBuf>,
    n_traj: usize,
    x0_box: f64,
    dt: f64,
    t_final: f64,
    csv_stride: usize,
    seed: u64,
}

#[derive(Serialize)]
struct TrajectorySummary {
    index: usize,
    x0: Vec<f64>,
    csv: Option<String>,
    class: Value,
}

fn simulate(rec: &mut Recorder, sys: &SystemArgs, opts: SimOptions, out_dir: &Path) -> Result<i32> {
    let loaded = load_system(rec, sys)?;
    let builtin =
        loaded.resolved.builtin.as_ref().ok_or_else(|| {
            anyhow!("simulation needs a built-in system with bound nonlinearities")
        })?;
    let dynamics = builtin.instantiate().map_err(|e| anyhow!("{e}"))?;
    let n = dynamics.dim();
    let starts: Vec<Vec<f64>> = match opts.x0_mode {
        X0Mode::Random => {
            if opts.n_traj == 0 {
                bail!("--n-traj must be at least 1");
            }
            if opts.x0_box.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                bail!("--x0-box must be positive");
            }
            (0..opts.n_traj)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
                    (0..n)
                        .map(|_| rng.random_range(-opts.x0_box..opts.x0_box))
                        .collect()
                })
                .collect()
        }
        X0Mode::File => {
            let path = opts
                .x0_file
                .as_ref()
                .ok_or_else(|| anyhow!("--x0-mode file needs --x0-file"))?;
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            rec.input(&path.display().to_string(), &bytes);
            let xs: Vec<Vec<f64>> = serde_json::from_slice(&bytes)?;
            if xs.is_empty() {
                bail!("{} lists no initial states", path.display());
            }
            if let Some(x) = xs.iter().find(|x| x.len() != n) {
                bail!(
                    "initial state of length {} for a system of dimension {n}",
                    x.len()
                );
            }
            xs
        }
    };
    rec.config = json!({
        "system": loaded.file,
        "x0_mode": format!("{:?}", opts.x0_mode).to_lowercase(),
        "n_traj": starts.len(),
        "x0_box": opts.x0_box,
        "dt": opts.dt,
        "t_final": opts.t_final,
        "csv_stride": opts.csv_stride,
        "seed": opts.seed,
    });
    let positions = dynamics.positions();
    let runs: Vec<(Option<Vec<u8>>, Value)> = starts
        .par_iter()
        .map(|x0| -> Result<(Option<Vec<u8>>, Value)> {
            match integrate(
                dynamics.as_ref(),
                &DVector::from_vec(x0.clone()),
                opts.dt,
                opts.t_final,
            ) {
                Ok(tr) => {
                    let class = classify_limit(
                        &tr,
                        DEFAULT_WINDOW_FRAC,
                        DEFAULT_LIMIT_TOL,
                        positions.clone(),
                    )
                    .map_err(|e| anyhow!("{e}"))?;
                    let mut csv = Vec::new();
                    tr.thinned(opts.csv_stride).write_csv(&mut csv)?;
                    Ok((Some(csv), serde_json::to_value(class)?))
                }
                Err(Error::Blowup { time }) => Ok((None, json!({"kind": "blowup", "time": time}))),
                Err(e) => Err(anyhow!("{e}")),
            }
        })
        .collect::<Result<_>>()?;
    let mut summaries = Vec::with_capacity(runs.len());
    let mut fixed = Vec::new();
    let mut counts: std::collections::BTreeMap<String, usize> = std::collections::BTreeMap::new();
    for (i, ((csv, class), x0)) in runs.into_iter().zip(&starts).enumerate() {
        let csv_name = match csv {
            Some(bytes) => {
                let name = format!("traj_{i:03}.csv");
                rec.write(&out_dir.join(&name), &bytes, true)?;
                Some(name)
            }
            None => None,
        };
        let kind = class["kind"].as_str().unwrap_or("unknown").to_string();
        *counts.entry(kind).or_insert(0usize) += 1;
        if let Ok(LimitClass::FixedPoint { state }) =
            serde_json::from_value::<LimitClass>(class.clone())
        {
            fixed.push(state);
        }
        summaries.push(TrajectorySummary {
            index: i,
            x0: x0.clone(),
            csv: csv_name,
            class,
        });
    }
    let clusters = cluster_fixed_points(&fixed, CLUSTER_TOL);
    let summary = json!({
        "system": dynamics.describe(),
        "counts": counts,
        "fixed_point_clusters": clusters,
        "trajectories": summaries,
    });
    rec.write(&out_dir.join("summary.json"), &to_json(&summary)?, true)?;
    eprintln!(
        "{} trajectories: {}",
        starts.len(),
        serde_json::to_string(&summary["counts"])?
    );
    Ok(code::PASS)
}
