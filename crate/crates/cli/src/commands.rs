use std::fmt::Display;
use std::path::{Path, PathBuf};

use framefit::diagnostics::{degeneracy_scan, level_set, residual_bound_check, uniqueness_certificate, SpanTolerance, Verdict};
use framefit::newton::{localize as solve, GridSpec, SolverConfig};
use framefit::scalar::format_number as num;
use framefit::radar::{simulate_fdoa, KinematicTrack, NoiseModel, RadarScenario};
use framefit::variational::{shooting_search, TimeSeries};
use framefit::{FrameFamily, Measurement, ParameterPoint};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::files::*;
use crate::{DiagnoseArgs, GridArgs, LocalizeArgs, NoiseArgs, ReplayArgs, SimulateArgs, TrackArgs};

const DEFAULT_BOUND: f64 = 10.0;
const DEFAULT_COUNTS: usize = 21;
const DEFAULT_TRACK_COUNTS: usize = 5;
const DEFAULT_SPEED: f64 = 2.0;

fn list<T: Display>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn numbers<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    values.into_iter().map(|v| num(*v)).collect::<Vec<_>>().join(",")
}

fn path_str(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

/// Expands a flag to `dim` entries; a single value is broadcast.
fn per_axis<T: Copy>(flag: &'static str, values: Option<&Vec<T>>, default: T, dim: usize) -> CliResult<Vec<T>> {
    match values {
        None => Ok(vec![default; dim]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; dim]),
        Some(v) if v.len() == dim => Ok(v.clone()),
        Some(v) => Err(CliError::usage(format!("--{flag} expects 1 or {dim} values, got {}", v.len()))),
    }
}

fn build_grid(
    names: [&'static str; 3],
    lower: Option<&Vec<f64>>,
    upper: Option<&Vec<f64>>,
    counts: Option<&Vec<usize>>,
    bound: f64,
    default_counts: usize,
    dim: usize,
) -> CliResult<GridSpec<f64>> {
    let lower = per_axis(names[0], lower, -bound, dim)?;
    let upper = per_axis(names[1], upper, bound, dim)?;
    let counts = per_axis(names[2], counts, default_counts, dim)?;
    GridSpec::from_slices(&lower, &upper, &counts).map_err(|e| CliError::usage(format!("invalid grid: {e}")))
}

fn position_grid(args: &GridArgs, dim: usize, default_counts: usize) -> CliResult<GridSpec<f64>> {
    build_grid(
        ["grid-lower", "grid-upper", "grid-counts"],
        args.grid_lower.as_ref(),
        args.grid_upper.as_ref(),
        args.grid_counts.as_ref(),
        DEFAULT_BOUND,
        default_counts,
        dim,
    )
}

fn grid_json(grid: &GridSpec<f64>) -> Value {
    json!({
        "lower": grid.lower().as_slice(),
        "upper": grid.upper().as_slice(),
        "counts": grid.counts(),
    })
}

fn grid_argv(argv: &mut Vec<String>, prefix: &str, grid: &GridSpec<f64>) {
    argv.push(format!("--{prefix}-lower"));
    argv.push(numbers(grid.lower().iter()));
    argv.push(format!("--{prefix}-upper"));
    argv.push(numbers(grid.upper().iter()));
    argv.push(format!("--{prefix}-counts"));
    argv.push(list(grid.counts().iter()));
}

fn noise_model(scenario: &RadarScenario<f64>, args: &NoiseArgs) -> CliResult<NoiseModel> {
    let noise = NoiseModel {
        sigma: args.sigma.unwrap_or(scenario.noise.sigma),
        seed: args.seed.unwrap_or(scenario.noise.seed),
    };
    noise.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(noise)
}

/// Where a command's measurement came from.
enum Source {
    File(PathBuf),
    Simulated { noise: NoiseModel, noise_norm: f64 },
}

impl Source {
    fn noise(&self) -> Option<NoiseModel> {
        match self {
            Source::File(_) => None,
            Source::Simulated { noise, .. } => Some(*noise),
        }
    }

    fn json(&self) -> Value {
        match self {
            Source::File(path) => json!({ "file": path_str(path) }),
            Source::Simulated { noise, .. } => json!({ "simulated": { "sigma": noise.sigma, "seed": noise.seed } }),
        }
    }

    fn argv(&self, argv: &mut Vec<String>) {
        match self {
            Source::File(path) => {
                argv.push("--measurement".into());
                argv.push(path_str(path));
            }
            Source::Simulated { noise, .. } => {
                argv.extend(["--sigma".into(), num(noise.sigma), "--seed".into(), noise.seed.to_string()]);
            }
        }
    }
}

fn measurement(
    scenario: &RadarScenario<f64>,
    file: Option<&PathBuf>,
    noise: &NoiseArgs,
) -> CliResult<(Measurement<f64>, Source)> {
    match file {
        Some(path) => {
            let parsed: MeasurementFile = read_json(path)?;
            let w = Measurement::from_slice(&parsed.w).map_err(|e| CliError::validation(path, e))?;
            if w.len() != scenario.geometry.pairs() {
                return Err(CliError::validation(
                    path,
                    format!("measurement has {} entries, scenario has {} pairs", w.len(), scenario.geometry.pairs()),
                ));
            }
            Ok((w, Source::File(absolute(path)?)))
        }
        None => {
            let noise = noise_model(scenario, noise)?;
            let clean = simulate_fdoa(&scenario.geometry, &scenario.truth, &NoiseModel::noiseless())?;
            let w = simulate_fdoa(&scenario.geometry, &scenario.truth, &noise)?;
            let noise_norm = (w.values() - clean.values()).norm();
            Ok((w, Source::Simulated { noise, noise_norm }))
        }
    }
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    scenario: &Path,
    seed: Option<u64>,
    config: Value,
    mut argv: Vec<String>,
) -> CliResult<()> {
    argv.insert(0, command.to_string());
    let manifest = json!({
        "tool": "framefit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "scenario": path_str(scenario),
        "seed": seed,
        "out_dir": path_str(out_dir),
        "config": config,
        "args": argv,
    });
    write_json(&out_dir.join("manifest.json"), &manifest)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let scenario_path = absolute(&args.scenario)?;
    let scenario = load_scenario(&scenario_path)?;
    let noise = noise_model(&scenario, &args.noise)?;
    create_dir(&args.out_dir)?;
    let dim = scenario.geometry.dim();
    let mut argv = vec![
        "--scenario".to_string(),
        path_str(&scenario_path),
        "--sigma".into(),
        num(noise.sigma),
        "--seed".into(),
        noise.seed.to_string(),
    ];
    let config = match (args.duration, args.steps) {
        (Some(duration), Some(steps)) => {
            if !(duration > 0.0 && duration.is_finite()) || steps < 2 {
                return Err(CliError::usage("--duration must be positive and --steps at least 2"));
            }
            let acceleration = per_axis("acceleration", args.acceleration.as_ref(), 0.0, dim)?;
            let track = KinematicTrack {
                position: scenario.truth.position.clone(),
                velocity: scenario.truth.velocity.clone(),
                acceleration: DVector::from_vec(acceleration.clone()),
            };
            let times: Vec<f64> = (0..=steps).map(|k| duration * k as f64 / steps as f64).collect();
            let w = track.sample(&scenario.geometry, &times, &noise)?;
            let file = SeriesFile {
                times: times.clone(),
                w: w.iter().map(|v| v.as_slice().to_vec()).collect(),
            };
            write_json(&args.out_dir.join("series.json"), &serde_json::to_value(file).expect("series serializes"))?;
            argv.extend([
                "--duration".into(),
                num(duration),
                "--steps".into(),
                steps.to_string(),
                "--acceleration".into(),
                numbers(&acceleration),
            ]);
            json!({ "sigma": noise.sigma, "seed": noise.seed, "duration": duration, "steps": steps, "acceleration": acceleration })
        }
        _ => {
            let w = simulate_fdoa(&scenario.geometry, &scenario.truth, &noise)?;
            let file = MeasurementFile { w: w.values().as_slice().to_vec() };
            write_json(&args.out_dir.join("measurement.json"), &serde_json::to_value(file).expect("measurement serializes"))?;
            json!({ "sigma": noise.sigma, "seed": noise.seed })
        }
    };
    write_manifest(&args.out_dir, "simulate", &scenario_path, Some(noise.seed), config, argv)
}

pub fn localize(args: &LocalizeArgs) -> CliResult<()> {
    let scenario_path = absolute(&args.scenario)?;
    let scenario = load_scenario(&scenario_path)?;
    let dim = scenario.geometry.dim();
    let grid = position_grid(&args.grid, dim, DEFAULT_COUNTS)?;
    let mut cfg = SolverConfig::new(grid.clone());
    cfg.step_size = args.gamma;
    cfg.max_iters = args.max_iters;
    cfg.grad_tol = args.grad_tol;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let (w, source) = measurement(&scenario, args.measurement.as_ref(), &args.noise)?;
    create_dir(&args.out_dir)?;

    let family = scenario.family();
    let scan = degeneracy_scan(&family, &w, &grid)?;
    let result = solve(&family, &w, &cfg)?;
    let warning = scan.degenerate.then(|| {
        format!(
            "with {} pairs in {} dimensions every frame operator is invertible and E vanishes at all {} in-domain grid points; the measurement does not determine the position",
            scenario.geometry.pairs(),
            dim,
            scan.in_domain
        )
    });
    if let Some(text) = &warning {
        eprintln!("warning[degenerate]: {text}");
    }

    let trace_path = args.out_dir.join("trace.csv");
    write_csv(&trace_path, |out| {
        use std::io::Write;
        let header: Vec<String> = std::iter::once("k".to_string())
            .chain((1..=dim).map(|p| format!("x_{p}")))
            .chain(["E".to_string(), "grad_norm".to_string()])
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (k, it) in result.iterates.iter().enumerate() {
            writeln!(out, "{k},{},{},{}", numbers(it.point.coords().iter()), num(it.value), num(it.grad_norm))?;
        }
        Ok(())
    })?;
    let truth_distance = match source {
        Source::Simulated { .. } => Some((result.minimizer.coords() - &scenario.truth.position).norm()),
        Source::File(_) => None,
    };
    write_json(
        &args.out_dir.join("result.json"),
        &json!({
            "minimizer": result.minimizer.coords().as_slice(),
            "value": result.value,
            "status": result.status.as_str(),
            "iterations": result.steps(),
            "start": result.iterates[0].point.coords().as_slice(),
            "truth_distance": truth_distance,
            "degenerate": scan.degenerate,
            "warning": warning,
        }),
    )?;

    let mut argv = vec!["--scenario".to_string(), path_str(&scenario_path)];
    source.argv(&mut argv);
    grid_argv(&mut argv, "grid", &grid);
    argv.extend([
        "--gamma".into(),
        num(cfg.step_size),
        "--max-iters".into(),
        cfg.max_iters.to_string(),
        "--grad-tol".into(),
        num(cfg.grad_tol),
    ]);
    let config = json!({
        "measurement": source.json(),
        "grid": grid_json(&grid),
        "gamma": cfg.step_size,
        "max_iters": cfg.max_iters,
        "grad_tol": cfg.grad_tol,
        "step_tol": cfg.step_tol,
        "regularization": cfg.regularization,
    });
    write_manifest(&args.out_dir, "localize", &scenario_path, source.noise().map(|n| n.seed), config, argv)
}

pub fn diagnose(args: &DiagnoseArgs) -> CliResult<()> {
    let scenario_path = absolute(&args.scenario)?;
    let scenario = load_scenario(&scenario_path)?;
    let dim = scenario.geometry.dim();
    let grid = position_grid(&args.grid, dim, DEFAULT_COUNTS)?;
    if !(args.cert_radius > 0.0 && args.cert_radius.is_finite()) || args.cert_counts == 0 {
        return Err(CliError::usage("--cert-radius must be positive and --cert-counts at least 1"));
    }
    if let Some(t) = args.tau {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::usage("--tau must be finite and >= 0"));
        }
    }
    let (w, source) = measurement(&scenario, args.measurement.as_ref(), &args.noise)?;
    let tau = match (&source, args.tau) {
        (_, Some(t)) => t,
        (Source::Simulated { noise_norm, .. }, None) => noise_norm * noise_norm,
        (Source::File(_), None) => return Err(CliError::usage("--tau is required with --measurement")),
    };
    create_dir(&args.out_dir)?;

    let family = scenario.family();
    let report = level_set(&family, &w, &grid, tau)?;
    write_csv(&args.out_dir.join("level_set.csv"), |out| report.write_csv(out))?;

    let x0 = &scenario.truth.position;
    let radius = DVector::from_element(dim, args.cert_radius);
    let cert_grid = GridSpec::new(x0 - &radius, x0 + &radius, vec![args.cert_counts; dim])?;
    let samples: Vec<ParameterPoint<f64>> = cert_grid.points().collect();
    let tolerance = SpanTolerance::default();
    let cert = uniqueness_certificate(&family, &w, &samples, tolerance)?;
    let bound = match &source {
        Source::Simulated { noise_norm, .. } => {
            let check = residual_bound_check(&family, &ParameterPoint::new(x0.clone())?, &w, *noise_norm)?;
            json!({
                "error_at_truth": check.error_at_truth,
                "noise_energy": noise_norm * noise_norm,
                "bound_holds": check.bound_holds,
            })
        }
        Source::File(_) => Value::Null,
    };
    let SpanTolerance::Relative(rel) = tolerance else { unreachable!("default tolerance is relative") };
    let dims = family.dims();
    write_json(
        &args.out_dir.join("uniqueness.json"),
        &json!({
            "verdict": if cert.verdict == Verdict::Pass { "Pass" } else { "Fail" },
            "vectors": dims.n,
            "required": dims.m + dims.p,
            "relative_tolerance": rel,
            "samples": cert.samples.iter().map(|s| s.coords().as_slice().to_vec()).collect::<Vec<_>>(),
            "smallest_singular_values": cert.smallest_singular_values,
            "level_set": {
                "threshold": tau,
                "points": report.points.len(),
                "in_domain": report.in_domain,
                "fraction": report.fraction,
            },
            "residual_bound": bound,
        }),
    )?;

    let mut argv = vec!["--scenario".to_string(), path_str(&scenario_path)];
    source.argv(&mut argv);
    grid_argv(&mut argv, "grid", &grid);
    argv.extend([
        "--tau".into(),
        num(tau),
        "--cert-radius".into(),
        num(args.cert_radius),
        "--cert-counts".into(),
        args.cert_counts.to_string(),
    ]);
    let config = json!({
        "measurement": source.json(),
        "grid": grid_json(&grid),
        "tau": tau,
        "cert_radius": args.cert_radius,
        "cert_counts": args.cert_counts,
        "relative_tolerance": rel,
    });
    write_manifest(&args.out_dir, "diagnose", &scenario_path, source.noise().map(|n| n.seed), config, argv)
}

pub fn track(args: &TrackArgs) -> CliResult<()> {
    let scenario_path = absolute(&args.scenario)?;
    let series_path = absolute(&args.series)?;
    let scenario = load_scenario(&scenario_path)?;
    let dim = scenario.geometry.dim();
    let pos_grid = position_grid(&args.grid, dim, DEFAULT_TRACK_COUNTS)?;
    let vel_grid = build_grid(
        ["vel-lower", "vel-upper", "vel-counts"],
        args.vel_lower.as_ref(),
        args.vel_upper.as_ref(),
        args.vel_counts.as_ref(),
        DEFAULT_SPEED,
        DEFAULT_TRACK_COUNTS,
        dim,
    )?;
    let file: SeriesFile = read_json(&series_path)?;
    let samples = file
        .w
        .iter()
        .map(|v| {
            if v.len() == scenario.geometry.pairs() {
                Ok(DVector::from_vec(v.clone()))
            } else {
                Err(CliError::validation(
                    &series_path,
                    format!("sample has {} entries, scenario has {} pairs", v.len(), scenario.geometry.pairs()),
                ))
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let data = TimeSeries::new(file.times, samples).map_err(|e| CliError::validation(&series_path, e))?;
    create_dir(&args.out_dir)?;

    let family = scenario.family();
    let result = shooting_search(&family, &data, &pos_grid, &vel_grid)?;
    write_csv(&args.out_dir.join("trajectory.csv"), |out| result.best.write_csv(out))?;
    write_csv(&args.out_dir.join("shooting_trace.csv"), |out| result.write_trace_csv(out))?;
    let failed = result.trace.iter().filter(|c| !c.value.is_finite()).count();
    let last = result.best.len() - 1;
    write_json(
        &args.out_dir.join("track.json"),
        &json!({
            "value": result.value,
            "initial_position": result.best.positions[0].as_slice(),
            "initial_velocity": result.best.velocities[0].as_slice(),
            "final_position": result.best.positions[last].as_slice(),
            "final_velocity": result.best.velocities[last].as_slice(),
            "candidates": result.trace.len(),
            "failed_candidates": failed,
        }),
    )?;

    let mut argv = vec![
        "--scenario".to_string(),
        path_str(&scenario_path),
        "--series".into(),
        path_str(&series_path),
    ];
    grid_argv(&mut argv, "grid", &pos_grid);
    grid_argv(&mut argv, "vel", &vel_grid);
    let config = json!({
        "series": path_str(&series_path),
        "position_grid": grid_json(&pos_grid),
        "velocity_grid": grid_json(&vel_grid),
    });
    write_manifest(&args.out_dir, "track", &scenario_path, None, config, argv)
}

/// Argument vector recorded in a manifest, targeted at `--out-dir`.
pub fn replay_argv(args: &ReplayArgs) -> CliResult<Vec<String>> {
    let manifest: Value = read_json(&args.manifest)?;
    let bad = || CliError::validation(&args.manifest, "manifest lacks a string `args` array and `out_dir`");
    let recorded = manifest.get("args").and_then(Value::as_array).ok_or_else(bad)?;
    let mut argv = vec!["framefit".to_string()];
    for a in recorded {
        argv.push(a.as_str().ok_or_else(bad)?.to_string());
    }
    let out = match &args.out_dir {
        Some(dir) => path_str(dir),
        None => manifest.get("out_dir").and_then(Value::as_str).ok_or_else(bad)?.to_string(),
    };
    argv.extend(["--out-dir".to_string(), out]);
    Ok(argv)
}
