//! Subcommand implementations.

use std::path::{Path, PathBuf};

use iqc_cert::bundle::{content_hash, ExperimentBundle};
use iqc_cert::certifier::{
    sweep_margin, BoundsFamily, Certificate, ConstraintMode, FeasibilityOptions, LoopModel, MarginCurve, Verdict,
};
use iqc_cert::config::{BoundsConfig, PlantConfig};
use iqc_cert::gradient_bounds::{GradientBoundSet, SignClass};
use iqc_cert::learner::{train as run_training, Regulation, TrainConfig};
use iqc_cert::policy::{PatternFile, PolicyNet};
use iqc_cert::simulator::{
    build_flight, build_power, empirical_l2_gain, integrate, lowpass_noise, random_state, Benchmark, Controller,
    Dynamics, IqcChoice, PowerNetwork, QuadraticCost, Signal, ZeroController,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    CertifyArgs, CliError, GainArgs, GammaArgs, IqcArg, ReportArgs, SimulateArgs, SourceArgs, SweepArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn resolve(wd: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        wd.join(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(wd: &Path, p: &Path) -> Result<(T, Value)> {
    let path = resolve(wd, p);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{} is not valid JSON: {e}", path.display())))?;
    let parsed = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok((parsed, raw))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn emit(wd: &Path, out: Option<&PathBuf>, value: &Value) -> Result<()> {
    match out {
        Some(p) => write_json(&resolve(wd, p), value),
        None => {
            print_stdout(&format!("{}\n", serde_json::to_string_pretty(value)?))
        }
    }
}

/// Write to stdout; a reader that closed the pipe early (`| head`) is not an
/// error.
fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// A loaded plant: a bundled benchmark or a plant file.
enum Source {
    Preset { bench: Box<Benchmark>, iqc: IqcChoice },
    File(Box<PlantConfig>),
}

fn preset(name: &str) -> Result<Benchmark> {
    match name {
        "flight4" | "flight" => Ok(build_flight()?),
        "power_swing" | "power" => Ok(build_power(&PowerNetwork::ten_generator())?),
        other => Err(CliError::validation(format!(
            "unknown preset '{other}' (expected flight4 or power_swing)"
        ))),
    }
}

fn load_source(wd: &Path, args: &SourceArgs) -> Result<(Source, Value)> {
    if let Some(name) = &args.preset {
        let iqc = match args.iqc {
            IqcArg::Sector => IqcChoice::Sector,
            IqcArg::Zf => IqcChoice::ZamesFalb { pole: args.pole },
            IqcArg::Combined => IqcChoice::Combined { pole: args.pole },
        };
        let bench = preset(name)?;
        let snapshot = json!({ "preset": name, "iqc": iqc });
        return Ok((
            Source::Preset {
                bench: Box::new(bench),
                iqc,
            },
            snapshot,
        ));
    }
    let path = args
        .plant
        .as_ref()
        .ok_or_else(|| CliError::validation("either --preset or --plant is required"))?;
    let (cfg, raw): (PlantConfig, Value) = read_json(wd, path)?;
    Ok((Source::File(Box::new(cfg)), json!({ "plant": raw })))
}

impl Source {
    fn loop_model(&self) -> Result<LoopModel> {
        Ok(match self {
            Source::Preset { bench, iqc } => bench.loop_model(*iqc)?,
            Source::File(cfg) => cfg.loop_model()?,
        })
    }

    fn dynamics(&self) -> Result<Dynamics> {
        Ok(match self {
            Source::Preset { bench, .. } => bench.dynamics(),
            Source::File(cfg) => Dynamics::new(cfg.plant()?, cfg.residuals()?)?,
        })
    }

    fn cost(&self, n_s: usize, n_a: usize) -> QuadraticCost {
        match self {
            Source::Preset { bench, .. } => bench.cost.clone(),
            Source::File(_) => QuadraticCost {
                q: DMatrix::identity(n_s, n_s),
                r: DMatrix::identity(n_a, n_a),
            },
        }
    }

    fn benchmark(&self) -> Option<&Benchmark> {
        match self {
            Source::Preset { bench, .. } => Some(bench),
            Source::File(_) => None,
        }
    }
}

fn check_gamma(g: &GammaArgs) -> Result<()> {
    if !(g.gamma_min > 0.0 && g.gamma_max > g.gamma_min && g.gamma_max.is_finite()) {
        return Err(CliError::validation("need 0 < --gamma-min < --gamma-max < ∞"));
    }
    if !(g.tol > 0.0) {
        return Err(CliError::validation("--tol must be positive"));
    }
    Ok(())
}

fn certificate_json(cert: &Certificate, hash: &str) -> Result<Value> {
    let mut v = serde_json::to_value(cert)?;
    v.as_object_mut()
        .expect("certificates serialise to objects")
        .insert("config_hash".into(), Value::String(hash.to_string()));
    Ok(v)
}

fn family_for(source: &Source, mode: ConstraintMode, eps: f64, pattern: Option<&PatternFile>) -> Result<BoundsFamily> {
    let model_dims = match source {
        Source::Preset { bench, .. } => (bench.n_a(), bench.n_s()),
        Source::File(cfg) => (cfg.b.ncols(), cfg.a.nrows()),
    };
    let (n_a, n_s) = model_dims;
    if mode == ConstraintMode::L2Only {
        return Ok(BoundsFamily::Uniform { n_a, n_s });
    }
    let signs: Vec<Vec<SignClass>> = match (pattern, source.benchmark()) {
        (Some(p), _) => p.pattern.clone(),
        (None, Some(b)) => {
            if mode == ConstraintMode::Sparsity {
                return Ok(b.family(mode, eps));
            }
            b.sign_pattern.clone()
        }
        (None, None) => {
            return Err(CliError::validation(format!(
                "mode {} on a plant file needs --pattern",
                mode.name()
            )))
        }
    };
    if signs.len() != n_a || signs.iter().any(|r| r.len() != n_s) {
        return Err(CliError::validation(format!("pattern must be {n_a}×{n_s}")));
    }
    Ok(match mode {
        ConstraintMode::Sparsity => BoundsFamily::Masked {
            mask: signs
                .iter()
                .map(|r| r.iter().map(|s| *s != SignClass::Zero).collect())
                .collect(),
            n_s,
        },
        _ => BoundsFamily::Pattern {
            pattern: signs,
            n_s,
            eps,
        },
    })
}

pub fn certify(wd: &Path, args: CertifyArgs) -> Result<()> {
    check_gamma(&args.gamma)?;
    let (source, snapshot) = load_source(wd, &args.source)?;
    let model = source.loop_model()?;
    let (bounds, bounds_snapshot): (GradientBoundSet, Value) = match (&args.bounds, &args.mode, args.level) {
        (Some(p), _, _) => {
            let (cfg, raw): (BoundsConfig, Value) = read_json(wd, p)?;
            (cfg.resolve(model.n_a(), model.n_s())?, raw)
        }
        (None, Some(mode), Some(l)) => {
            let mode: ConstraintMode = mode.parse()?;
            let fam = family_for(&source, mode, args.eps, None)?;
            (fam.at(l)?, json!({ "mode": mode, "level": l, "eps": args.eps }))
        }
        _ => return Err(CliError::validation("give --bounds, or --mode with --level")),
    };
    let config = json!({
        "source": snapshot,
        "bounds": bounds_snapshot,
        "gamma_min": args.gamma.gamma_min,
        "gamma_max": args.gamma.gamma_max,
        "tol": args.gamma.tol,
    });
    let hash = content_hash(&config);
    let opts = FeasibilityOptions::default();
    let top = model.certify_at(&bounds, args.gamma.gamma_max, &opts)?;
    let cert = if top.feasible {
        model.certify(&bounds, args.gamma.gamma_min, args.gamma.gamma_max, args.gamma.tol, &opts)?
    } else {
        top
    };
    emit(wd, args.out.as_ref(), &certificate_json(&cert, &hash)?)?;
    if let Verdict::NumericalFailure(msg) = &cert.verdict {
        return Err(CliError::numerical(msg.clone()));
    }
    Ok(())
}

/// Parses `start:step:stop` (inclusive) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || CliError::validation(format!("invalid grid '{text}'"));
    let text = text.trim();
    if text.is_empty() {
        return Err(CliError::validation("level grid is empty"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(bad());
        }
        if b < a {
            return Err(CliError::validation("level grid is empty"));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // Rounded to 12 significant digits so that `0.1:0.1:0.3` prints cleanly.
        (0..=n)
            .map(|k| {
                let v = a + k as f64 * step;
                format!("{v:.12e}").parse().unwrap_or(v)
            })
            .collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CliError::validation("level grid must be non-negative and strictly increasing"));
    }
    Ok(grid)
}

fn parse_modes(modes: &[String]) -> Result<Vec<ConstraintMode>> {
    let mut out = Vec::new();
    for m in modes {
        for part in m.split(',') {
            let part = part.trim();
            if part == "all" {
                out.extend([
                    ConstraintMode::L2Only,
                    ConstraintMode::Sparsity,
                    ConstraintMode::Nonhomogeneous,
                ]);
            } else {
                out.push(part.parse()?);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::validation("no constraint mode given"));
    }
    let mut seen = Vec::new();
    out.retain(|m| {
        if seen.contains(m) {
            false
        } else {
            seen.push(*m);
            true
        }
    });
    Ok(out)
}

/// One row of a sweep CSV.
#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    l: f64,
    feasible: bool,
    gamma: Option<f64>,
    solve_ms: f64,
}

fn sweep_file(mode: ConstraintMode) -> String {
    format!("sweep_{}.csv", mode.name())
}

pub fn sweep(wd: &Path, args: SweepArgs) -> Result<()> {
    check_gamma(&args.gamma)?;
    let grid = parse_grid(&args.grid)?;
    let modes = parse_modes(&args.mode)?;
    if !(args.eps >= 0.0 && args.eps < 1.0) {
        return Err(CliError::validation("--eps must lie in [0, 1)"));
    }
    let (source, snapshot) = load_source(wd, &args.source)?;
    let (pattern, pattern_snapshot) = match &args.pattern {
        Some(p) => {
            let (pf, raw): (PatternFile, Value) = read_json(wd, p)?;
            (Some(pf), raw)
        }
        None => (None, Value::Null),
    };
    let model = source.loop_model()?;
    let families = modes
        .iter()
        .map(|&m| family_for(&source, m, args.eps, pattern.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({
        "source": snapshot,
        "modes": modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "grid": grid,
        "eps": args.eps,
        "pattern": pattern_snapshot,
        "gamma_min": args.gamma.gamma_min,
        "gamma_max": args.gamma.gamma_max,
        "tol": args.gamma.tol,
    });
    let mut bundle = ExperimentBundle::start("sweep", config, None);
    let dir = resolve(wd, &args.out_dir);
    std::fs::create_dir_all(&dir)?;
    let opts = FeasibilityOptions::default();
    let mut failures = 0;
    for (mode, fam) in modes.iter().zip(&families) {
        let curve = sweep_margin(
            &model,
            fam,
            &grid,
            args.gamma.gamma_min,
            args.gamma.gamma_max,
            args.gamma.tol,
            &opts,
        )?;
        failures += curve
            .points
            .iter()
            .filter(|p| matches!(p.verdict, Verdict::NumericalFailure(_)))
            .count();
        let name = sweep_file(*mode);
        write_curve(&dir.join(&name), &curve)?;
        bundle.add_output(name);
    }
    bundle.finish(&dir.join("bundle.json"))?;
    if failures > 0 {
        return Err(CliError::numerical(format!(
            "{failures} sweep point(s) ended in numerical failure"
        )));
    }
    Ok(())
}

fn write_curve(path: &Path, curve: &MarginCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &curve.points {
        w.serialize(SweepRow {
            l: p.l,
            feasible: p.feasible,
            gamma: p.gamma,
            solve_ms: p.solve_ms,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn load_controller(wd: &Path, path: Option<&PathBuf>, n_a: usize) -> Result<(Option<PolicyNet>, Value)> {
    match path {
        Some(p) => {
            // Accepts a bare policy or a checkpoint wrapping one under "policy".
            let (raw, _): (Value, Value) = read_json(wd, p)?;
            let inner = raw.get("policy").cloned().unwrap_or_else(|| raw.clone());
            let net: PolicyNet = serde_json::from_value(inner)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            if net.n_out() != n_a {
                return Err(CliError::validation(format!(
                    "controller has {} outputs, plant has {n_a} inputs",
                    net.n_out()
                )));
            }
            Ok((Some(net), raw))
        }
        None => Ok((None, Value::Null)),
    }
}

pub fn simulate(wd: &Path, args: SimulateArgs) -> Result<()> {
    if !(args.h > 0.0 && args.horizon > 0.0 && args.x0_std >= 0.0 && args.explore_std >= 0.0) {
        return Err(CliError::validation("need --h > 0, --T > 0 and non-negative standard deviations"));
    }
    let (source, snapshot) = load_source(wd, &args.source)?;
    let dynamics = source.dynamics()?;
    let (n_s, n_a) = (dynamics.plant.n_s(), dynamics.plant.n_a());
    let (net, net_snapshot) = load_controller(wd, args.controller.as_ref(), n_a)?;
    let zero = ZeroController { n_a };
    let controller: &dyn Controller = match &net {
        Some(n) => n,
        None => &zero,
    };
    let steps = (args.horizon / args.h).round() as usize;
    let exploration = if args.explore_std > 0.0 {
        lowpass_noise(
            n_a,
            steps + 1,
            args.h,
            args.explore_cutoff,
            args.explore_std,
            f64::INFINITY,
            args.seed.wrapping_add(1),
        )
    } else {
        Signal::zeros(n_a, steps + 1, args.h)
    };
    let x0 = random_state(n_s, args.x0_std, args.seed);
    let cost = source.cost(n_s, n_a);
    let traj = integrate(&dynamics, controller, &exploration, &x0, args.horizon, args.h, Some(&cost))?;

    let out = resolve(wd, &args.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(&out)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n_s).map(|i| format!("x{i}")));
    header.extend((0..n_a).map(|i| format!("u{i}")));
    header.extend((0..n_a).map(|i| format!("e{i}")));
    header.push("r".into());
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![traj.times[k]];
        row.extend(traj.states[k].iter());
        row.extend(traj.actions[k].iter());
        row.extend(traj.exploration[k].iter());
        row.push(-traj.costs[k]);
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    if traj.diverged {
        eprintln!("warning: trajectory diverged at t = {}", traj.times.last().copied().unwrap_or(0.0));
    }

    let config = json!({
        "source": snapshot,
        "controller": net_snapshot,
        "seed": args.seed,
        "h": args.h,
        "T": args.horizon,
        "x0_std": args.x0_std,
        "explore_std": args.explore_std,
        "explore_cutoff": args.explore_cutoff,
    });
    let mut bundle = ExperimentBundle::start("simulate", config, Some(args.seed));
    bundle.add_output(out.file_name().map(PathBuf::from).unwrap_or_default());
    bundle.finish(&out.with_extension("bundle.json"))?;
    Ok(())
}

pub fn gain(wd: &Path, args: GainArgs) -> Result<()> {
    check_gamma(&args.gamma)?;
    if args.n_excitations == 0 {
        return Err(CliError::validation("--n-excitations must be positive"));
    }
    if !(args.h > 0.0 && args.horizon > 0.0 && args.amplitude > 0.0 && args.cutoff > 0.0 && args.active > 0.0) {
        return Err(CliError::validation("--h, --T, --amplitude, --cutoff and --active must be positive"));
    }
    let (source, snapshot) = load_source(wd, &args.source)?;
    let dynamics = source.dynamics()?;
    let (n_s, n_a) = (dynamics.plant.n_s(), dynamics.plant.n_a());
    let (net, net_snapshot) = load_controller(wd, args.controller.as_ref(), n_a)?;
    let zero = ZeroController { n_a };
    let controller: &dyn Controller = match &net {
        Some(n) => n,
        None => &zero,
    };
    let steps = (args.horizon / args.h).round() as usize;
    let excitations: Vec<Signal> = (0..args.n_excitations as u64)
        .map(|k| {
            lowpass_noise(
                n_a,
                steps + 1,
                args.h,
                args.cutoff,
                args.amplitude,
                args.active,
                args.seed.wrapping_add(k),
            )
        })
        .collect();
    let estimate = empirical_l2_gain(&dynamics, controller, &excitations, args.horizon)?;

    // Certified γ for the set the controller provably lies in: its
    // observation mask at its own Lipschitz bound.
    let (mask, level) = match &net {
        Some(n) => (n.input_mask.clone(), n.lipschitz_upper()),
        None => (vec![vec![false; n_s]; n_a], 0.0),
    };
    if mask.len() != n_a || mask.iter().any(|r| r.len() != n_s) {
        return Err(CliError::validation(format!("controller input mask must be {n_a}×{n_s}")));
    }
    let model = source.loop_model()?;
    let bounds = GradientBoundSet::masked(&mask, n_s, level)?;
    let opts = FeasibilityOptions::default();
    let top = model.certify_at(&bounds, args.gamma.gamma_max, &opts)?;
    let cert = if top.feasible {
        model.certify(&bounds, args.gamma.gamma_min, args.gamma.gamma_max, args.gamma.tol, &opts)?
    } else {
        top
    };
    let config = json!({
        "source": snapshot,
        "controller": net_snapshot,
        "n_excitations": args.n_excitations,
        "seed": args.seed,
        "h": args.h,
        "T": args.horizon,
        "amplitude": args.amplitude,
        "cutoff": args.cutoff,
        "active": args.active,
        "gamma_min": args.gamma.gamma_min,
        "gamma_max": args.gamma.gamma_max,
        "tol": args.gamma.tol,
    });
    let out = json!({
        "empirical_gain": estimate.gain,
        "certified_gamma": cert.feasible.then_some(cert.gamma),
        "lipschitz_level": level,
        "verdict": cert.verdict,
        "ratios": estimate.ratios,
        "diverged": estimate.diverged,
        "in_domain": estimate.in_domain,
        "config_hash": content_hash(&config),
    });
    emit(wd, args.out.as_ref(), &out)?;
    if let Verdict::NumericalFailure(msg) = &cert.verdict {
        return Err(CliError::numerical(msg.clone()));
    }
    Ok(())
}

/// One row of the learning-curve CSV.
#[derive(Debug, Serialize)]
struct CurveRow {
    iter: usize,
    mean_reward: f64,
    lipschitz: f64,
    kl: f64,
    w2: f64,
    sigma: f64,
    failed: bool,
}

pub fn train(wd: &Path, args: TrainArgs) -> Result<()> {
    let bench = preset(&args.preset)?;
    let (mut cfg, cfg_snapshot) = match &args.config {
        Some(p) => {
            let (c, raw): (TrainConfig, Value) = read_json(wd, p)?;
            (c, raw)
        }
        None => (TrainConfig::default(), Value::Null),
    };
    if let Some(m) = &args.mode {
        cfg.mode = m.parse::<Regulation>()?;
    }
    if let Some(l) = args.lcert {
        cfg.l_cert = l;
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if !(args.eps >= 0.0 && args.eps < 1.0) {
        return Err(CliError::validation("--eps must lie in [0, 1)"));
    }
    let dir = resolve(wd, &args.out_dir);
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let config = json!({
        "preset": args.preset,
        "config_file": cfg_snapshot,
        "effective": cfg,
        "eps": args.eps,
    });
    let hash = content_hash(&config);
    let mut bundle = ExperimentBundle::start("train", config, Some(cfg.seed));

    let result = run_training(&bench, &cfg, |_, _| {})?;

    let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
    for r in &result.curve {
        w.serialize(CurveRow {
            iter: r.iter,
            mean_reward: r.mean_reward,
            lipschitz: r.lipschitz,
            kl: r.kl,
            w2: r.w2,
            sigma: r.sigma,
            failed: r.failed,
        })?;
    }
    w.flush()?;
    bundle.add_output("curve.csv");
    let policy_json = |net: &PolicyNet, iter: Option<usize>| -> Result<Value> {
        Ok(json!({
            "config_hash": hash,
            "iteration": iter,
            "policy": serde_json::to_value(net)?,
        }))
    };
    for (iter, net) in &result.checkpoints {
        let name = format!("checkpoints/policy_{iter:05}.json");
        write_json(&dir.join(&name), &policy_json(net, Some(*iter))?)?;
        bundle.add_output(name);
    }
    // The plain policy (loadable by `simulate`/`gain`) and its metadata.
    write_json(&dir.join("policy.json"), &serde_json::to_value(&result.net)?)?;
    bundle.add_output("policy.json");
    match result.monitor.pattern_file(args.eps, cfg.l_cert) {
        Ok(pf) => {
            write_json(&dir.join("pattern.json"), &serde_json::to_value(&pf)?)?;
            bundle.add_output("pattern.json");
        }
        Err(e) => eprintln!("warning: no sign pattern exported: {e}"),
    }
    bundle.finish(&dir.join("bundle.json"))?;
    let failed = result.curve.iter().filter(|r| r.failed).count();
    print_stdout(&format!(
        "{}\n",
        json!({
            "iterations": result.curve.len(),
            "failed_iterations": failed,
            "final_lipschitz": result.net.lipschitz_upper(),
            "final_mean_reward": result.curve.last().map(|r| r.mean_reward),
            "config_hash": hash,
        })
    ))?;
    Ok(())
}

/// One row of the tidy margin table.
#[derive(Debug, Serialize)]
struct MarginRow<'a> {
    mode: &'a str,
    l: f64,
    feasible: bool,
    gamma: Option<f64>,
}

pub fn report(wd: &Path, args: ReportArgs) -> Result<()> {
    let dir = resolve(wd, &args.dir);
    let bundle_path = dir.join("bundle.json");
    if !bundle_path.exists() {
        return Err(CliError::validation(format!(
            "incomplete bundle: {} not found",
            bundle_path.display()
        )));
    }
    let bundle = ExperimentBundle::load(&bundle_path)?;
    if bundle.command != "sweep" {
        return Err(CliError::validation(format!(
            "bundle was produced by '{}', not by a sweep",
            bundle.command
        )));
    }
    let modes: Vec<String> = bundle
        .config
        .get("modes")
        .and_then(|m| serde_json::from_value(m.clone()).ok())
        .ok_or_else(|| CliError::validation("incomplete bundle: no mode list"))?;
    if modes.len() != bundle.outputs.len() {
        return Err(CliError::validation("incomplete bundle: mode and output lists differ"));
    }
    let out = args.out.as_ref().map(|p| resolve(wd, p)).unwrap_or_else(|| dir.join("margins.csv"));
    let mut tables = Vec::new();
    for (mode, file) in modes.iter().zip(&bundle.outputs) {
        let path = dir.join(file);
        if !path.exists() {
            return Err(CliError::validation(format!(
                "incomplete bundle: {} missing",
                path.display()
            )));
        }
        let mut r = csv::Reader::from_path(&path)?;
        let rows = r.deserialize::<SweepRow>().collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(CliError::validation(format!("{} has no rows", path.display())));
        }
        tables.push((mode.clone(), rows));
    }
    if tables.is_empty() {
        return Err(CliError::validation("bundle lists no sweep outputs"));
    }
    let mut w = csv::Writer::from_path(&out)?;
    for (mode, rows) in &tables {
        for row in rows {
            w.serialize(MarginRow {
                mode,
                l: row.l,
                feasible: row.feasible,
                gamma: row.gamma,
            })?;
        }
    }
    w.flush()?;

    let mut text = format!("config {}\n", bundle.config_hash);
    text += &format!("{:<16} {:>12} {:>12}\n", "mode", "max_cert_l", "gamma_at_max");
    let mut maxima = Vec::new();
    for (mode, rows) in &tables {
        let best = rows.iter().filter(|r| r.feasible).max_by(|a, b| a.l.total_cmp(&b.l));
        let (l, g) = match best {
            Some(r) => (r.l, r.gamma),
            None => (0.0, None),
        };
        maxima.push(l);
        let g = g.map(|g| format!("{g:.4}")).unwrap_or_else(|| "-".into());
        text += &format!("{mode:<16} {l:>12.4} {g:>12}\n");
    }
    let increasing = maxima.windows(2).all(|w| w[1] > w[0]);
    text += &format!(
        "ordering: {}\n",
        if increasing { "strictly increasing" } else { "not strictly increasing" }
    );
    print_stdout(&text)
}
