//! Command-line runner: one subcommand per experiment, all parameters from the config.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::averaging::{
    classify_system, ensemble_deviation, find_zeros, integrate_averaged, median_deviation, normalize_system,
};
use crate::chebyshev::Cheb;
use crate::cohomology::{a0_span_report, write_csv as write_orbits_csv};
use crate::cones::{cone_check, derive_cone_params, expansion_check, Cone};
use crate::config::{ExperimentConfig, HorizontalCurve};
use crate::constants::{derive_standard_constants_with, ConstantsLedger};
use crate::error::{Error, Result};
use crate::pairs::{
    pushforward_pair_checked, random_prestandard_pair, validate_pair, CurveLevel, PairFamily, StandardCurve,
    StandardPair, WeightedPair,
};
use crate::patches::{
    build_foliation, build_rectangle, gauge_telemetry, patch_from_foliation, pushforward_patch,
    smooth_measure_to_family, write_telemetry_csv,
};
use crate::report::{DynWrite, ErrorReport, OutputDir, RunInfo};
use crate::rng::{mean_stderr, stream, uniform_point};
use crate::slopes::{
    expansion_factors, inverse_jacobian_direct, inverse_jacobian_formula, lambda_c, log_jacobian_identity,
    max_rel_entry_error, psi_star, slope_contraction, slope_s_star, star_depth, PsiField, DEFAULT_RHO_REG,
};
use crate::stats::{
    calibrate_sink_constant, central_lyapunov, correlation_decay, physical_measure, rate_scaling,
    scan_mostly_expanding, sink_deviations, sink_localization, tv_contraction, write_scan_csv,
};
use crate::system::{FastSlowSystem, TorusPoint};
use crate::transfer::{averaged_drift_with, invariant_density, DriftSettings};

pub const THREADS_ENV: &str = "FASTSLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fastslow", version, about = "Fast-slow torus map experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides the config and the environment).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides ε.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub eps: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Invariant fibre densities on a θ grid.
    Density,
    /// Averaged drift, its zeros and the averaged ODE.
    Average,
    Classify,
    /// Rescales ω so that the centre exponent at the sink is ε·1.
    Normalize,
    Slopes,
    Cones,
    /// Periodic orbits and the span margin.
    Orbits,
    PairPush,
    PatchPush,
    Telemetry,
    Lyapunov,
    Measure,
    Correlations,
    RateScaling,
    Sink,
    Tv,
    AppendixCheck,
    Constants,
    Scan,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Density => "density",
            Command::Average => "average",
            Command::Classify => "classify",
            Command::Normalize => "normalize",
            Command::Slopes => "slopes",
            Command::Cones => "cones",
            Command::Orbits => "orbits",
            Command::PairPush => "pair-push",
            Command::PatchPush => "patch-push",
            Command::Telemetry => "telemetry",
            Command::Lyapunov => "lyapunov",
            Command::Measure => "measure",
            Command::Correlations => "correlations",
            Command::RateScaling => "rate-scaling",
            Command::Sink => "sink",
            Command::Tv => "tv",
            Command::AppendixCheck => "appendix-check",
            Command::Constants => "constants",
            Command::Scan => "scan",
        }
    }
}

struct Ctx<'a> {
    sys: FastSlowSystem,
    cfg: &'a ExperimentConfig,
    seed: u64,
    out: OutputDir,
}

impl Ctx<'_> {
    fn ledger(&self) -> Result<ConstantsLedger> {
        let c = &self.cfg.constants;
        derive_standard_constants_with(&self.sys, c.t0, &c.ledger_settings())
    }
}

fn csv(out: &mut OutputDir, name: &str, f: impl FnOnce(&mut DynWrite) -> std::io::Result<()>) -> Result<()> {
    out.write_with(name, |w| f(&mut DynWrite(w)))
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                0
            } else {
                2
            }
        }
    }
}

fn threads_for(cli: &Cli, cfg: &ExperimentConfig) -> usize {
    cli.threads
        .or(cfg.threads)
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Resolves the config (file, then flags) and runs the subcommand.
pub fn run(cli: &Cli) -> i32 {
    let mut out_dir: Option<PathBuf> = cli.out.clone();
    let result = (|| -> Result<()> {
        let mut cfg = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(e) = cli.eps {
            cfg.epsilon = Some(e);
        }
        let threads = threads_for(cli, &cfg);
        cfg.threads = Some(threads);
        let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("fastslow-out"));
        cfg.out = Some(out.clone());
        out_dir = Some(out.clone());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        pool.install(|| run_resolved(cli.command, &cfg, threads))
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            let report = ErrorReport::from(&e);
            eprintln!("{}", report.to_json());
            if let Some(dir) = out_dir {
                if std::fs::create_dir_all(&dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), report.to_json() + "\n");
                }
            }
            e.exit_code()
        }
    }
}

/// Runs one subcommand with a fully resolved config.
pub fn run_resolved(cmd: Command, cfg: &ExperimentConfig, threads: usize) -> Result<()> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from("fastslow-out"));
    let mut out = OutputDir::create(&root)?;
    out.write_text("config.resolved.toml", &cfg.to_toml())?;
    let mut ctx = Ctx { sys, cfg, seed: cfg.seed, out };
    let summary = match cmd {
        Command::Density => density(&mut ctx)?,
        Command::Average => average(&mut ctx)?,
        Command::Classify => serde_json::to_value(classify_system(&ctx.sys)?).expect("json"),
        Command::Normalize => normalize(&mut ctx)?,
        Command::Slopes => slopes(&mut ctx)?,
        Command::Cones => cones(&mut ctx)?,
        Command::Orbits => orbits(&mut ctx)?,
        Command::PairPush => pair_push(&mut ctx)?,
        Command::PatchPush => patch_push(&mut ctx)?,
        Command::Telemetry => telemetry(&mut ctx)?,
        Command::Lyapunov => lyapunov(&mut ctx)?,
        Command::Measure => measure(&mut ctx)?,
        Command::Correlations => correlations(&mut ctx)?,
        Command::RateScaling => rate(&mut ctx)?,
        Command::Sink => sink(&mut ctx)?,
        Command::Tv => tv(&mut ctx)?,
        Command::AppendixCheck => appendix(&mut ctx)?,
        Command::Constants => constants(&mut ctx)?,
        Command::Scan => scan(&mut ctx)?,
    };
    ctx.out.write_json(&format!("{}.json", cmd.name()), &summary)?;
    let mut files = ctx.out.files().to_vec();
    files.push("run.json".into());
    let info = RunInfo {
        subcommand: cmd.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: ctx.seed,
        threads,
        epsilon: ctx.sys.epsilon(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        files,
    };
    ctx.out.write_json("run.json", &info)
}

fn density(ctx: &mut Ctx) -> Result<Value> {
    let b = &ctx.cfg.density;
    let sys = &ctx.sys;
    let fibres: Vec<Result<_>> = (0..b.n_fibres)
        .into_par_iter()
        .map(|k| invariant_density(sys, k as f64 / b.n_fibres as f64, b.n, b.tol))
        .collect();
    let fibres: Vec<_> = fibres.into_iter().collect::<Result<_>>()?;
    csv(&mut ctx.out, "density.csv", |w| {
        writeln!(w, "theta,x,rho")?;
        for d in &fibres {
            for (x, v) in d.grid().zip(&d.values) {
                writeln!(w, "{},{},{}", d.theta, x, v)?;
            }
        }
        Ok(())
    })?;
    let rows: Vec<Value> = fibres
        .iter()
        .map(|d| {
            let dev = d.values.iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
            json!({"theta": d.theta, "residual": d.residual, "iterations": d.iterations, "max_deviation_from_one": dev})
        })
        .collect();
    Ok(json!({ "fibres": rows }))
}

fn average(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.average.clone();
    let drift = averaged_drift_with(
        &ctx.sys,
        DriftSettings { n_theta: b.n_theta, n: b.n, tol: b.tol, ..DriftSettings::default() },
    )?;
    csv(&mut ctx.out, "drift.csv", |w| drift.write_csv(w))?;
    let zeros = find_zeros(&drift)?;
    let traj = integrate_averaged(&drift, b.theta0, b.t_end, b.dt)?;
    csv(&mut ctx.out, "ode.csv", |w| {
        writeln!(w, "t,theta")?;
        for (t, th) in traj.t.iter().zip(&traj.theta) {
            writeln!(w, "{t},{th}")?;
        }
        Ok(())
    })?;
    let median = if b.members > 0 {
        Some(median_deviation(&ensemble_deviation(&ctx.sys, &drift, b.t_end, b.members, ctx.seed)?))
    } else {
        None
    };
    Ok(json!({
        "zeros": zeros,
        "ode_theta_end": traj.last(),
        "median_sup_deviation": median,
    }))
}

fn normalize(ctx: &mut Ctx) -> Result<Value> {
    let c = classify_system(&ctx.sys)?;
    let n = normalize_system(&ctx.sys)?;
    ctx.out.write_text("normalized_system.toml", &n.to_toml())?;
    Ok(json!({"psi_bar_star_at_sink": c.psi_bar_star_at_sink, "epsilon": n.epsilon()}))
}

fn slopes(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.slopes.clone();
    let sys = &ctx.sys;
    let contraction = slope_contraction(sys)?;
    let depth = star_depth(sys, &contraction, b.tol);
    let mut rng = stream(ctx.seed, "slopes", 0);
    let pts: Vec<TorusPoint> = (0..b.points).map(|_| uniform_point(&mut rng)).collect();
    let rows: Vec<Result<(TorusPoint, f64, f64)>> = pts
        .par_iter()
        .map(|&p| Ok((p, slope_s_star(sys, p, b.tol)?.value, psi_star(sys, p, b.tol))))
        .collect();
    let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
    csv(&mut ctx.out, "slopes.csv", |w| {
        writeln!(w, "x,theta,s_star,psi_star")?;
        for (p, s, psi) in &rows {
            writeln!(w, "{},{},{},{}", p.x, p.theta, s, psi)?;
        }
        Ok(())
    })?;
    let psi = PsiField::new(sys, DEFAULT_RHO_REG)?;
    if let Some(&p) = pts.first() {
        let e = expansion_factors(sys, p, b.n, &psi);
        csv(&mut ctx.out, "expansion.csv", |w| e.write_csv(w))?;
    }
    Ok(json!({
        "contraction": contraction,
        "star_depth": depth,
        "lambda_c": lambda_c(sys),
        "psi_n0": psi.n0,
    }))
}

fn cones(ctx: &mut Ctx) -> Result<Value> {
    let sys = &ctx.sys;
    let params = derive_cone_params(sys)?;
    let eps = sys.epsilon();
    let n = ctx.cfg.cones.samples;
    let results: Vec<(bool, bool, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(ctx.seed, "cones", i as u64);
            let p = uniform_point(&mut rng);
            let u = [1.0, eps * params.chi_u * (2.0 * rng.gen::<f64>() - 1.0)];
            let c = [params.chi_c * (2.0 * rng.gen::<f64>() - 1.0), 1.0];
            let j = sys.jacobian(p);
            let fwd = cone_check(sys, &params, j.apply(u), Cone::Unstable);
            let back = cone_check(sys, &params, j.inverse().apply(c), Cone::Centre);
            (fwd, back, expansion_check(sys, p, u))
        })
        .collect();
    let unstable_fail = results.iter().filter(|r| !r.0).count();
    let centre_fail = results.iter().filter(|r| !r.1).count();
    let min_ratio = results.iter().fold(f64::INFINITY, |m, r| m.min(r.2));
    Ok(json!({
        "params": params,
        "samples": n,
        "unstable_failures": unstable_fail,
        "centre_failures": centre_fail,
        "min_expansion_ratio": min_ratio,
    }))
}

fn orbits(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.orbits.clone();
    let reports: Vec<Result<_>> = (0..b.n_theta)
        .map(|i| a0_span_report(&ctx.sys, i as f64 / b.n_theta as f64, b.max_period))
        .collect();
    let reports: Vec<_> = reports.into_iter().collect::<Result<_>>()?;
    csv(&mut ctx.out, "orbits.csv", |w| write_orbits_csv(&reports, w))?;
    let min = reports.iter().fold(f64::INFINITY, |m, r| m.min(r.margin));
    Ok(json!({
        "margins": reports.iter().map(|r| json!({"theta": r.theta, "margin": r.margin, "orbits": r.orbits.len()})).collect::<Vec<_>>(),
        "min_margin": min,
        "span_test_passed": min > b.margin_threshold,
    }))
}

fn pair_push(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.pairs.clone();
    let ledger = ctx.ledger()?;
    let sys = &ctx.sys;
    let rows: Vec<Result<(usize, f64, f64, f64, bool)>> = (0..b.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(ctx.seed, "pair-push", i as u64);
            let pair = random_prestandard_pair(&ledger, &mut rng);
            let mut fam = PairFamily::single(pair);
            let mut defect: f64 = 0.0;
            for _ in 0..b.steps {
                let mut next = Vec::new();
                for m in &fam.members {
                    let (kids, err) = pushforward_pair_checked(sys, &ledger, &m.pair)?;
                    defect = defect.max(err);
                    next.extend(kids.members.into_iter().map(|k| WeightedPair { weight: m.weight * k.weight, pair: k.pair }));
                }
                fam = PairFamily { members: next };
            }
            let mut max_r: f64 = 0.0;
            let mut valid = true;
            for m in &fam.members {
                let v = validate_pair(&ledger, &m.pair, CurveLevel::Standard);
                max_r = max_r.max(v.r);
                valid &= v.valid;
            }
            Ok((fam.len(), (fam.total_weight() - 1.0).abs(), defect, max_r, valid))
        })
        .collect();
    let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
    csv(&mut ctx.out, "pairs.csv", |w| {
        writeln!(w, "index,pieces,weight_error,projection_error,max_r,valid")?;
        for (i, r) in rows.iter().enumerate() {
            writeln!(w, "{},{},{},{},{},{}", i, r.0, r.1, r.2, r.3, u8::from(r.4))?;
        }
        Ok(())
    })?;
    Ok(json!({
        "pairs": rows.len(),
        "all_valid": rows.iter().all(|r| r.4),
        "max_weight_error": rows.iter().fold(0.0_f64, |m, r| m.max(r.1)),
        "max_projection_error": rows.iter().fold(0.0_f64, |m, r| m.max(r.2)),
    }))
}

fn horizontal_curve(ledger: &ConstantsLedger, c: &HorizontalCurve) -> StandardCurve {
    StandardCurve {
        g: Cheb::constant(c.x0, c.x0 + c.length, c.theta0),
        z: (ledger.delta / c.length).max(2.0),
        trimmed: false,
    }
}

fn patch_push(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.patches.clone();
    let ledger = ctx.ledger()?;
    let sys = &ctx.sys;
    let rect = build_rectangle(sys, &ledger, &horizontal_curve(&ledger, &b.base), b.height)?;
    let fol = build_foliation(&rect)?;
    let (_, patch) = patch_from_foliation(&ledger, &rect, &fol, |_, _| 1.0)?;
    let fam = pushforward_patch(sys, &ledger, &patch, b.steps)?;
    let obs = |x: f64, t: f64| (std::f64::consts::TAU * t).sin() + 0.3 * (std::f64::consts::TAU * x).cos();
    let pulled = patch.integrate(|x, t| {
        let mut p = TorusPoint::new(x, t);
        for _ in 0..b.steps {
            p = sys.step(p);
        }
        obs(p.x, p.theta)
    });
    let transport_error = (fam.integrate(obs) - pulled).abs();
    csv(&mut ctx.out, "patches.csv", |w| {
        writeln!(w, "index,weight,Z,R,L,min_height,max_height")?;
        for (i, m) in fam.members.iter().enumerate() {
            let g = &m.patch.gauges;
            writeln!(w, "{},{},{},{},{},{},{}", i, m.weight, g.big_z, g.r, g.l, g.min_height, g.max_height)?;
        }
        Ok(())
    })?;
    Ok(json!({
        "rectangle": {"height": rect.height, "z": rect.z, "Z": rect.big_z, "top_fit_residual": rect.top_fit_residual},
        "foliation": {"dlog": fol.dlog, "hlog": fol.hlog},
        "pieces": fam.len(),
        "total_weight": fam.total_weight(),
        "mean_L": fam.mean_l(),
        "max_M": fam.max_m(),
        "proper": fam.is_proper(ledger.b_prop),
        "transport_error": transport_error,
    }))
}

fn telemetry(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.telemetry.clone();
    let ledger = ctx.ledger()?;
    let fam = smooth_measure_to_family(&ctx.sys, &ledger, &b.density, b.kappa_max)?;
    let rows = gauge_telemetry(&ctx.sys, &ledger, &fam, b.horizon, &b.checkpoints, b.max_pieces, ctx.seed)?;
    csv(&mut ctx.out, "telemetry.csv", |w| write_telemetry_csv(&rows, w))?;
    Ok(json!({"B_prop": ledger.b_prop, "rows": rows}))
}

fn lyapunov(ctx: &mut Ctx) -> Result<Value> {
    let r = central_lyapunov(&ctx.sys, &ctx.cfg.lyapunov, ctx.seed)?;
    csv(&mut ctx.out, "lyapunov.csv", |w| {
        writeln!(w, "sample,estimate")?;
        for (i, v) in r.per_sample.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    })?;
    Ok(serde_json::to_value(&r).expect("json"))
}

fn measure(ctx: &mut Ctx) -> Result<Value> {
    let r = physical_measure(&ctx.sys, &ctx.cfg.measure, ctx.seed);
    csv(&mut ctx.out, "measure.csv", |w| r.histogram.write_csv(w))?;
    Ok(json!({
        "theta_spread": r.theta_spread,
        "theta_mean_offset": r.theta_mean_offset,
        "total": r.histogram.total,
        "theta_mode": r.histogram.theta_mode(),
    }))
}

fn correlations(ctx: &mut Ctx) -> Result<Value> {
    let b = &ctx.cfg.correlations;
    let fit = correlation_decay(&ctx.sys, &b.a, &b.b, &b.settings(ctx.sys.epsilon()), ctx.seed)?;
    csv(&mut ctx.out, "correlations.csv", |w| fit.write_csv(w))?;
    Ok(json!({"rate": fit.rate, "r2": fit.r2, "window": fit.window, "epsilon": fit.epsilon}))
}

fn rate(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.correlations.clone();
    let grid = ctx.cfg.rate_scaling.eps_grid.clone();
    let (fits, scaling) = rate_scaling(&ctx.sys, &grid, &b.a, &b.b, |e| b.settings(e), ctx.seed)?;
    csv(&mut ctx.out, "rate_scaling.csv", |w| {
        writeln!(w, "epsilon,rate,r2")?;
        for f in &fits {
            writeln!(w, "{},{},{}", f.epsilon, f.rate, f.r2)?;
        }
        Ok(())
    })?;
    Ok(serde_json::to_value(&scaling).expect("json"))
}

fn sink(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.sink.clone();
    let eps = ctx.sys.epsilon();
    if !(eps > 0.0) {
        return Err(Error::Validation("sink localization needs epsilon > 0".into()));
    }
    let zeros = find_zeros(&averaged_drift_with(&ctx.sys, DriftSettings { n_theta: 128, n: 128, ..DriftSettings::default() })?)?;
    let horizon = b.horizon(eps);
    let c = match b.c {
        Some(c) => c,
        None => calibrate_sink_constant(&sink_deviations(
            &ctx.sys,
            zeros.theta_minus,
            horizon,
            b.calibration_samples,
            ctx.seed,
            "sink-calibration",
        )),
    };
    let r = sink_localization(&ctx.sys, zeros.theta_minus, c, horizon, b.samples, ctx.seed);
    Ok(serde_json::to_value(&r).expect("json"))
}

fn family_of(curves: &[HorizontalCurve]) -> PairFamily {
    let w = 1.0 / curves.len() as f64;
    PairFamily {
        members: curves
            .iter()
            .map(|c| WeightedPair { weight: w, pair: StandardPair::horizontal(c.x0, c.theta0, c.length) })
            .collect(),
    }
}

fn tv(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.tv.clone();
    let eps = ctx.sys.epsilon();
    if !(eps > 0.0) || b.family1.is_empty() || b.family2.is_empty() || b.n_checkpoints < 2 {
        return Err(Error::Validation("tv needs epsilon > 0, two families and two checkpoints".into()));
    }
    let horizon = (b.horizon_factor * (1.0 / eps).ln() / eps).ceil() as usize;
    let checkpoints: Vec<usize> =
        (0..b.n_checkpoints).map(|k| horizon * k / (b.n_checkpoints - 1)).collect();
    let s = tv_contraction(&ctx.sys, &family_of(&b.family1), &family_of(&b.family2), &checkpoints, b.bins, b.n_points, ctx.seed);
    csv(&mut ctx.out, "tv.csv", |w| s.write_csv(w))?;
    Ok(json!({
        "horizon": horizon,
        "final_tv": s.tv.last(),
        "worst_rise": s.worst_rise(),
        "envelope_rate": s.envelope_rate,
    }))
}

fn appendix(ctx: &mut Ctx) -> Result<Value> {
    let b = ctx.cfg.appendix.clone();
    let sys = &ctx.sys;
    let d = sys.fibre_degree();
    let rows: Vec<Result<(usize, f64, f64)>> = (0..b.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(ctx.seed, "appendix", i as u64);
            let q = uniform_point(&mut rng);
            let n = rng.gen_range(1..=b.max_n.max(1));
            let it: Vec<u32> = (0..n).map(|_| rng.gen_range(0..d)).collect();
            let (formula, _, _) = inverse_jacobian_formula(sys, q, &it)?;
            let direct = inverse_jacobian_direct(sys, q, &it)?;
            Ok((n, max_rel_entry_error(&formula, &direct), log_jacobian_identity(sys, q, &it)?.abs()))
        })
        .collect();
    let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
    csv(&mut ctx.out, "appendix.csv", |w| {
        writeln!(w, "sample,n,matrix_rel_err,logdet_resid")?;
        for (i, r) in rows.iter().enumerate() {
            writeln!(w, "{},{},{},{}", i, r.0, r.1, r.2)?;
        }
        Ok(())
    })?;
    Ok(json!({
        "max_matrix_rel_err": rows.iter().fold(0.0_f64, |m, r| m.max(r.1)),
        "max_logdet_resid": rows.iter().fold(0.0_f64, |m, r| m.max(r.2)),
        "samples": rows.len(),
    }))
}

fn constants(ctx: &mut Ctx) -> Result<Value> {
    let l = ctx.ledger()?;
    let mut v = serde_json::to_value(&l).expect("json");
    v["relation_violations"] = json!(l.check_relations());
    v["max_height"] = json!(l.max_height());
    Ok(v)
}

fn scan(ctx: &mut Ctx) -> Result<Value> {
    let rows = scan_mostly_expanding(&ctx.cfg.scan.grid(), ctx.sys.epsilon());
    csv(&mut ctx.out, "scan.csv", |w| write_scan_csv(&rows, w))?;
    let hits: Vec<_> = rows.iter().filter(|r| r.mostly_expanding).map(|r| (r.a, r.mu, r.c)).collect();
    let (m, _) = mean_stderr(&rows.iter().filter_map(|r| r.psi_bar_star_at_sink).collect::<Vec<_>>());
    Ok(json!({"points": rows.len(), "mostly_expanding": hits, "mean_psi_bar_star": m}))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &std::path::Path, args: &[&str]) -> i32 {
        let mut v = vec!["fastslow".to_string()];
        v.extend(args.iter().map(|s| s.to_string()));
        v.extend(["--out".into(), dir.to_string_lossy().into_owned(), "--threads".into(), "1".into()]);
        main_with_args(v)
    }

    #[test]
    fn classify_sys_a() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "builtin = \"sys-a\"\n").unwrap();
        assert_eq!(run_in(dir.path(), &["classify", "--config", cfg.to_str().unwrap()]), 0);
        let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("classify.json")).unwrap()).unwrap();
        assert_eq!(v["class"], "MostlyContracting");
        assert!((v["psi_bar_star_at_sink"].as_f64().unwrap() + std::f64::consts::TAU).abs() < 1e-4);
    }

    #[test]
    fn malformed_config_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "seed = \n").unwrap();
        assert_eq!(run_in(dir.path(), &["constants", "--config", cfg.to_str().unwrap()]), 2);
        let e = std::fs::read_to_string(dir.path().join("error.json")).unwrap();
        assert!(e.contains("Parse") && e.contains("line 1"), "{e}");
    }

    #[test]
    fn unknown_subcommand_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["nonsense"]), 2);
    }
}
