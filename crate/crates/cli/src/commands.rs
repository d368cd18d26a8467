use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use num::complex::Complex64;
use serde_json::{json, Value};
use spectralab_core::grid::{GridField, TorusGrid};
use spectralab_core::norms::{conjugate, LowerBoundOpts, ScalingReport};
use spectralab_core::perturbation::{
    davies_gaffney_fit, gate_estimate, neumann_inverse, restriction_sweep, stone_density, Mode, PerturbedOperator,
    PotentialSpec, DENSE_CAP,
};
use spectralab_core::region::{
    case_for, krs_region, parse_rational, sobolev_line_region, thm37_region, thm56_region, CaseId,
    ExponentPoint, Region, RegionParams, Q,
};
use spectralab_core::resolvent::{br_negative_sweep, uniform_sobolev_sweep, SweepOpts};
use spectralab_core::symbol::SymbolPoly;
use spectralab_core::weyl::{bump, weyl_derivative, weyl_integral, ws_norm, SampledFn};
use spectralab_core::Error;

use crate::config::{parse_f64_list, RunConfig};
use crate::output::{grid_json, num, Output};
use crate::{Cli, CliError, FitArgs, GridArgs, PerturbArgs, RegionArgs, SweepCommand, WeylArgs};

pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl<'a> Context<'a> {
    pub fn new(cli: &Cli, cfg: &'a RunConfig) -> Self {
        Self {
            cfg,
            output_dir: cli
                .output_dir
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("spectralab-out")),
            seed: cli.seed.or(cfg.seed).unwrap_or(0),
        }
    }

    fn output(&self, command: &str, settings: &Value) -> Result<Output, CliError> {
        Output::new(&self.output_dir, command, settings, self.seed)
    }

    fn tolerance(&self, flag: Option<f64>, default: f64) -> f64 {
        flag.or(self.cfg.tolerance).unwrap_or(default)
    }
}

fn geometric(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
}

fn list_flag(flag: Option<&str>, what: &str) -> Result<Option<Vec<f64>>, CliError> {
    flag.map(|s| parse_f64_list(s).map_err(|e| CliError::Config(format!("--{what}: {e}"))))
        .transpose()
}

fn pair_flag(s: &str, what: &str) -> Result<[f64; 2], CliError> {
    match parse_f64_list(s).map_err(|e| CliError::Config(format!("--{what}: {e}")))?[..] {
        [a, b] => Ok([a, b]),
        _ => Err(CliError::Config(format!("--{what} takes two comma-separated numbers"))),
    }
}

fn parse_mode(flag: Option<&str>, config: Option<Mode>, default: Mode) -> Result<Mode, CliError> {
    match flag {
        None => Ok(config.unwrap_or(default)),
        Some("dense") => Ok(Mode::Dense),
        Some("matrix-free" | "matrix_free") => Ok(Mode::MatrixFree),
        Some(s) => Err(CliError::Config(format!("mode {s:?}: expected dense or matrix-free"))),
    }
}

/// `"inf"` maps to `None`.
fn parse_exponent(s: &str) -> Result<Option<Q>, CliError> {
    if s.trim() == "inf" {
        Ok(None)
    } else {
        Ok(Some(parse_rational(s)?))
    }
}

fn symbol_json(p: &SymbolPoly) -> Value {
    json!({"n": p.n(), "m": p.m(), "terms": p.terms()})
}

fn fit_json(fit: &ScalingReport) -> Value {
    let mut v = fit.summary_json();
    v["intercept"] = json!(fit.intercept);
    v["pairs"] = json!(fit.pairs);
    v
}

fn verdict(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}

fn resolve(ctx: &Context, g: &GridArgs, m: Option<u32>, defaults: (usize, u32, usize, f64)) -> Result<(SymbolPoly, TorusGrid), CliError> {
    ctx.cfg.symbol_and_grid(g.n, g.m.or(m), g.big_n, g.l, defaults)
}

// ------------------------------------------------------------------ region

pub fn region(ctx: &Context, a: &RegionArgs) -> Result<(), CliError> {
    let rc = &ctx.cfg.region;
    let pick = |flag: &Option<String>, conf: &Option<String>, default: &str| {
        flag.clone().or_else(|| conf.clone()).unwrap_or_else(|| default.to_string())
    };
    let n = a.n.or(rc.n).unwrap_or(3);
    let m = a.m.or(rc.m).unwrap_or(2);
    let alpha_s = pick(&a.alpha, &rc.alpha, "0");
    let p_s = pick(&a.p, &rc.p, "6/5");
    let p0_s = pick(&a.p0, &rc.p0, "1");
    let case = pick(&a.case, &rc.case, "auto");
    let query = a.query.clone().or_else(|| rc.query.clone());
    let alpha = parse_rational(&alpha_s)?;
    let params = || -> Result<RegionParams, CliError> {
        Ok(RegionParams::new(n, m, alpha.clone(), parse_rational(&p_s)?, parse_rational(&p0_s)?)?)
    };
    let region: Region = match case.as_str() {
        "krs" => krs_region(n, m, &alpha)?,
        "sobolev-line" => sobolev_line_region(n, m)?,
        "restriction" => thm56_region(n, m)?,
        "auto" => {
            let pr = params()?;
            let k = case_for(&pr)
                .ok_or_else(|| Error::InvalidParam(format!("alpha = {alpha} belongs to no case")))?;
            thm37_region(&pr, CaseId::from_case_number(k)?)?
        }
        k => {
            let k: u32 = k
                .parse()
                .map_err(|_| CliError::Config(format!("case {k:?}: expected 1..4, auto, krs, sobolev-line or restriction")))?;
            thm37_region(&params()?, CaseId::from_case_number(k)?)?
        }
    };
    let query_point = query
        .as_deref()
        .map(|q| -> Result<ExponentPoint, CliError> {
            let parts: Vec<&str> = q.split(',').collect();
            let [r, s] = parts[..] else {
                return Err(CliError::Config(format!("query {q:?}: expected 1/r,1/s")));
            };
            Ok(ExponentPoint::new(parse_rational(r)?, parse_rational(s)?)?)
        })
        .transpose()?;

    let settings = json!({
        "case": case, "n": n, "m": m, "alpha": alpha_s, "p": p_s, "p0": p0_s, "query": query,
    });
    let out = ctx.output("region", &settings)?;
    let mut body = region.to_json();
    body["dual"] = region.dual().to_json();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |kind: &str, label: String, pt: &ExponentPoint| {
        let (x, y) = pt.to_f64();
        rows.push(vec![kind.into(), label, pt.inv_p.to_string(), pt.inv_q.to_string(), num(x), num(y)]);
    };
    let poly = region.polygon();
    for (i, v) in poly.iter().enumerate() {
        push("vertex", format!("v{i}"), v);
    }
    if let Some(pv) = region.params.as_ref().map(spectralab_core::region::pentagon_vertices).transpose()? {
        for (label, pt) in pv.labeled() {
            push("pentagon", label.to_string(), pt);
        }
    }
    let mut line = None;
    if let Some(qp) = &query_point {
        let inside = region.contains(qp);
        let violated: Vec<String> = region.violated(qp).iter().map(|c| c.label.clone()).collect();
        body["query"] = json!({"point": qp.to_json(), "inside": inside, "violated": violated});
        line = Some(if inside {
            format!("query {qp}: inside {}", region.case_id.name())
        } else {
            format!("query {qp}: outside {} (violates: {})", region.case_id.name(), violated.join("; "))
        });
    }
    let json_path = out.write_json("region.json", body)?;
    out.write_csv("region.csv", &["kind", "label", "inv_r", "inv_s", "inv_r_f64", "inv_s_f64"], &rows)?;
    println!("{}: {} vertices -> {}", region.case_id.name(), poly.len(), json_path.display());
    if let Some(l) = line {
        println!("{l}");
    }
    Ok(())
}

// ------------------------------------------------------------------ sweeps

pub fn sweep(ctx: &Context, s: &SweepCommand) -> Result<(), CliError> {
    let start = Instant::now();
    match s {
        SweepCommand::Sobolev { grid, fit, p, q, decades, points, args, boundary, allow_inadmissible } => {
            sweep_sobolev(ctx, start, grid, fit, p, q, *decades, *points, args, *boundary, *allow_inadmissible)
        }
        SweepCommand::Restriction { grid, fit, potential, p, lambdas, delta, c0, mode } => {
            sweep_restriction(ctx, start, grid, fit, potential.as_deref(), *p, lambdas.as_deref(), *delta, *c0, mode.as_deref())
        }
        SweepCommand::BochnerRiesz { grid, fit, alpha, p, q, lambdas, window, allow_inadmissible } => {
            sweep_br(ctx, start, grid, fit, *alpha, p, q, lambdas.as_deref(), *window, *allow_inadmissible)
        }
        SweepCommand::Gaussian { grid, tolerance, t_list, p_list } => {
            sweep_gaussian(ctx, start, grid, *tolerance, t_list.as_deref(), p_list.as_deref())
        }
        SweepCommand::DaviesGaffney { grid, potential, t_list, distances, radius_factor } => {
            sweep_dg(ctx, start, grid, potential.as_deref(), t_list.as_deref(), distances.as_deref(), *radius_factor)
        }
    }
}

fn sweep_opts(ctx: &Context, fit: &FitArgs, allow: bool) -> SweepOpts {
    let sc = &ctx.cfg.sweep;
    SweepOpts {
        tolerance: ctx.tolerance(fit.tolerance, 0.15),
        seed: ctx.seed,
        iters: fit.iters.or(sc.iters).unwrap_or(20),
        restarts: fit.restarts.or(sc.restarts).unwrap_or(2),
        allow_inadmissible: allow || sc.allow_inadmissible.unwrap_or(false),
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_sobolev(
    ctx: &Context,
    start: Instant,
    g: &GridArgs,
    fit: &FitArgs,
    p: &Option<String>,
    q: &Option<String>,
    decades: Option<f64>,
    points: Option<usize>,
    args: &Option<String>,
    boundary: bool,
    allow: bool,
) -> Result<(), CliError> {
    let sc = &ctx.cfg.sweep;
    let (sym, grid) = resolve(ctx, g, sc.m, (3, 2, 32, 32.0))?;
    let p_s = p.clone().or_else(|| sc.p.clone()).unwrap_or_else(|| "6/5".into());
    let q_s = q.clone().or_else(|| sc.q.clone()).unwrap_or_else(|| "6".into());
    let point = ExponentPoint::from_exponents(parse_exponent(&p_s)?.as_ref(), parse_exponent(&q_s)?.as_ref())?;
    // explicit moduli in the config apply unless a flag asks for a generated range
    let moduli = match (&sc.moduli, decades, points) {
        (Some(m), None, None) => m.clone(),
        _ => {
            let decades = decades.or(sc.decades).unwrap_or(1.0);
            let k = points.or(sc.points).unwrap_or(6);
            if k < 2 {
                return Err(CliError::Config("--points must be at least 2".into()));
            }
            (0..k).map(|i| 0.25 * 10f64.powf(i as f64 * decades / (k - 1) as f64)).collect()
        }
    };
    let args = list_flag(args.as_deref(), "args")?
        .or_else(|| sc.args.clone())
        .unwrap_or_else(|| vec![PI / 6.0, PI / 2.0, 5.0 * PI / 6.0]);
    let boundary = boundary || sc.boundary.unwrap_or(false);
    let opts = sweep_opts(ctx, fit, allow);
    let settings = json!({
        "kind": "sobolev", "symbol": symbol_json(&sym), "grid": grid_json(&grid), "p": p_s, "q": q_s,
        "moduli": moduli, "args": args, "boundary": boundary, "iters": opts.iters, "restarts": opts.restarts,
        "tolerance": opts.tolerance, "allow_inadmissible": opts.allow_inadmissible,
    });
    let out = ctx.output("sweep sobolev", &settings)?;
    let rep = uniform_sobolev_sweep(&grid, &sym, &point, &moduli, &args, boundary, &opts)?;
    let mut pts = rep.points.clone();
    pts.sort_by(|a, b| a.param.total_cmp(&b.param).then(a.z.arg().total_cmp(&b.z.arg())));
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|s| {
            vec![
                num(s.param),
                num(s.z.re),
                num(s.z.im),
                s.eps.map(num).unwrap_or_default(),
                num(s.norm_lb),
                s.exact.to_string(),
            ]
        })
        .collect();
    out.write_csv("sobolev.csv", &["modulus", "z_re", "z_im", "eps", "norm", "exact"], &rows)?;
    let summary = json!({
        "fit": fit_json(&rep.fit),
        "max_min_ratio": rep.max_min_ratio,
        "on_sobolev_line": rep.on_sobolev_line,
        "admissible": rep.admissibility.admissible,
        "admissibility": rep.admissibility.reason,
        "grid": grid_json(&grid),
        "seed": ctx.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    out.write_json("sobolev_summary.json", summary)?;
    println!(
        "sobolev (1/p, 1/q) = {point}: slope {:.3} (predicted {:.3}, {}), max/min ratio {:.3} ({} factor 3){}",
        rep.fit.slope,
        rep.fit.predicted_slope,
        verdict(rep.fit.verdict),
        rep.max_min_ratio,
        if rep.max_min_ratio < 3.0 { "within" } else { "beyond" },
        if rep.on_sobolev_line { " on the Sobolev line" } else { "" }
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_restriction(
    ctx: &Context,
    start: Instant,
    g: &GridArgs,
    fit: &FitArgs,
    potential: Option<&str>,
    p: Option<f64>,
    lambdas: Option<&str>,
    delta: Option<f64>,
    c0: Option<f64>,
    mode: Option<&str>,
) -> Result<(), CliError> {
    let sc = &ctx.cfg.sweep;
    let (sym, grid) = resolve(ctx, g, sc.m, (3, 2, 16, 2.0 * PI))?;
    let m = sym.m();
    let choice = ctx.cfg.potential(potential, "ball:0.1,1.0")?;
    let v = choice.build(&grid, m)?;
    let pe = p.or_else(|| sc.p.as_deref().and_then(|s| s.parse().ok())).unwrap_or(1.0);
    let scale = (2.0 * PI / grid.l).powi(m as i32);
    let lambdas = list_flag(lambdas, "lambdas")?
        .or_else(|| sc.lambdas.clone())
        .unwrap_or_else(|| geometric(8.3 * scale, 83.0 * scale, 7));
    let delta = delta.or(sc.delta).unwrap_or(0.5);
    let c0 = c0.or(ctx.cfg.c0).unwrap_or(0.5);
    let mode = parse_mode(mode, sc.mode, Mode::Dense)?;
    let tol = ctx.tolerance(fit.tolerance, 0.15);
    let mut lb = LowerBoundOpts::new(pe, conjugate(pe), grid.cell_volume());
    lb.seed = ctx.seed;
    lb.iters = fit.iters.or(sc.iters).unwrap_or(lb.iters);
    lb.restarts = fit.restarts.or(sc.restarts).unwrap_or(lb.restarts);
    let settings = json!({
        "kind": "restriction", "symbol": symbol_json(&sym), "grid": grid_json(&grid), "potential": choice,
        "p": pe, "lambdas": lambdas, "delta": delta, "c0": c0, "mode": mode, "tolerance": tol,
        "iters": lb.iters, "restarts": lb.restarts,
    });
    let out = ctx.output("sweep restriction", &settings)?;
    let small = v.smallness().clone();
    if !small.passes(c0) {
        eprintln!(
            "warning: smallness functional {:.4} is not below c0 = {c0}; stability is not predicted",
            small.total()
        );
    }
    let free = PerturbedOperator::new(&sym, PotentialSpec::zero(&grid, m)?, mode)?;
    let pert = PerturbedOperator::new(&sym, v, mode)?;
    // perturbed first: it is the run that can be unsupported in matrix-free mode
    let b = restriction_sweep(&pert, pe, &lambdas, delta, tol, &lb)?;
    let a = restriction_sweep(&free, pe, &lambdas, delta, tol, &lb)?;
    let mut rows: Vec<Vec<String>> = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(x, y)| {
            vec![
                num(x.lambda),
                num(x.norm),
                num(y.norm),
                x.occupancy.to_string(),
                y.occupancy.to_string(),
                (x.exact && y.exact).to_string(),
            ]
        })
        .collect();
    rows.sort_by(|r, s| r[0].parse::<f64>().unwrap().total_cmp(&s[0].parse::<f64>().unwrap()));
    out.write_csv(
        "restriction.csv",
        &["lambda", "norm_free", "norm_perturbed", "occupancy_free", "occupancy_perturbed", "exact"],
        &rows,
    )?;
    let shift = (a.fit.slope - b.fit.slope).abs();
    let summary = json!({
        "free": fit_json(&a.fit),
        "perturbed": fit_json(&b.fit),
        "slope_shift": shift,
        "smallness": {
            "lnm_norm": small.lnm_norm, "kato_like": small.kato_like, "total": small.total(),
            "c0": c0, "passes": small.passes(c0),
        },
        "grid": grid_json(&grid),
        "seed": ctx.seed,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    out.write_json("restriction_summary.json", summary)?;
    println!(
        "restriction p = {pe}: slope V=0 {:.4}, V!=0 {:.4}, shift {shift:.4}; predicted {:.4}; smallness {:.4} (c0 = {c0}, {})",
        a.fit.slope,
        b.fit.slope,
        a.fit.predicted_slope,
        small.total(),
        verdict(small.passes(c0))
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_br(
    ctx: &Context,
    start: Instant,
    g: &GridArgs,
    fit: &FitArgs,
    alpha: Option<f64>,
    p: &Option<String>,
    q: &Option<String>,
    lambdas: Option<&str>,
    window: Option<f64>,
    allow: bool,
) -> Result<(), CliError> {
    let sc = &ctx.cfg.sweep;
    let (sym, grid) = resolve(ctx, g, sc.m, (2, 2, 256, 256.0))?;
    let alpha = alpha.or(sc.alpha).unwrap_or(0.5);
    let p_s = p.clone().or_else(|| sc.p.clone()).unwrap_or_else(|| "1".into());
    let q_s = q.clone().or_else(|| sc.q.clone()).unwrap_or_else(|| "inf".into());
    let point = ExponentPoint::from_exponents(parse_exponent(&p_s)?.as_ref(), parse_exponent(&q_s)?.as_ref())?;
    let scale = (256.0 / grid.l).powi(sym.m() as i32);
    let lambdas = list_flag(lambdas, "lambdas")?
        .or_else(|| sc.lambdas.clone())
        .unwrap_or_else(|| geometric(0.2 * scale, 2.0 * scale, 8));
    let window = window.or(sc.window).unwrap_or(0.3);
    let opts = sweep_opts(ctx, fit, allow);
    let settings = json!({
        "kind": "bochner-riesz", "symbol": symbol_json(&sym), "grid": grid_json(&grid), "alpha": alpha,
        "p": p_s, "q": q_s, "lambdas": lambdas, "window": window, "iters": opts.iters, "restarts": opts.restarts,
        "tolerance": opts.tolerance, "allow_inadmissible": opts.allow_inadmissible,
    });
    let out = ctx.output("sweep bochner-riesz", &settings)?;
    let rep = br_negative_sweep(&grid, &sym, alpha, &point, &lambdas, window, &opts)?;
    let mut pts = rep.points.clone();
    pts.sort_by(|a, b| a.param.total_cmp(&b.param));
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|s| vec![num(s.param), s.eps.map(num).unwrap_or_default(), num(s.norm_lb), s.exact.to_string()])
        .collect();
    out.write_csv("bochner_riesz.csv", &["lambda", "eps", "norm", "exact"], &rows)?;
    out.write_json(
        "bochner_riesz_summary.json",
        json!({
            "fit": fit_json(&rep.fit),
            "excluded": rep.excluded,
            "grid": grid_json(&grid),
            "seed": ctx.seed,
            "wall_time_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "bochner-riesz alpha = {alpha}, (1/p, 1/q) = {point}: slope {:.3} (predicted {:.3}, {})",
        rep.fit.slope,
        rep.fit.predicted_slope,
        verdict(rep.fit.verdict)
    );
    Ok(())
}

fn sweep_gaussian(
    ctx: &Context,
    start: Instant,
    g: &GridArgs,
    tolerance: Option<f64>,
    t_list: Option<&str>,
    p_list: Option<&str>,
) -> Result<(), CliError> {
    let sc = &ctx.cfg.sweep;
    let (sym, grid) = resolve(ctx, g, sc.m, (2, 2, 256, 256.0))?;
    let unit = grid.l / grid.big_n as f64;
    let t_list = list_flag(t_list, "t-list")?
        .or_else(|| sc.t_list.clone())
        .unwrap_or_else(|| geometric(4.0 * unit, 40.0 * unit, 7));
    let p_list = list_flag(p_list, "p-list")?
        .or_else(|| sc.p_list.clone())
        .unwrap_or_else(|| vec![1.0, 1.5, 2.0]);
    let tol = ctx.tolerance(tolerance, 0.15);
    let settings = json!({
        "kind": "gaussian", "symbol": symbol_json(&sym), "grid": grid_json(&grid), "t_list": t_list,
        "p_list": p_list, "tolerance": tol,
    });
    let out = ctx.output("sweep gaussian", &settings)?;
    let reps = spectralab_core::grid::generalized_gaussian_check(&grid, &sym, &p_list, &t_list, tol, ctx.seed)?;
    let mut rows = Vec::new();
    for (pe, rep) in p_list.iter().zip(&reps) {
        let mut pairs = rep.pairs.clone();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows.extend(pairs.iter().map(|&(t, v)| vec![num(*pe), num(t), num(v)]));
    }
    out.write_csv("gaussian.csv", &["p", "t", "norm"], &rows)?;
    let fits: Vec<Value> = p_list
        .iter()
        .zip(&reps)
        .map(|(pe, r)| {
            let mut v = fit_json(r);
            v["p"] = json!(pe);
            v
        })
        .collect();
    out.write_json(
        "gaussian_summary.json",
        json!({"fits": fits, "grid": grid_json(&grid), "seed": ctx.seed, "wall_time_s": start.elapsed().as_secs_f64()}),
    )?;
    for (pe, r) in p_list.iter().zip(&reps) {
        println!("gaussian p = {pe}: slope {:.3} (predicted {:.3}, {})", r.slope, r.predicted_slope, verdict(r.verdict));
    }
    Ok(())
}

fn sweep_dg(
    ctx: &Context,
    start: Instant,
    g: &GridArgs,
    potential: Option<&str>,
    t_list: Option<&str>,
    distances: Option<&str>,
    radius_factor: Option<f64>,
) -> Result<(), CliError> {
    let sc = &ctx.cfg.sweep;
    let (sym, grid) = resolve(ctx, g, sc.m, (1, 2, 512, 64.0))?;
    let m = sym.m();
    let choice = ctx.cfg.potential(potential, "zero")?;
    let v = choice.build(&grid, m)?;
    let t_list = list_flag(t_list, "t-list")?.or_else(|| sc.t_list.clone()).unwrap_or_else(|| {
        if m == 2 {
            vec![0.5, 1.0, 2.0]
        } else {
            vec![1.0, 4.0, 16.0]
        }
    });
    let distances = list_flag(distances, "distances")?
        .or_else(|| sc.distances.clone())
        .unwrap_or_else(|| {
            if m == 2 {
                (0..8).map(|k| 2.0 * k as f64).collect()
            } else {
                (0..9).map(|k| k as f64).collect()
            }
        });
    let rf = radius_factor.or(sc.radius_factor).unwrap_or(1.0);
    let settings = json!({
        "kind": "davies-gaffney", "symbol": symbol_json(&sym), "grid": grid_json(&grid), "potential": choice,
        "t_list": t_list, "distances": distances, "radius_factor": rf,
    });
    let out = ctx.output("sweep davies-gaffney", &settings)?;
    // centres placed symmetrically about the origin along the first axis
    let h = grid.h();
    let pairs: Vec<(usize, usize)> = distances
        .iter()
        .map(|&d| {
            let k = (d / h).round() as i64;
            let mut a = vec![0i64; grid.n];
            let mut b = vec![0i64; grid.n];
            a[0] = -(k / 2);
            b[0] = k - k / 2;
            (grid.shifted(0, &a), grid.shifted(0, &b))
        })
        .collect();
    let pop = PerturbedOperator::new(&sym, v, Mode::Dense)?;
    let fit = davies_gaffney_fit(&pop, rf, &t_list, &pairs)?;
    let mut samples = fit.samples.clone();
    samples.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.distance.total_cmp(&b.distance)));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| vec![num(s.t), num(s.distance), num(s.abscissa), num(s.norm)])
        .collect();
    out.write_csv("davies_gaffney.csv", &["t", "distance", "abscissa", "norm"], &rows)?;
    out.write_json(
        "davies_gaffney_summary.json",
        json!({
            "c": fit.c, "log_c": fit.log_c, "r2": fit.r2, "excluded": fit.excluded,
            "gaussian_reference": if m == 2 { json!(0.25) } else { Value::Null },
            "grid": grid_json(&grid), "seed": ctx.seed, "wall_time_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    println!("davies-gaffney m = {m}: decay constant {:.4}, r2 {:.4}, {} samples below floor", fit.c, fit.r2, fit.excluded);
    Ok(())
}

// ------------------------------------------------------------------ perturb

/// Smooth, non-symmetric right-hand side.
fn test_field(grid: &TorusGrid) -> Vec<Complex64> {
    GridField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        Complex64::new((-r2 / 4.0).exp() * (1.0 + 0.5 * x[0].cos()), 0.25 * (-(r2 + 2.0 * x[0]) / 2.0).exp())
    })
    .values
}

pub fn perturb(ctx: &Context, a: &PerturbArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let pc = &ctx.cfg.perturb;
    let (sym, grid) = resolve(ctx, &a.grid, None, (2, 2, 32, 12.0))?;
    let m = sym.m();
    let choice = ctx.cfg.potential(a.potential.as_deref(), "ball:0.05,1.5")?;
    let v = choice.build(&grid, m)?;
    let z = match &a.z {
        Some(s) => pair_flag(s, "z")?,
        None => pc.z.unwrap_or([-1.0, 0.0]),
    };
    let zc = Complex64::new(z[0], z[1]);
    let p_gate = a.p_gate.or(pc.p_gate).unwrap_or(2.0);
    let k_max = a.k_max.or(pc.k_max).unwrap_or(400);
    let tol = a.tol.or(pc.tol).unwrap_or(1e-12);
    let c0 = a.c0.or(ctx.cfg.c0).unwrap_or(0.5);
    let lambda = a.lambda.or(pc.lambda).unwrap_or(2.0);
    let eps = a.eps.or(pc.eps).unwrap_or(0.2);
    let default_mode = if grid.size() <= DENSE_CAP { Mode::Dense } else { Mode::MatrixFree };
    let mode = parse_mode(a.mode.as_deref(), pc.mode, default_mode)?;
    let settings = json!({
        "symbol": symbol_json(&sym), "grid": grid_json(&grid), "potential": choice, "z": z, "p_gate": p_gate,
        "k_max": k_max, "tol": tol, "c0": c0, "lambda": lambda, "eps": eps, "mode": mode,
    });
    let out = ctx.output("perturb", &settings)?;
    let small = v.smallness().clone();
    println!(
        "smallness: ||V||_(n/m) {:.4e} + kato {} = {:.4e} ({} against c0 = {c0})",
        small.lnm_norm,
        small.kato_like.map(|k| format!("{k:.4e}")).unwrap_or_else(|| "n/a".into()),
        small.total(),
        verdict(small.passes(c0))
    );
    let pop = PerturbedOperator::new(&sym, v, mode)?;
    let mut lb = LowerBoundOpts::new(p_gate, p_gate, grid.cell_volume());
    lb.seed = ctx.seed;
    lb.iters = 20;
    lb.restarts = 2;
    let f = test_field(&grid);
    let gate = gate_estimate(&pop, zc, p_gate, &lb)?;
    let mut body = json!({
        "smallness": {
            "lnm_norm": small.lnm_norm, "kato_like": small.kato_like, "total": small.total(),
            "c0": c0, "passes": small.passes(c0),
        },
        "gate": gate,
        "grid": grid_json(&grid),
        "seed": ctx.seed,
    });
    println!("gate ||V R0(z)||_(p->p) >= {:.4e} (majorant {:.4e}) at z = {zc}", gate.gate, gate.majorant);
    let res = match neumann_inverse(&pop, zc, p_gate, k_max, tol, &f, &lb) {
        Ok(r) => r,
        Err(e) => {
            body["refused"] = json!(e.to_string());
            body["wall_time_s"] = json!(start.elapsed().as_secs_f64());
            out.write_json("perturb.json", body)?;
            return Err(e.into());
        }
    };
    let rows: Vec<Vec<String>> =
        res.residuals.iter().enumerate().map(|(k, r)| vec![(k + 1).to_string(), num(*r)]).collect();
    out.write_csv("perturb_residuals.csv", &["k", "residual"], &rows)?;
    body["neumann"] = json!({"terms": res.terms, "last_residual": res.residuals.last()});
    if mode == Mode::Dense {
        let dense = pop.resolvent_solve(zc, &f)?;
        let diff = res.values.iter().zip(&dense).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let stone = stone_density(&pop, lambda, eps, &f)?;
        println!("neumann: {} terms, max |difference| to dense solve {diff:.3e}", res.terms);
        println!("stone density at lambda = {lambda}, eps = {eps}: {:.12e} (eigenbasis {:.12e})", stone.value, stone.poisson);
        body["dense_difference"] = json!(diff);
        body["stone"] = json!(stone);
    } else {
        println!("neumann: {} terms, last relative term {:.3e}", res.terms, res.residuals.last().copied().unwrap_or(0.0));
    }
    body["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    out.write_json("perturb.json", body)?;
    Ok(())
}

// ------------------------------------------------------------------ weyl

pub fn weyl(ctx: &Context, a: &WeylArgs) -> Result<(), CliError> {
    let wc = &ctx.cfg.weyl;
    let nu = a.nu.or(wc.nu).unwrap_or(0.5);
    let h = a.h.or(wc.h).unwrap_or(1e-3);
    let support = match &a.support {
        Some(s) => pair_flag(s, "support")?,
        None => wc.support.unwrap_or([0.5, 1.0]),
    };
    let window = match &a.window {
        Some(s) => pair_flag(s, "window")?,
        None => wc.window.unwrap_or([-1.0, 2.0]),
    };
    if !(window[0] < support[0] && support[0] < support[1] && support[1] <= window[1]) {
        return Err(CliError::Config(format!("support {support:?} must lie inside the window {window:?}")));
    }
    let settings = json!({"nu": nu, "h": h, "support": support, "window": window});
    let out = ctx.output("weyl", &settings)?;
    let f = SampledFn::from_real(window[0], window[1], h, |x| bump(x, support[0], support[1]))?;
    let d = weyl_derivative(&f, nu)?;
    let ws = ws_norm(&f, nu)?;
    let repro = weyl_integral(&d, nu)?.sup_diff(&f);
    let rows: Vec<Vec<String>> = (0..f.len())
        .map(|j| vec![num(f.x(j)), num(f.values[j].re), num(d.values[j].re), num(d.values[j].im)])
        .collect();
    out.write_csv("weyl.csv", &["x", "f", "deriv_re", "deriv_im"], &rows)?;
    out.write_json(
        "weyl.json",
        json!({
            "ws_norm": {
                "nu": ws.nu, "value_l1": ws.value_l1, "derivative_l1": ws.value_deriv_l1, "total": ws.total,
                "truncation_estimate": ws.truncation_estimate,
            },
            "reproduction_error": repro,
        }),
    )?;
    println!(
        "weyl nu = {nu}: ||F||_1 {:.6}, ||F^(nu)||_1 {:.6}, WS norm {:.6}; reproduction error {repro:.2e}",
        ws.value_l1, ws.value_deriv_l1, ws.total
    );
    Ok(())
}
