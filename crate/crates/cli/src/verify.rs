//! The deterministic identity suite behind `spectralab verify`.

use num::complex::Complex64;
use num::{One, Zero};
use spectralab_core::grid::{equivalence_l_vs_root, GridFft, GridField, TorusGrid};
use spectralab_core::norms::LowerBoundOpts;
use spectralab_core::perturbation::{
    neumann_inverse, stone_density, Mode, PerturbedOperator, PotentialBuiltin, PotentialSpec,
};
use spectralab_core::region::{pentagon_vertices, rat, thm37_region, thm56_range, CaseId, ExponentPoint, RegionParams};
use spectralab_core::resolvent::{resolvent_symbol, ResolventSpec};
use spectralab_core::symbol::{nondegeneracy_check, sphere_directions, SymbolPoly, SymbolSpec, DEFAULT_HESSDET_THRESHOLD};
use spectralab_core::weyl::{
    bump, chi_convolve, jump_identity_resolve, subordination_check, weyl_derivative, weyl_integral, DistPower,
    SampledFn,
};
use spectralab_core::Result;

use crate::commands::Context;
use crate::{CliError, VerifyArgs};

type Outcome = Result<(bool, String)>;

struct Check {
    name: &'static str,
    run: fn(&SymbolPoly) -> Outcome,
}

const CHECKS: &[Check] = &[
    Check { name: "weyl.convolution", run: weyl_convolution },
    Check { name: "weyl.reproduction", run: weyl_reproduction },
    Check { name: "weyl.jump_identity", run: weyl_jump },
    Check { name: "weyl.subordination", run: weyl_subordination },
    Check { name: "symbol.homogeneity", run: symbol_homogeneity },
    Check { name: "symbol.nondegeneracy", run: symbol_nondegeneracy },
    Check { name: "grid.fft_roundtrip", run: grid_fft_roundtrip },
    Check { name: "grid.resolvent_composition", run: grid_resolvent_composition },
    Check { name: "grid.root_equivalence", run: grid_root_equivalence },
    Check { name: "region.pentagon_vertices", run: region_pentagon },
    Check { name: "region.duality", run: region_duality },
    Check { name: "region.restriction_range", run: region_restriction_range },
    Check { name: "perturbation.stone_poisson", run: perturbation_stone },
    Check { name: "perturbation.neumann_dense", run: perturbation_neumann },
];

pub fn run(ctx: &Context, a: &VerifyArgs) -> std::result::Result<(), CliError> {
    let symbol = match &a.symbol {
        Some(s) => serde_json::from_str::<SymbolSpec>(s)
            .map_err(|e| CliError::Config(format!("--symbol: {e}")))?
            .build()?,
        None => match &ctx.cfg.symbol {
            Some(s) => s.build()?,
            None => SymbolPoly::norm_power(3, 2)?,
        },
    };
    let filter = a.filter.clone().or_else(|| ctx.cfg.verify.filter.clone()).unwrap_or_default();
    let selected: Vec<&Check> = CHECKS.iter().filter(|c| c.name.starts_with(&filter)).collect();
    if selected.is_empty() {
        return Err(CliError::Config(format!("filter {filter:?} selects no checks")));
    }
    let mut failed = 0;
    for c in &selected {
        let (ok, detail) = match (c.run)(&symbol) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {}: {detail}", if ok { "PASS" } else { "FAIL" }, c.name);
    }
    println!("{} passed, {failed} failed", selected.len() - failed);
    if failed > 0 {
        Err(CliError::VerifyFailed(failed))
    } else {
        Ok(())
    }
}

fn weyl_convolution(_: &SymbolPoly) -> Outcome {
    let exps = [-0.5, 0.0, 0.5, 1.0];
    let mut err = 0.0f64;
    for &w in &exps {
        for &z in &exps {
            let r = chi_convolve(&DistPower::minus(w), &DistPower::minus(z), 1.0, 1e-3)?;
            err = err.max(r.max_err.unwrap_or(0.0));
        }
    }
    Ok((err < 1e-3, format!("max quadrature error {err:.2e}")))
}

fn weyl_reproduction(_: &SymbolPoly) -> Outcome {
    let f = SampledFn::from_real(-1.0, 2.0, 1e-3, |x| bump(x, 0.5, 1.0))?;
    let mut err = 0.0f64;
    for nu in [0.5, 1.0, 1.5] {
        err = err.max(weyl_integral(&weyl_derivative(&f, nu)?, nu)?.sup_diff(&f));
    }
    Ok((err < 1e-2, format!("sup error {err:.2e}")))
}

fn weyl_jump(_: &SymbolPoly) -> Outcome {
    let pts: Vec<f64> = (0..20).map(|k| -2.0 + 4.0 * (k as f64 + 0.5) / 20.0).collect();
    let mut err = 0.0f64;
    for alpha in [0.25, 0.5, 0.75] {
        err = err.max(jump_identity_resolve(alpha, &pts, 1e-3)?.max_error);
    }
    Ok((err < 1e-3, format!("extrapolated error {err:.2e}")))
}

fn weyl_subordination(_: &SymbolPoly) -> Outcome {
    let g = SampledFn::from_real(0.0, 1.5, 1e-4, |x| bump(x, 0.5, 1.0))?;
    let err = subordination_check(&g, 1.5, &[0.6, 0.7, 0.8, 0.9])?;
    Ok((err < 1e-4, format!("relative error {err:.2e}")))
}

fn symbol_homogeneity(p: &SymbolPoly) -> Outcome {
    let mut err = 0.0f64;
    for (k, x) in sphere_directions(p.n(), 64, 11).iter().enumerate() {
        let t = 0.5 + 0.1 * k as f64;
        let scaled: Vec<f64> = x.iter().map(|v| t * v).collect();
        let lhs = p.eval(&scaled);
        let rhs = t.powi(p.m() as i32) * p.eval(x);
        err = err.max((lhs - rhs).abs() / rhs.abs().max(1e-300));
    }
    Ok((err < 1e-12, format!("relative error {err:.2e}")))
}

fn symbol_nondegeneracy(p: &SymbolPoly) -> Outcome {
    let s = nondegeneracy_check(p, 2000, DEFAULT_HESSDET_THRESHOLD)?;
    Ok((s.pass, format!("min |det Hess P| on P = 1 is {:.3e} (threshold {:.0e})", s.min_abs_hessdet, s.threshold)))
}

fn small_grid(p: &SymbolPoly) -> Result<TorusGrid> {
    let big_n = match p.n() {
        1 => 128,
        2 => 32,
        _ => 8,
    };
    TorusGrid::new(p.n(), big_n, 10.0)
}

fn grid_fft_roundtrip(p: &SymbolPoly) -> Outcome {
    let g = small_grid(p)?;
    let f = GridField::from_fn(&g, |x| Complex64::new((-x.iter().map(|v| v * v).sum::<f64>()).exp(), x[0].sin()));
    let fft = GridFft::new(&g);
    let mut v = f.values.clone();
    fft.forward(&mut v);
    fft.inverse(&mut v);
    let err = v.iter().zip(&f.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok((err < 1e-12, format!("max error {err:.2e}")))
}

fn grid_resolvent_composition(p: &SymbolPoly) -> Outcome {
    let g = small_grid(p)?;
    let vals = g.symbol_values(p)?;
    let z = Complex64::new(-1.0, 0.5);
    let a = resolvent_symbol(&vals, &ResolventSpec::new(z, 0.3)?)?;
    let b = resolvent_symbol(&vals, &ResolventSpec::new(z, 0.7)?)?;
    let ab = resolvent_symbol(&vals, &ResolventSpec::new(z, 1.0)?)?;
    let err = a
        .iter()
        .zip(&b)
        .zip(&ab)
        .map(|((x, y), w)| (x * y - w).norm() / w.norm())
        .fold(0.0, f64::max);
    Ok((err < 1e-12, format!("(P-z)^-0.3 (P-z)^-0.7 vs (P-z)^-1: {err:.2e}")))
}

fn grid_root_equivalence(p: &SymbolPoly) -> Outcome {
    let g = small_grid(p)?;
    let r = equivalence_l_vs_root(&g, 1.0, 0.5, p, 200)?;
    Ok((r.pass, format!("{} samples, max relative error {:.2e}", r.samples, r.max_rel_err)))
}

fn region_params() -> Result<RegionParams> {
    RegionParams::new(3, 2, rat(0, 1), rat(6, 5), rat(1, 1))
}

fn region_pentagon(_: &SymbolPoly) -> Outcome {
    let params = region_params()?;
    let v = pentagon_vertices(&params)?;
    let expect = [
        (&v.a, (rat(1, 1), rat(2, 3))),
        (&v.b, (rat(2, 3), rat(2, 3))),
        (&v.c, (rat(5, 6), rat(2, 3))),
        (&v.d, (rat(1, 2), rat(1, 2))),
    ];
    let mut ok = expect.iter().all(|(pt, (x, y))| pt.inv_p == *x && pt.inv_q == *y);
    let region = thm37_region(&params, CaseId::ThmIII7Case3)?;
    let d = ExponentPoint::new(rat(1, 2), rat(1, 2))?;
    ok &= region.polygon().contains(&d);
    Ok((ok, "n = 3, alpha = 0, p = 6/5: A, B(p), C(p), D(p) exact; D(p) is a polygon vertex".into()))
}

fn region_duality(_: &SymbolPoly) -> Outcome {
    let region = thm37_region(&region_params()?, CaseId::ThmIII7Case3)?;
    let back = region.dual().dual();
    let mut ok = true;
    for i in 0..=12 {
        for j in 0..=12 {
            let x = ExponentPoint::new(rat(i, 12), rat(j, 12))?;
            ok &= region.contains(&x) == back.contains(&x);
            ok &= region.contains(&x) == region.dual().contains(&x.dual());
        }
    }
    Ok((ok, "dual of dual agrees on a 13 x 13 rational lattice".into()))
}

fn region_restriction_range(_: &SymbolPoly) -> Outcome {
    let r = thm56_range(3, 2)?;
    let ok = r.lo.is_one() && r.hi == rat(4, 3) && !r.hi.is_zero();
    Ok((ok, format!("n = 3, m = 2: p in [{}, {})", r.lo, r.hi)))
}

fn perturbation_setup() -> Result<(PerturbedOperator, Vec<Complex64>)> {
    let g = TorusGrid::new(2, 16, 8.0)?;
    let p = SymbolPoly::norm_power(2, 2)?;
    let v = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::BallIndicator { c: 0.05, r: 1.5 })?;
    let f = GridField::from_fn(&g, |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1]) / 3.0).exp(), 0.1 * x[1].cos())).values;
    Ok((PerturbedOperator::new(&p, v, Mode::Dense)?, f))
}

fn perturbation_stone(_: &SymbolPoly) -> Outcome {
    let (pop, f) = perturbation_setup()?;
    let mut err = 0.0f64;
    for (l, eps) in [(0.5, 0.05), (2.0, 0.2)] {
        let s = stone_density(&pop, l, eps, &f)?;
        err = err.max((s.value - s.poisson).abs() / s.poisson.abs());
    }
    Ok((err < 1e-10, format!("resolvent difference vs eigenbasis Poisson sum: {err:.2e}")))
}

fn perturbation_neumann(_: &SymbolPoly) -> Outcome {
    let (pop, f) = perturbation_setup()?;
    let z = Complex64::new(-1.0, 0.0);
    let lb = LowerBoundOpts { iters: 20, restarts: 2, ..LowerBoundOpts::new(2.0, 2.0, 1.0) };
    let r = neumann_inverse(&pop, z, 2.0, 400, 1e-13, &f, &lb)?;
    let dense = pop.resolvent_solve(z, &f)?;
    let err = r.values.iter().zip(&dense).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok((err < 1e-8, format!("gate {:.3e}, {} terms, max difference {err:.2e}", r.gate.gate, r.terms)))
}
