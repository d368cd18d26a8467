//! Free resolvents `(P(D) - z)^{-alpha}` on the torus grid, their kernels, and
//! norm sweeps in `z` and in the Bochner-Riesz radius.

use std::f64::consts::PI;

use num::complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::{smooth_cutoff, GridField, GridOperator, TorusGrid};
use crate::norms::{fit_power_law, fit_power_law_grouped, linear_fit, LowerBoundOpts, ScalingReport};
use crate::region::{krs_admissible, rat, ExponentPoint, KrsVerdict, Q};
use crate::symbol::{support_function, SymbolPoly};
use crate::weyl::{jump_combination, JumpConvention};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HalfPlane {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolventSpec {
    pub z: Complex64,
    pub alpha: f64,
    /// Set for boundary values `lambda +- i eps`.
    pub eps: Option<f64>,
    pub half_plane: HalfPlane,
}

impl ResolventSpec {
    pub fn new(z: Complex64, alpha: f64) -> Result<Self> {
        if z.norm() == 0.0 {
            return invalid("z = 0 is excluded");
        }
        if alpha < 0.0 {
            return invalid(format!("alpha = {alpha} < 0; use bochner_riesz_op for negative orders"));
        }
        let half_plane = if z.im >= 0.0 { HalfPlane::Upper } else { HalfPlane::Lower };
        Ok(Self { z, alpha, eps: None, half_plane })
    }

    /// `lambda + i eps` (upper) or `lambda - i eps` (lower).
    pub fn boundary(lambda: f64, eps: f64, half_plane: HalfPlane, alpha: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return invalid("boundary mode needs eps > 0");
        }
        let im = match half_plane {
            HalfPlane::Upper => eps,
            HalfPlane::Lower => -eps,
        };
        let mut s = Self::new(Complex64::new(lambda, im), alpha)?;
        s.eps = Some(eps);
        Ok(s)
    }
}

/// `(w)^{-alpha}` with the principal branch; `alpha = 0` gives 1.
fn neg_power(w: Complex64, alpha: f64) -> Result<Complex64> {
    if alpha == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    if w == ZERO {
        return Err(Error::Numerical("lattice value hits z exactly".into()));
    }
    Ok(if alpha == 1.0 { w.inv() } else { w.powf(-alpha) })
}

pub fn resolvent_symbol(values: &[f64], spec: &ResolventSpec) -> Result<Vec<Complex64>> {
    values.iter().map(|&l| neg_power(Complex64::new(l, 0.0) - spec.z, spec.alpha)).collect()
}

/// Fourier multiplier `(P(xi) - z)^{-alpha}`.
pub fn fractional_resolvent(grid: &TorusGrid, p: &SymbolPoly, spec: &ResolventSpec) -> Result<GridOperator> {
    let vals = grid.symbol_values(p)?;
    GridOperator::multiplier(grid, resolvent_symbol(&vals, spec)?)
}

/// The cutoff `psi`: 1 on `[0, 2]`, 0 beyond 4.
pub fn psi_cutoff(s: f64) -> f64 {
    smooth_cutoff(s.abs(), 2.0, 4.0)
}

/// `K1 = psi(P^{1/m}) (P - z)^{-alpha}` and `K2 = (1 - psi(P^{1/m})) (P - z)^{-alpha}`.
pub fn k1_k2_split(grid: &TorusGrid, p: &SymbolPoly, spec: &ResolventSpec) -> Result<(GridOperator, GridOperator)> {
    let vals = grid.symbol_values(p)?;
    let full = resolvent_symbol(&vals, spec)?;
    let m = p.m() as f64;
    let cut: Vec<f64> = vals.iter().map(|&l| psi_cutoff(l.max(0.0).powf(1.0 / m))).collect();
    let k1 = full.iter().zip(&cut).map(|(v, c)| v * c).collect();
    let k2 = full.iter().zip(&cut).map(|(v, c)| v * (1.0 - c)).collect();
    Ok((GridOperator::multiplier(grid, k1)?, GridOperator::multiplier(grid, k2)?))
}

/// True when `P` agrees with `|xi|^m` on a few probe directions.
pub fn is_norm_power(p: &SymbolPoly) -> bool {
    let Ok(q) = SymbolPoly::norm_power(p.n(), p.m()) else { return false };
    crate::symbol::sphere_directions(p.n(), 24, 7).iter().all(|w| (p.eval(w) - q.eval(w)).abs() < 1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelProfile {
    /// Mean radius of each bin.
    pub radii: Vec<f64>,
    /// Mean of `|K(x)| e^{eps phi(x)}` over the bin.
    pub envelope: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub exponent: f64,
    pub stderr: f64,
    pub r2: f64,
    pub predicted: f64,
    pub eps: f64,
}

impl KernelProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,envelope\n");
        for (r, e) in self.radii.iter().zip(&self.envelope) {
            s.push_str(&format!("{r},{e}\n"));
        }
        s
    }
}

/// Radial log-binned envelope of `|K|`, undamped by `e^{eps phi}`, and its power-law fit.
pub fn kernel_profile(
    kernel: &GridField,
    r_min: f64,
    r_max: f64,
    bins: usize,
    eps: f64,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
) -> Result<KernelProfile> {
    let g = &kernel.grid;
    let (lo, hi) = (4.0 * g.l / g.big_n as f64, g.l / 4.0);
    if !(r_min > lo && r_max < hi && r_min < r_max) {
        return invalid(format!("fit window [{r_min}, {r_max}] not strictly inside ({lo}, {hi})"));
    }
    if bins < 3 {
        return invalid("need at least three bins");
    }
    let step = (r_max / r_min).ln() / bins as f64;
    let mut sum_r = vec![0.0; bins];
    let mut sum_k = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (i, v) in kernel.values.iter().enumerate() {
        let x = g.position(i);
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r <= r_min || r >= r_max {
            continue;
        }
        let b = (((r / r_min).ln() / step) as usize).min(bins - 1);
        sum_r[b] += r;
        sum_k[b] += v.norm() * (eps * phi(&x)).exp();
        count[b] += 1;
    }
    let mut radii = Vec::new();
    let mut envelope = Vec::new();
    for b in 0..bins {
        if count[b] > 0 {
            radii.push(sum_r[b] / count[b] as f64);
            envelope.push(sum_k[b] / count[b] as f64);
        }
    }
    if radii.len() < 3 || envelope.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Numerical("kernel profile has empty or vanishing bins".into()));
    }
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = envelope.iter().map(|e| e.ln()).collect();
    let (slope, _, stderr, r2) = linear_fit(&lx, &ly);
    Ok(KernelProfile { radii, envelope, r_min, r_max, exponent: slope, stderr, r2, predicted: f64::NAN, eps })
}

/// Decay fit of the `K1` kernel at `z = (1 + i eps)^m`; the prediction is `-(n+1)/2 + alpha`.
pub fn k1_decay_fit(
    grid: &TorusGrid,
    p: &SymbolPoly,
    alpha: f64,
    eps: f64,
    window: Option<(f64, f64)>,
    bins: usize,
) -> Result<KernelProfile> {
    let (r_min, r_max) = window.unwrap_or((4.0 * grid.l / grid.big_n as f64 * 1.25, grid.l / 4.0 * 0.95));
    if eps * r_max > 2.0 {
        return invalid(format!("eps = {eps} overdamps the window: eps * r_max = {} > 2", eps * r_max));
    }
    let z = Complex64::new(1.0, eps).powu(p.m());
    let spec = ResolventSpec::new(z, alpha)?;
    let (k1, _) = k1_k2_split(grid, p, &spec)?;
    let kernel = k1.kernel()?;
    let radial = is_norm_power(p);
    let phi = |x: &[f64]| -> f64 {
        if radial {
            x.iter().map(|c| c * c).sum::<f64>().sqrt()
        } else {
            support_function(p, x).map(|s| s.phi).unwrap_or(0.0)
        }
    };
    let mut prof = kernel_profile(&kernel, r_min, r_max, bins, eps, &phi)?;
    prof.predicted = -(grid.n as f64 + 1.0) / 2.0 + alpha;
    if prof.r2 < 0.8 {
        return Err(Error::Numerical(format!(
            "K1 decay fit has R^2 = {:.3} < 0.8; profile:\n{}",
            prof.r2,
            prof.to_csv()
        )));
    }
    Ok(prof)
}

/// `x -> e^{i zeta |x|} / (4 pi |x|)`, the kernel of `(-Delta - zeta^2)^{-1}` on `R^3`, `Im zeta > 0`.
pub fn closed_form_helmholtz_3d(p: &SymbolPoly, zeta: Complex64) -> Result<impl Fn(f64) -> Complex64> {
    if p.n() != 3 || p.m() != 2 || !is_norm_power(p) {
        return Err(Error::Unsupported("closed form needs n = 3 and P = |xi|^2".into()));
    }
    if !(zeta.im > 0.0) {
        return invalid("zeta must lie in the upper half plane");
    }
    Ok(move |r: f64| (Complex64::i() * zeta * r).exp() / (4.0 * PI * r))
}

/// Sum of the Helmholtz kernel over the `3^n` nearest periodic images of `x`.
pub fn helmholtz_image_sum(grid: &TorusGrid, zeta: Complex64, x: &[f64]) -> Complex64 {
    let n = grid.n;
    let mut s = ZERO;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut r2 = 0.0;
        for xi in x {
            let j = (c % 3) as f64 - 1.0;
            c /= 3;
            let y = xi + j * grid.l;
            r2 += y * y;
        }
        let r = r2.sqrt();
        s += (Complex64::i() * zeta * r).exp() / (4.0 * PI * r);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct HelmholtzComparison {
    pub points: usize,
    pub max_rel_err: f64,
    /// Size of the first omitted image shell relative to the kernel at `r_hi`.
    pub image_residual: f64,
}

/// Compares a grid kernel with the image-summed Helmholtz oracle on `r_lo <= |x| <= r_hi`.
pub fn compare_with_helmholtz(kernel: &GridField, zeta: Complex64, r_lo: f64, r_hi: f64) -> Result<HelmholtzComparison> {
    let g = &kernel.grid;
    if g.n != 3 {
        return Err(Error::Unsupported("Helmholtz oracle is three-dimensional".into()));
    }
    let mut worst = 0.0f64;
    let mut points = 0;
    for (i, v) in kernel.values.iter().enumerate() {
        let r = g.radius(i);
        if r < r_lo || r > r_hi {
            continue;
        }
        let o = helmholtz_image_sum(g, zeta, &g.position(i));
        worst = worst.max((v - o).norm() / o.norm());
        points += 1;
    }
    if points == 0 {
        return invalid("no grid points in the comparison shell");
    }
    let shell = (5f64.powi(3) - 27.0) * (-zeta.im * (2.0 * g.l - r_hi)).exp() / (4.0 * PI * (2.0 * g.l - r_hi));
    let at = (-zeta.im * r_hi).exp() / (4.0 * PI * r_hi);
    Ok(HelmholtzComparison { points, max_rel_err: worst, image_residual: shell / at })
}

/// `3x` the median gap between distinct lattice `P`-values within 5% of `lambda`.
pub fn boundary_eps(values: &[f64], lambda: f64) -> Result<f64> {
    let mut near: Vec<f64> = values.iter().copied().filter(|v| (v - lambda).abs() <= 0.05 * lambda).collect();
    near.sort_by(f64::total_cmp);
    near.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * lambda);
    if near.len() < 3 {
        return Err(Error::Numerical(format!("fewer than three lattice values within 5% of lambda = {lambda}")));
    }
    let mut gaps: Vec<f64> = near.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    Ok(3.0 * gaps[gaps.len() / 2])
}

/// `chi_+^{-alpha}(x)` regularised through boundary values,
/// `Gamma(alpha)/(2 pi i) [e^{i pi a}(x + i eps)^{-a} - e^{-i pi a}(x - i eps)^{-a}]`.
/// At `alpha = 1` this is the Poisson kernel.
pub fn chi_plus_boundary(x: f64, alpha: f64, eps: f64) -> Complex64 {
    jump_combination(JumpConvention::Swapped, alpha, x, eps) * gamma(alpha) / Complex64::new(0.0, 2.0 * PI)
}

/// `chi_+^{-alpha}(1 - P)` built from boundary resolvents at `1 +- i eps`,
/// `Gamma(alpha)/(2 pi i) [(P - 1 - i eps)^{-alpha} - (P - 1 + i eps)^{-alpha}]`,
/// Richardson-extrapolated over `eps_list` (ratio 10 between the last two entries).
pub fn br_from_boundary_resolvents(
    grid: &TorusGrid,
    p: &SymbolPoly,
    alpha: f64,
    eps_list: &[f64],
) -> Result<GridOperator> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha = {alpha} outside (0,1)"));
    }
    if eps_list.len() < 2 {
        return invalid("need at least two eps values");
    }
    let vals = grid.symbol_values(p)?;
    let build = |eps: f64| -> Result<Vec<Complex64>> {
        let up = resolvent_symbol(&vals, &ResolventSpec::boundary(1.0, eps, HalfPlane::Upper, alpha)?)?;
        let down = resolvent_symbol(&vals, &ResolventSpec::boundary(1.0, eps, HalfPlane::Lower, alpha)?)?;
        let c = gamma(alpha) / Complex64::new(0.0, 2.0 * PI);
        Ok(up.iter().zip(&down).map(|(a, b)| (a - b) * c).collect())
    };
    let k = eps_list.len();
    let (e1, e2) = (eps_list[k - 2], eps_list[k - 1]);
    let (f1, f2) = (build(e1)?, build(e2)?);
    let r = e1 / e2;
    let sym = f1.iter().zip(&f2).map(|(a, b)| (b * r - a) / (r - 1.0)).collect();
    GridOperator::multiplier(grid, sym)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// `|z|` or `lambda`.
    pub param: f64,
    pub z: Complex64,
    pub norm_lb: f64,
    pub eps: Option<f64>,
    /// Exact value rather than a lower bound.
    pub exact: bool,
}

#[derive(Clone, Debug)]
pub struct SweepOpts {
    pub tolerance: f64,
    pub seed: u64,
    pub iters: usize,
    pub restarts: usize,
    /// Run even when the exponent pair fails the admissibility test.
    pub allow_inadmissible: bool,
}

impl Default for SweepOpts {
    fn default() -> Self {
        Self { tolerance: 0.15, seed: 0, iters: 30, restarts: 4, allow_inadmissible: false }
    }
}

/// `||T||_{p->q}`: exact for `p = 1` and `(2,2)`, otherwise a lower bound.
pub fn measure_norm(op: &GridOperator, p: f64, q: f64, opts: &SweepOpts) -> Result<(f64, bool)> {
    if p == 1.0 {
        return Ok((op.one_to_q_norm(q)?, true));
    }
    if p == 2.0 && q == 2.0 {
        return Ok((op.l2_norm(), true));
    }
    let mut o = LowerBoundOpts::new(p, q, op.grid.cell_volume());
    o.seed = opts.seed;
    o.iters = opts.iters;
    o.restarts = opts.restarts;
    Ok((op.norm_lower_bound(p, q, o)?.value, false))
}

#[derive(Clone, Debug)]
pub struct SobolevReport {
    pub points: Vec<SweepPoint>,
    pub fit: ScalingReport,
    pub max_min_ratio: f64,
    pub on_sobolev_line: bool,
    pub admissibility: KrsVerdict,
}

fn check_admissible(n: u32, m: u32, point: &ExponentPoint, alpha: &Q, opts: &SweepOpts) -> Result<KrsVerdict> {
    let v = krs_admissible(n, m, point, alpha)?;
    if !v.admissible && !opts.allow_inadmissible {
        return invalid(format!("exponent pair inadmissible: {}", v.reason));
    }
    Ok(v)
}

/// Norms of `R_0(z)` over `|z|` in `moduli` and `arg z` in `args`, plus boundary values
/// `lambda + i eps(lambda)` at `lambda = |z|` when `boundary` is set. The slope is
/// fitted with one intercept per argument.
pub fn uniform_sobolev_sweep(
    grid: &TorusGrid,
    p: &SymbolPoly,
    point: &ExponentPoint,
    moduli: &[f64],
    args: &[f64],
    boundary: bool,
    opts: &SweepOpts,
) -> Result<SobolevReport> {
    let (n, m) = (grid.n as u32, p.m());
    let admissibility = check_admissible(n, m, point, &rat(1, 1), opts)?;
    let (ip, iq) = point.to_f64();
    if ip == 0.0 {
        return invalid("p = infinity is not supported");
    }
    let (pe, qe) = (1.0 / ip, if iq == 0.0 { f64::INFINITY } else { 1.0 / iq });
    let vals = grid.symbol_values(p)?;
    let mut specs = Vec::new();
    for &r in moduli {
        for &a in args {
            specs.push((r, ResolventSpec::new(Complex64::from_polar(r, a), 1.0)?));
        }
        if boundary {
            let eps = boundary_eps(&vals, r)?;
            specs.push((r, ResolventSpec::boundary(r, eps, HalfPlane::Upper, 1.0)?));
        }
    }
    let points: Vec<SweepPoint> = specs
        .par_iter()
        .map(|(r, spec)| -> Result<SweepPoint> {
            let op = GridOperator::multiplier(grid, resolvent_symbol(&vals, spec)?)?;
            let (v, exact) = measure_norm(&op, pe, qe, opts)?;
            Ok(SweepPoint { param: *r, z: spec.z, norm_lb: v, eps: spec.eps, exact })
        })
        .collect::<Result<_>>()?;
    let predicted = n as f64 / m as f64 * (ip - iq) - 1.0;
    // one group per argument of z (boundary points form their own group)
    let per = args.len() + usize::from(boundary);
    let groups: Vec<Vec<(f64, f64)>> =
        (0..per).map(|k| points.iter().skip(k).step_by(per).map(|s| (s.param, s.norm_lb)).collect()).collect();
    let mut fit = fit_power_law_grouped(&groups, predicted, opts.tolerance)?;
    fit.seed = Some(opts.seed);
    let hi = points.iter().map(|s| s.norm_lb).fold(0.0, f64::max);
    let lo = points.iter().map(|s| s.norm_lb).fold(f64::INFINITY, f64::min);
    let on_line = (ip - iq) * n as f64 == m as f64;
    Ok(SobolevReport { points, fit, max_min_ratio: hi / lo, on_sobolev_line: on_line, admissibility })
}

#[derive(Clone, Debug)]
pub struct BrSweepReport {
    pub points: Vec<SweepPoint>,
    pub fit: ScalingReport,
    /// `lambda` values excluded because they lie below the smallest nonzero lattice value.
    pub excluded: Vec<f64>,
}

/// Norms of `chi_+^{-alpha}(lambda - P(D))` (eps-regularised) over `lambda`, fitted against
/// `lambda^{(n/m)(1/p - 1/q) - alpha}`. `alpha = 0` uses the spectral window
/// `[lambda, lambda (1 + window)]` instead and predicts `(n/m)(1/p - 1/q)`.
pub fn br_negative_sweep(
    grid: &TorusGrid,
    p: &SymbolPoly,
    alpha: f64,
    point: &ExponentPoint,
    lambdas: &[f64],
    window: f64,
    opts: &SweepOpts,
) -> Result<BrSweepReport> {
    let (n, m) = (grid.n as u32, p.m());
    if alpha != 0.0 {
        let a = Q::from_float(alpha).ok_or_else(|| Error::InvalidParam("alpha not finite".into()))?;
        check_admissible(n, m, point, &a, opts)?;
    }
    let (ip, iq) = point.to_f64();
    let (pe, qe) = (1.0 / ip, if iq == 0.0 { f64::INFINITY } else { 1.0 / iq });
    let vals = grid.symbol_values(p)?;
    let min_nonzero = vals.iter().copied().filter(|v| *v > 1e-12).fold(f64::INFINITY, f64::min);
    let (excluded, kept): (Vec<f64>, Vec<f64>) = lambdas.iter().partition(|&&l| l < min_nonzero);
    let points: Vec<SweepPoint> = kept
        .par_iter()
        .map(|&lam| -> Result<SweepPoint> {
            let (sym, eps): (Vec<Complex64>, Option<f64>) = if alpha == 0.0 {
                let s = vals
                    .iter()
                    .map(|&v| if v >= lam && v <= lam * (1.0 + window) { Complex64::new(1.0, 0.0) } else { ZERO })
                    .collect();
                (s, None)
            } else {
                let eps = boundary_eps(&vals, lam)?;
                (vals.iter().map(|&v| chi_plus_boundary(lam - v, alpha, eps)).collect(), Some(eps))
            };
            let op = GridOperator::multiplier(grid, sym)?;
            let (v, exact) = measure_norm(&op, pe, qe, opts)?;
            Ok(SweepPoint { param: lam, z: Complex64::new(lam, eps.unwrap_or(0.0)), norm_lb: v, eps, exact })
        })
        .collect::<Result<_>>()?;
    let predicted = n as f64 / m as f64 * (ip - iq) - alpha;
    let pairs: Vec<(f64, f64)> = points.iter().map(|s| (s.param, s.norm_lb)).collect();
    let mut fit = fit_power_law(&pairs, predicted, opts.tolerance)?;
    fit.seed = Some(opts.seed);
    Ok(BrSweepReport { points, fit, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bochner_riesz_op, BrMode, BrVariant};

    fn lap(n: usize) -> SymbolPoly {
        SymbolPoly::norm_power(n, 2).unwrap()
    }

    #[test]
    fn lattice_example() {
        let g = TorusGrid::new(1, 4, 2.0 * PI).unwrap();
        let op = fractional_resolvent(&g, &lap(1), &ResolventSpec::new(Complex64::new(-1.0, 0.0), 1.0).unwrap()).unwrap();
        let mut got: Vec<f64> = op.symbol().unwrap().iter().map(|v| v.re).collect();
        got.sort_by(f64::total_cmp);
        let want = [0.2, 0.5, 0.5, 1.0];
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let id = fractional_resolvent(&g, &lap(1), &ResolventSpec::new(Complex64::new(-1.0, 0.0), 0.0).unwrap()).unwrap();
        assert!(id.symbol().unwrap().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
        assert!(ResolventSpec::new(Complex64::new(-1.0, 0.0), -0.5).is_err());
    }

    #[test]
    fn semigroup_and_split() {
        let g = TorusGrid::new(2, 16, 10.0).unwrap();
        let p = lap(2);
        let z = Complex64::new(1.0, 0.3);
        let a = fractional_resolvent(&g, &p, &ResolventSpec::new(z, 0.4).unwrap()).unwrap();
        let b = fractional_resolvent(&g, &p, &ResolventSpec::new(z, 0.7).unwrap()).unwrap();
        let ab = fractional_resolvent(&g, &p, &ResolventSpec::new(z, 1.1).unwrap()).unwrap();
        let c = a.compose(&b).unwrap();
        let e = c.symbol().unwrap().iter().zip(ab.symbol().unwrap()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(e < 1e-12);
        let spec = ResolventSpec::new(Complex64::new(1.0, 0.1).powu(2), 1.0).unwrap();
        let (k1, k2) = k1_k2_split(&g, &p, &spec).unwrap();
        let full = fractional_resolvent(&g, &p, &spec).unwrap();
        let e = k1
            .symbol()
            .unwrap()
            .iter()
            .zip(k2.symbol().unwrap())
            .zip(full.symbol().unwrap())
            .map(|((x, y), f)| (x + y - f).norm())
            .fold(0.0, f64::max);
        assert!(e < 1e-15);
    }

    #[test]
    fn conjugation_and_scaling() {
        let g = TorusGrid::new(2, 16, 12.0).unwrap();
        let p = lap(2);
        let z = Complex64::new(0.7, 0.4);
        let k = fractional_resolvent(&g, &p, &ResolventSpec::new(z, 0.6).unwrap()).unwrap().kernel().unwrap();
        let kc = fractional_resolvent(&g, &p, &ResolventSpec::new(z.conj(), 0.6).unwrap()).unwrap().kernel().unwrap();
        let e = k.values.iter().zip(&kc.values).map(|(a, b)| (a.conj() - b).norm()).fold(0.0, f64::max);
        assert!(e < 1e-12);
        // grid L/2 doubles every frequency: (P(2 xi) - 4 z)^{-a} = 4^{-a} (P(xi) - z)^{-a}
        let g2 = TorusGrid::new(2, 16, 6.0).unwrap();
        let a = 0.6;
        let s1 = fractional_resolvent(&g, &p, &ResolventSpec::new(z, a).unwrap()).unwrap();
        let s2 = fractional_resolvent(&g2, &p, &ResolventSpec::new(z * 4.0, a).unwrap()).unwrap();
        let e = s1
            .symbol()
            .unwrap()
            .iter()
            .zip(s2.symbol().unwrap())
            .map(|(x, y)| (x * 4f64.powf(-a) - y).norm())
            .fold(0.0, f64::max);
        assert!(e < 1e-13);
    }

    #[test]
    fn l2_norm_at_minus_one() {
        let g = TorusGrid::new(3, 8, 10.0).unwrap();
        let op = fractional_resolvent(&g, &lap(3), &ResolventSpec::new(Complex64::new(-1.0, 0.0), 1.0).unwrap()).unwrap();
        assert!((op.l2_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn helmholtz_oracle() {
        // The raw lattice resolvent carries an O(h) aliasing error from the cube
        // truncation of 1/(|xi|^2 + 1): about 11% at r = 2 for N = 64, L = 16, halving with h.
        let p = lap(3);
        let err = |nn: usize| {
            let g = TorusGrid::new(3, nn, 16.0).unwrap();
            let op = fractional_resolvent(&g, &p, &ResolventSpec::new(Complex64::new(-1.0, 0.0), 1.0).unwrap()).unwrap();
            compare_with_helmholtz(&op.kernel().unwrap(), Complex64::new(0.0, 1.0), 1.95, 2.05).unwrap().max_rel_err
        };
        let (e64, e128) = (err(64), err(128));
        assert!(e64 < 0.15 && e128 < 0.6 * e64, "{e64} {e128}");
        let f = closed_form_helmholtz_3d(&p, Complex64::new(0.0, 1.0)).unwrap();
        assert!((f(2.0).re - (-2f64).exp() / (8.0 * PI)).abs() < 1e-15);
        assert!(closed_form_helmholtz_3d(&lap(2), Complex64::new(0.0, 1.0)).is_err());
        // zeta -> 0: the fundamental solution 1/(4 pi r)
        let f0 = closed_form_helmholtz_3d(&p, Complex64::new(0.0, 1e-12)).unwrap();
        assert!((f0(3.0).re * 4.0 * PI * 3.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn band_limited_k1_matches_helmholtz() {
        // K1 has no aliasing, and K2 is negligible at mid-range radii
        let g = TorusGrid::new(3, 128, 64.0).unwrap();
        let eps = 0.125;
        let spec = ResolventSpec::new(Complex64::new(1.0, eps).powu(2), 1.0).unwrap();
        let (k1, _) = k1_k2_split(&g, &lap(3), &spec).unwrap();
        let c = compare_with_helmholtz(&k1.kernel().unwrap(), Complex64::new(1.0, eps), 7.7, 8.3).unwrap();
        assert!(c.max_rel_err < 0.01, "{c:?}");
    }

    #[test]
    fn k2_decays_fast_and_k1_is_bounded() {
        // the decay of K2 is asymptotic, so the fit uses the outer window [L/16, L/4)
        let g = TorusGrid::new(2, 256, 128.0).unwrap();
        let p = lap(2);
        let spec = ResolventSpec::new(Complex64::new(1.0, 0.1).powu(2), 1.0).unwrap();
        let (k1, k2) = k1_k2_split(&g, &p, &spec).unwrap();
        let prof = kernel_profile(&k2.kernel().unwrap(), 8.0, 31.0, 12, 0.0, &|_| 0.0).unwrap();
        assert!(prof.exponent <= -4.0, "{prof:?}");
        let near = |op: &GridOperator| {
            let k = op.kernel().unwrap();
            (0..g.size()).filter(|&i| g.radius(i) <= 1.0).map(|i| k.values[i].norm()).fold(0.0, f64::max)
        };
        let a = near(&k1);
        let spec2 = ResolventSpec::new(Complex64::new(1.0, 0.05).powu(2), 1.0).unwrap();
        let b = near(&k1_k2_split(&g, &p, &spec2).unwrap().0);
        assert!(a.is_finite() && (a - b).abs() < 0.1 * a, "{a} {b}");
    }

    #[test]
    fn k1_overdamped_is_refused() {
        let g = TorusGrid::new(2, 64, 32.0).unwrap();
        assert!(k1_decay_fit(&g, &lap(2), 0.5, 1.0, None, 10).is_err());
    }

    #[test]
    fn boundary_br_matches_direct_multiplier() {
        let g = TorusGrid::new(1, 256, 2.0 * PI * 10.3).unwrap();
        let p = lap(1);
        for alpha in [0.25, 0.5, 0.75] {
            let a = br_from_boundary_resolvents(&g, &p, alpha, &[1e-2, 1e-3, 1e-4]).unwrap();
            let b = bochner_riesz_op(&g, 1.0, -alpha, &p, BrVariant::Power, BrMode::Direct, 0.02).unwrap();
            let e = a.symbol().unwrap().iter().zip(b.symbol().unwrap()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(e < 1e-3, "alpha {alpha}: {e}");
        }
    }

    #[test]
    fn chi_plus_boundary_is_poisson_at_one() {
        let (x, eps) = (0.3, 0.05);
        let v = chi_plus_boundary(x, 1.0, eps);
        assert!((v.re - eps / (PI * (x * x + eps * eps))).abs() < 1e-12 && v.im.abs() < 1e-12);
        let w = chi_plus_boundary(x, 0.5, 1e-9);
        assert!((w.re - x.powf(-0.5) / gamma(0.5)).abs() < 1e-6);
    }

    #[test]
    fn inadmissible_pairs_are_refused() {
        let g = TorusGrid::new(3, 8, 10.0).unwrap();
        let pt = ExponentPoint::new(rat(1, 2), rat(1, 2)).unwrap();
        let r = uniform_sobolev_sweep(&g, &lap(3), &pt, &[1.0], &[PI / 2.0], false, &SweepOpts::default());
        assert!(matches!(r, Err(Error::InvalidParam(_))));
    }

    #[test]
    fn boundary_eps_from_spacing() {
        let vals: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        assert!((boundary_eps(&vals, 1.0).unwrap() - 0.03).abs() < 1e-12);
        assert!(boundary_eps(&[1.0], 1.0).is_err());
    }
}
