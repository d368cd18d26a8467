//! Discrete Lebesgue norms, operator-norm measurement and power-law fits.
//!
//! Norms carry the cell volume: `||f||_p = (sum |f|^p h^n)^{1/p}`. Exact
//! operator norms exist for `p = 1`, `q = inf` and `(2, 2)`; everything else is
//! a lower bound from alternating dual power iteration.

use num::complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dense::DenseMatrix;
use crate::error::{invalid, Error, Result};

/// Hölder conjugate, with `1 <-> inf`.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

pub fn lp_norm(f: &[Complex64], p: f64, cell_volume: f64) -> f64 {
    if p.is_infinite() {
        return f.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let s: f64 = f.iter().map(|z| z.norm().powf(p)).sum();
    (s * cell_volume).powf(1.0 / p)
}

fn real_lp_norm(f: impl Iterator<Item = f64>, p: f64, cell_volume: f64) -> f64 {
    if p.is_infinite() {
        return f.fold(0.0, |a, x| a.max(x.abs()));
    }
    let s: f64 = f.map(|x| x.abs().powf(p)).sum();
    (s * cell_volume).powf(1.0 / p)
}

/// Weighted pairing `sum f conj(g) h^n`.
pub fn pairing(f: &[Complex64], g: &[Complex64], cell_volume: f64) -> Complex64 {
    f.iter().zip(g).map(|(a, b)| a * b.conj()).sum::<Complex64>() * cell_volume
}

/// `||A||_{p->q}` when a closed form exists: `p = 1`, `q = inf`, or `p = q = 2`.
pub fn exact_norm(a: &DenseMatrix, p: f64, q: f64) -> Result<f64> {
    let w = a.cell_volume;
    if p == 1.0 {
        return Ok((0..a.cols)
            .map(|j| real_lp_norm(a.column(j).iter().map(|z| z.norm() / w), q, w))
            .fold(0.0, f64::max));
    }
    if q.is_infinite() {
        let pp = conjugate(p);
        return Ok((0..a.rows)
            .map(|i| real_lp_norm((0..a.cols).map(|j| a.get(i, j).norm() / w), pp, w))
            .fold(0.0, f64::max));
    }
    if p == 2.0 && q == 2.0 {
        return Ok(a.max_singular_value());
    }
    invalid(format!("no closed form for the {p}->{q} norm; use lower_bound"))
}

/// `|v|^{r-1} sgn(v)` normalised so that its `r'`-dual pairing with `v` is `||v||_r`
/// and its `L^{r'}` norm is one.
fn dual_vector(v: &[Complex64], r: f64, cell_volume: f64) -> Vec<Complex64> {
    let nv = lp_norm(v, r, cell_volume);
    if nv == 0.0 {
        return vec![Complex64::new(0.0, 0.0); v.len()];
    }
    if r.is_infinite() {
        let (k, _) = v
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
        let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
        out[k] = v[k] / v[k].norm() / cell_volume;
        return out;
    }
    v.iter()
        .map(|z| {
            let a = z.norm();
            if a == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                z / a * (a / nv).powf(r - 1.0)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBound {
    pub value: f64,
    pub seed: u64,
    /// Running maximum after each iteration of each start.
    pub history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LowerBoundOpts {
    pub p: f64,
    pub q: f64,
    pub iters: usize,
    pub seed: u64,
    pub restarts: usize,
    pub cell_volume: f64,
    /// Deterministic starting vectors tried before the random restarts.
    pub extra_starts: Vec<Vec<Complex64>>,
}

impl LowerBoundOpts {
    pub fn new(p: f64, q: f64, cell_volume: f64) -> Self {
        Self { p, q, iters: 30, seed: 0, restarts: 8, cell_volume, extra_starts: Vec::new() }
    }
}

/// Alternating dual-exponent power iteration for `||A||_{p->q}`.
///
/// `apply` and `adjoint_apply` act on vectors of length `dim`; the adjoint is
/// with respect to the weighted pairing. The result is always attained by an
/// explicit vector, so it is a valid lower bound.
pub fn lower_bound(
    apply: &dyn Fn(&[Complex64]) -> Vec<Complex64>,
    adjoint_apply: &dyn Fn(&[Complex64]) -> Vec<Complex64>,
    dim: usize,
    opts: &LowerBoundOpts,
) -> Result<LowerBound> {
    let (p, q, w) = (opts.p, opts.q, opts.cell_volume);
    if !(p >= 1.0 && q >= 1.0) {
        return invalid(format!("exponents p = {p}, q = {q} must be >= 1"));
    }
    let pp = conjugate(p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = opts.extra_starts.clone();
    for _ in 0..opts.restarts {
        starts.push(
            (0..dim)
                .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                .collect(),
        );
    }
    let mut best = 0.0f64;
    let mut history = Vec::new();
    for start in starts {
        if start.len() != dim {
            return invalid("starting vector has the wrong length");
        }
        let mut x = start;
        let nx = lp_norm(&x, p, w);
        if nx == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|z| *z /= nx);
        for _ in 0..opts.iters.max(1) {
            let y = apply(&x);
            let ratio = lp_norm(&y, q, w);
            if !ratio.is_finite() {
                return Err(Error::Numerical("non-finite value in power iteration".into()));
            }
            best = best.max(ratio);
            history.push(best);
            if ratio == 0.0 {
                break;
            }
            let s = dual_vector(&y, q, w);
            let z = adjoint_apply(&s);
            let xn = dual_vector(&z, pp, w);
            if xn.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                break;
            }
            let nxn = lp_norm(&xn, p, w);
            x = xn.into_iter().map(|v| v / nxn).collect();
        }
    }
    Ok(LowerBound { value: best, seed: opts.seed, history })
}

/// [`lower_bound`] for a dense matrix. A delta at the column of largest
/// `L^q` norm is added to the starts.
pub fn dense_lower_bound(a: &DenseMatrix, opts: &LowerBoundOpts) -> Result<LowerBound> {
    let mut o = opts.clone();
    o.cell_volume = a.cell_volume;
    let best_col = (0..a.cols)
        .map(|j| (j, lp_norm(a.column(j), opts.q, a.cell_volume)))
        .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc })
        .0;
    let mut delta = vec![Complex64::new(0.0, 0.0); a.cols];
    if a.cols > 0 {
        delta[best_col] = Complex64::new(1.0, 0.0);
        o.extra_starts.insert(0, delta);
    }
    lower_bound(&|x| a.matvec(x), &|x| a.adjoint_matvec(x), a.cols, &o)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
    pub predicted_slope: f64,
    pub tolerance: f64,
    pub verdict: bool,
    pub seed: Option<u64>,
}

impl ScalingReport {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slope": self.slope,
            "stderr": self.stderr,
            "r2": self.r2,
            "predicted": self.predicted_slope,
            "tolerance": self.tolerance,
            "verdict": if self.verdict { "PASS" } else { "FAIL" },
            "seed": self.seed,
        })
    }
}

/// Least squares on `(log x, log y)`. Requires six points spanning a decade.
pub fn fit_power_law(points: &[(f64, f64)], predicted_slope: f64, tolerance: f64) -> Result<ScalingReport> {
    if points.len() < 6 {
        return invalid(format!("{} points; at least 6 needed", points.len()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return invalid("power-law fit needs positive abscissae and values");
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    if hi / lo < 10.0 * (1.0 - 1e-12) {
        return invalid(format!("abscissae span {:.3} decades; at least 1 needed", (hi / lo).log10()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, stderr, r2) = linear_fit(&lx, &ly);
    Ok(ScalingReport {
        pairs: points.to_vec(),
        slope,
        intercept,
        stderr,
        r2,
        predicted_slope,
        tolerance,
        verdict: (slope - predicted_slope).abs() <= tolerance && r2 >= 0.9,
        seed: None,
    })
}

/// Power-law fit with a common slope and one intercept per group (e.g. one per
/// `arg z`). `r2` is computed on the group-demeaned logs; `intercept` is the mean
/// of the group intercepts.
pub fn fit_power_law_grouped(groups: &[Vec<(f64, f64)>], predicted_slope: f64, tolerance: f64) -> Result<ScalingReport> {
    let all: Vec<(f64, f64)> = groups.iter().flatten().copied().collect();
    if groups.iter().any(|g| g.len() < 2) {
        return invalid("every group needs at least two points");
    }
    // reuse the checks on point count, positivity and span
    fit_power_law(&all, predicted_slope, tolerance)?;
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    let mut means = Vec::new();
    for g in groups {
        let mx = g.iter().map(|p| p.0.ln()).sum::<f64>() / g.len() as f64;
        let my = g.iter().map(|p| p.1.ln()).sum::<f64>() / g.len() as f64;
        means.push((mx, my));
        for p in g {
            dx.push(p.0.ln() - mx);
            dy.push(p.1.ln() - my);
        }
    }
    let (slope, _, _, r2) = linear_fit(&dx, &dy);
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    let ss_res: f64 = dx.iter().zip(&dy).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let dof = dx.len() as f64 - groups.len() as f64 - 1.0;
    let stderr = if dof > 0.0 { (ss_res / dof / sxx).sqrt() } else { f64::NAN };
    let intercept = means.iter().map(|(mx, my)| my - slope * mx).sum::<f64>() / means.len() as f64;
    Ok(ScalingReport {
        pairs: all,
        slope,
        intercept,
        stderr,
        r2,
        predicted_slope,
        tolerance,
        verdict: (slope - predicted_slope).abs() <= tolerance && r2 >= 0.9,
        seed: None,
    })
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, stderr(a), r2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy <= 1e-30 * (1.0 + my * my) { 1.0 } else { 1.0 - ss_res / syy };
    let stderr = if x.len() > 2 { (ss_res / (k - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, intercept, stderr, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64, w: f64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        DenseMatrix { rows, cols, cell_volume: w, data }
    }

    #[test]
    fn grouped_fit_separates_intercepts() {
        let xs: Vec<f64> = (0..6).map(|i| 10f64.powf(i as f64 / 5.0)).collect();
        let groups: Vec<Vec<(f64, f64)>> =
            [1.0, 3.0, 0.2].iter().map(|c| xs.iter().map(|&x| (x, c * x.powf(-0.5))).collect()).collect();
        let r = fit_power_law_grouped(&groups, -0.5, 0.01).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12 && r.r2 > 1.0 - 1e-12 && r.verdict);
        let pooled = fit_power_law(&r.pairs, -0.5, 0.01).unwrap();
        assert!(pooled.r2 < 0.9);
    }

    #[test]
    fn identity_norms() {
        let w = 0.125;
        let id = DenseMatrix::identity(8, 1.0);
        let id_w = DenseMatrix { cell_volume: w, ..id.clone() };
        for a in [&id, &id_w] {
            assert!((exact_norm(a, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
            assert!((exact_norm(a, f64::INFINITY, f64::INFINITY).unwrap() - 1.0).abs() < 1e-14);
            assert!((exact_norm(a, 2.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(exact_norm(&id, 1.5, 3.0).is_err());
    }

    #[test]
    fn one_to_inf_is_kernel_sup() {
        let a = random_matrix(5, 4, 3, 0.5);
        let sup = a.data.iter().map(|z| z.norm()).fold(0.0, f64::max) / 0.5;
        assert!((exact_norm(&a, 1.0, f64::INFINITY).unwrap() - sup).abs() < 1e-12);
        assert!((exact_norm(&a, 1.5, f64::INFINITY).unwrap()).is_finite());
    }

    #[test]
    fn rank_one_closed_forms_agree() {
        let w = 0.25;
        let u: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64 - 2.0, 0.3 * i as f64)).collect();
        let v: Vec<Complex64> = (0..6).map(|i| Complex64::new(1.0 + (i % 3) as f64, -0.5)).collect();
        // A f = u <f, v> = sum_y u(x) conj v(y) f(y) w, so the matrix entry is u conj(v) w.
        let mut a = DenseMatrix::zeros(6, 6, w);
        for j in 0..6 {
            for i in 0..6 {
                a.set(i, j, u[i] * v[j].conj() * w);
            }
        }
        for (p, q) in [(1.0, 3.0), (1.0, f64::INFINITY), (1.5, f64::INFINITY), (2.0, 2.0)] {
            let want = lp_norm(&u, q, w) * lp_norm(&v, conjugate(p), w);
            let got = exact_norm(&a, p, q).unwrap();
            assert!((got - want).abs() < 1e-10 * want, "{p}->{q}: {got} vs {want}");
        }
        let lb = dense_lower_bound(&a, &LowerBoundOpts::new(1.5, 3.0, w)).unwrap();
        let want = lp_norm(&u, 3.0, w) * lp_norm(&v, 3.0, w);
        assert!((lb.value - want).abs() < 1e-8 * want);
    }

    #[test]
    fn diagonal_power_iteration() {
        let mut a = DenseMatrix::zeros(2, 2, 1.0);
        a.set(0, 0, c(2.0));
        a.set(1, 1, c(1.0));
        let mut o = LowerBoundOpts::new(2.0, 2.0, 1.0);
        o.iters = 3;
        o.restarts = 1;
        let lb = dense_lower_bound(&a, &o).unwrap();
        assert!((lb.value - 2.0).abs() < 1e-3, "{}", lb.value);
    }

    #[test]
    fn lower_bound_never_exceeds_exact() {
        for seed in 0..100u64 {
            let a = random_matrix(6, 6, seed, 0.3);
            for (p, q) in [(2.0, 2.0), (1.0, 1.7), (1.3, f64::INFINITY)] {
                let exact = exact_norm(&a, p, q).unwrap();
                let mut o = LowerBoundOpts::new(p, q, 0.3);
                o.seed = seed;
                let lb = dense_lower_bound(&a, &o).unwrap();
                assert!(lb.value <= exact * (1.0 + 1e-12), "seed {seed} {p}->{q}");
            }
            let lb = dense_lower_bound(&a, &LowerBoundOpts::new(2.0, 2.0, 0.3)).unwrap();
            assert!(lb.value >= 0.99 * exact_norm(&a, 2.0, 2.0).unwrap());
        }
    }

    #[test]
    fn nonnegative_convolution_constant_probe() {
        // Circulant with a nonnegative kernel: ||A||_{p->p} = sum of the kernel.
        let k = 16;
        let kern = [0.5, 0.2, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.2];
        let mut a = DenseMatrix::zeros(k, k, 1.0);
        for j in 0..k {
            for i in 0..k {
                a.set(i, j, c(kern[(i + k - j) % k]));
            }
        }
        let exact = exact_norm(&a, 1.0, 1.0).unwrap();
        let mut o = LowerBoundOpts::new(1.5, 1.5, 1.0);
        o.extra_starts = vec![vec![c(1.0); k]];
        let lb = dense_lower_bound(&a, &o).unwrap();
        assert!((lb.value - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn duality_of_lower_bounds() {
        for seed in 0..10u64 {
            let a = random_matrix(7, 7, 100 + seed, 1.0);
            let (p, q) = (1.5, 2.5);
            let mut o = LowerBoundOpts::new(p, q, 1.0);
            o.iters = 60;
            let lb = dense_lower_bound(&a, &o).unwrap().value;
            let mut od = LowerBoundOpts::new(conjugate(q), conjugate(p), 1.0);
            od.iters = 60;
            let lbd = dense_lower_bound(&a.adjoint(), &od).unwrap().value;
            assert!((lb - lbd).abs() < 0.05 * lb.max(lbd), "{lb} vs {lbd}");
        }
    }

    #[test]
    fn history_is_monotone() {
        let a = random_matrix(5, 5, 7, 1.0);
        let lb = dense_lower_bound(&a, &LowerBoundOpts::new(1.2, 4.0, 1.0)).unwrap();
        assert!(lb.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fit_examples() {
        let pts: Vec<(f64, f64)> = (0..8).map(|i| {
            let x = 10f64.powf(i as f64 / 5.0);
            (x, x.powf(1.5))
        }).collect();
        let r = fit_power_law(&pts, 1.5, 0.01).unwrap();
        assert!((r.slope - 1.5).abs() < 1e-12 && r.stderr < 1e-10 && (r.r2 - 1.0).abs() < 1e-12);
        assert!(r.verdict);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<(f64, f64)> = (0..20).map(|i| {
            let x = 10f64.powf(i as f64 / 10.0);
            let e: f64 = StandardNormal.sample(&mut rng);
            (x, x.powf(-0.5) * (1.0 + 0.05 * e))
        }).collect();
        let r = fit_power_law(&pts, -0.5, 0.1).unwrap();
        assert!((r.slope + 0.5).abs() < 1.5 * r.stderr + 1e-3, "{} +- {}", r.slope, r.stderr);

        let short: Vec<(f64, f64)> = (0..5).map(|i| (1.0 + i as f64 * 0.5, 1.0)).collect();
        assert!(fit_power_law(&short, 0.0, 0.1).is_err());
        let half: Vec<(f64, f64)> = (0..6).map(|i| (1.0 + i as f64 * 0.4, 1.0)).collect();
        assert!(fit_power_law(&half, 0.0, 0.1).is_err());
        let flat: Vec<(f64, f64)> = (0..6).map(|i| (10f64.powi(i), 1.0)).collect();
        let r = fit_power_law(&flat, 0.0, 0.1).unwrap();
        assert_eq!(r.r2, 1.0);
        assert!(r.verdict);
    }

    proptest! {
        #[test]
        fn holder(seed in 0u64..1000, p in 1.01f64..8.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || -> Vec<Complex64> {
                (0..16).map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect()
            };
            let (f, g) = (draw(), draw());
            let w = 0.37;
            let lhs = pairing(&f, &g, w).norm();
            let rhs = lp_norm(&f, p, w) * lp_norm(&g, conjugate(p), w);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
