//! `H = P(D) + V` on the torus grid with `V >= 0`.
//!
//! Two execution modes: matrix-free (multiplier plus diagonal compositions,
//! any grid size) and dense (materialized real symmetric matrix with a cached
//! eigendecomposition, at most [`DENSE_CAP`] points).

use std::f64::consts::PI;
use std::sync::OnceLock;

use num::complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::dense::{DenseMatrix, SymmetricEigen};
use crate::error::{invalid, Error, Result};
use crate::grid::{window_occupancy, GridFft, GridField, GridOperator, TorusGrid};
use crate::norms::{conjugate, fit_power_law, linear_fit, lower_bound, lp_norm, pairing, LowerBoundOpts, ScalingReport};
use crate::region::{rat, rational_to_f64, Q};
use crate::symbol::SymbolPoly;

pub const DENSE_CAP: usize = 4096;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0 + 1.0)
}

/// Mean of `|x|^{-s}` over the cube `[-h/2, h/2]^n`, `0 < s < n`.
///
/// The inscribed ball is integrated exactly; the rest by midpoint rule. For
/// `n > 4` the equal-volume ball average is used instead.
pub fn cell_average_inverse_power(n: usize, h: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < n as f64) {
        return invalid(format!("cell average of |x|^-{s} diverges in dimension {n}"));
    }
    let nf = n as f64;
    if n > 4 {
        let rho = (1.0 / unit_ball_volume(n)).powf(1.0 / nf);
        return Ok(nf / (nf - s) * rho.powf(-s) * h.powf(-s));
    }
    // unit cube, inscribed radius 1/2
    let ball = nf * unit_ball_volume(n) * 0.5f64.powf(nf - s) / (nf - s);
    let m: usize = match n {
        1 => 4000,
        2 => 600,
        3 => 120,
        _ => 40,
    };
    let step = 1.0 / m as f64;
    let total = m.pow(n as u32);
    // Sequential so the sum does not depend on the thread count.
    let outer: f64 = (0..total)
        .map(|mut k| {
            let mut r2 = 0.0;
            for _ in 0..n {
                let c = -0.5 + (k % m) as f64 * step + 0.5 * step;
                r2 += c * c;
                k /= m;
            }
            if r2 > 0.25 {
                r2.powf(-s / 2.0)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * step.powi(n as i32);
    Ok((ball + outer) * h.powf(-s))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Smallness {
    /// `||V||_{n/m}`.
    pub lnm_norm: f64,
    /// `sup_y sum_x V(x) |x - y|^{m-n} h^n`; `None` when `n <= m`.
    pub kato_like: Option<f64>,
}

impl Smallness {
    pub fn total(&self) -> f64 {
        self.lnm_norm + self.kato_like.unwrap_or(0.0)
    }

    pub fn passes(&self, c0: f64) -> bool {
        self.total() < c0
    }
}

/// Built-in potentials. `c` is the amplitude in every case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialBuiltin {
    /// `c 1_{|x| <= r}`.
    BallIndicator { c: f64, r: f64 },
    /// `c exp(-|x|^2 / sigma^2)`.
    Gaussian { c: f64, sigma: f64 },
    /// `c / |x|^2`, origin cell replaced by its cell average.
    InverseSquare { c: f64 },
}

/// Nonnegative potential with its smallness functional kept in sync.
#[derive(Clone, Debug)]
pub struct PotentialSpec {
    pub grid: TorusGrid,
    pub m: u32,
    values: Vec<f64>,
    smallness: Smallness,
}

impl PotentialSpec {
    pub fn new(grid: &TorusGrid, m: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return invalid("potential length does not match the grid");
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid(format!("potential must be finite and nonnegative, got {} at index {i}", values[i]));
        }
        if m == 0 {
            return invalid("order m must be positive");
        }
        let smallness = compute_smallness(grid, m, &values)?;
        Ok(Self { grid: grid.clone(), m, values, smallness })
    }

    pub fn zero(grid: &TorusGrid, m: u32) -> Result<Self> {
        Self::new(grid, m, vec![0.0; grid.size()])
    }

    pub fn builtin(grid: &TorusGrid, m: u32, b: &PotentialBuiltin) -> Result<Self> {
        let vals: Vec<f64> = match *b {
            PotentialBuiltin::BallIndicator { c, r } => {
                (0..grid.size()).map(|i| if grid.radius(i) <= r { c } else { 0.0 }).collect()
            }
            PotentialBuiltin::Gaussian { c, sigma } => {
                if !(sigma > 0.0) {
                    return invalid("gaussian width must be positive");
                }
                (0..grid.size()).map(|i| c * (-(grid.radius(i) / sigma).powi(2)).exp()).collect()
            }
            PotentialBuiltin::InverseSquare { c } => {
                let origin = c * cell_average_inverse_power(grid.n, grid.h(), 2.0)?;
                (0..grid.size())
                    .map(|i| if i == 0 { origin } else { c / grid.radius(i).powi(2) })
                    .collect()
            }
        };
        Self::new(grid, m, vals)
    }

    pub fn from_field(field: &GridField, m: u32) -> Result<Self> {
        if field.values.iter().any(|z| z.im.abs() > 1e-12 * (1.0 + z.re.abs())) {
            return invalid("potential must be real");
        }
        Self::new(&field.grid, m, field.values.iter().map(|z| z.re).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn smallness(&self) -> &Smallness {
        &self.smallness
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Replaces the values, recomputing the smallness functional.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        *self = Self::new(&self.grid, self.m, values)?;
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(&self.grid, self.m, self.values.iter().map(|v| v * s).collect())
    }
}

fn compute_smallness(grid: &TorusGrid, m: u32, v: &[f64]) -> Result<Smallness> {
    let n = grid.n;
    let w = grid.cell_volume();
    let r = n as f64 / m as f64;
    let lnm_norm = (v.iter().map(|x| x.powf(r)).sum::<f64>() * w).powf(1.0 / r);
    let kato_like = if n > m as usize { Some(kato_sup(grid, m, v)?) } else { None };
    Ok(Smallness { lnm_norm, kato_like })
}

/// `sup_y (V * |.|^{m-n})(y)` by FFT convolution with the minimum-image kernel.
fn kato_sup(grid: &TorusGrid, m: u32, v: &[f64]) -> Result<f64> {
    if v.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    let s = grid.n as f64 - m as f64;
    let origin = cell_average_inverse_power(grid.n, grid.h(), s)?;
    let fft = GridFft::new(grid);
    let mut k: Vec<Complex64> = (0..grid.size())
        .map(|i| Complex64::new(if i == 0 { origin } else { grid.radius(i).powf(-s) }, 0.0))
        .collect();
    let mut f: Vec<Complex64> = v.iter().map(|x| Complex64::new(*x, 0.0)).collect();
    fft.forward(&mut k);
    fft.forward(&mut f);
    f.iter_mut().zip(&k).for_each(|(a, b)| *a *= b);
    fft.inverse(&mut f);
    let scale = (grid.size() as f64).sqrt() * grid.cell_volume();
    Ok(f.iter().map(|z| z.re * scale).fold(0.0, f64::max))
}

/// `Smallness` of `V` against `c0`.
pub fn smallness_functional(v: &PotentialSpec) -> Smallness {
    v.smallness.clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MatrixFree,
    Dense,
}

/// `H = P(D) + V`. Dense data are built on first use and then shared read-only.
#[derive(Debug)]
pub struct PerturbedOperator {
    pub p: SymbolPoly,
    pub v: PotentialSpec,
    pub mode: Mode,
    symbol: Vec<f64>,
    h0: GridOperator,
    matrix: OnceLock<Vec<f64>>,
    eigen: OnceLock<std::result::Result<SymmetricEigen, String>>,
}

impl PerturbedOperator {
    pub fn new(p: &SymbolPoly, v: PotentialSpec, mode: Mode) -> Result<Self> {
        let grid = v.grid.clone();
        if p.n() != grid.n {
            return invalid("symbol and grid dimensions differ");
        }
        if p.m() != v.m {
            return invalid("potential was built for a different order m");
        }
        if mode == Mode::Dense && grid.size() > DENSE_CAP {
            return Err(Error::Refused(format!("grid has {} points, dense cap is {DENSE_CAP}", grid.size())));
        }
        let symbol = grid.symbol_values(p)?;
        let h0 = GridOperator::multiplier(&grid, symbol.iter().map(|&l| Complex64::new(l, 0.0)).collect())?;
        Ok(Self { p: p.clone(), v, mode, symbol, h0, matrix: OnceLock::new(), eigen: OnceLock::new() })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.v.grid
    }

    /// Lattice values of `P`.
    pub fn symbol_values(&self) -> &[f64] {
        &self.symbol
    }

    pub fn apply_h(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut out = self.h0.apply_vec(f);
        out.iter_mut().zip(f).zip(self.v.values()).for_each(|((o, x), v)| *o += x * *v);
        out
    }

    /// Free resolvent `(P - z)^{-1}` as a multiplier.
    pub fn free_resolvent(&self, z: Complex64) -> Result<GridOperator> {
        let sym = self
            .symbol
            .iter()
            .map(|&l| {
                let d = Complex64::new(l, 0.0) - z;
                if d.norm() == 0.0 {
                    invalid(format!("z = {z} is a lattice eigenvalue of P"))
                } else {
                    Ok(d.inv())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        GridOperator::multiplier(self.grid(), sym)
    }

    fn require_dense(&self) -> Result<()> {
        if self.mode != Mode::Dense {
            return Err(Error::Unsupported("operation needs dense mode".into()));
        }
        Ok(())
    }

    /// Column-major real symmetric matrix of `H` acting on samples.
    pub fn dense_matrix(&self) -> Result<&[f64]> {
        self.require_dense()?;
        Ok(self.matrix.get_or_init(|| {
            let g = self.grid();
            let size = g.size();
            let col0 = self.h0.apply_vec(&GridField::delta(g, 0).values);
            let mut a = vec![0.0; size * size];
            for y in 0..size {
                let neg: Vec<i64> = g.multi_index(y).iter().map(|&v| -(v as i64)).collect();
                for x in 0..size {
                    a[y * size + x] = col0[g.shifted(x, &neg)].re;
                }
            }
            for y in 0..size {
                for x in 0..y {
                    let s = 0.5 * (a[y * size + x] + a[x * size + y]);
                    a[y * size + x] = s;
                    a[x * size + y] = s;
                }
                a[y * size + y] += self.v.values()[y];
            }
            a
        }))
    }

    pub fn eigen(&self) -> Result<&SymmetricEigen> {
        self.require_dense()?;
        let size = self.grid().size();
        let a = self.dense_matrix()?;
        self.eigen
            .get_or_init(|| SymmetricEigen::new(a, size).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))
    }

    /// `(H - z)^{-1} f` from the eigendecomposition.
    pub fn resolvent_apply(&self, z: Complex64, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let e = self.eigen()?;
        if e.values.iter().any(|&l| (Complex64::new(l, 0.0) - z).norm() == 0.0) {
            return invalid(format!("z = {z} is an eigenvalue of H"));
        }
        Ok(e.apply_fn(|l| (Complex64::new(l, 0.0) - z).inv(), f))
    }

    /// `(H - z)^{-1} f` by a dense LU solve, independent of the eigen cache.
    pub fn resolvent_solve(&self, z: Complex64, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let a = self.dense_matrix()?;
        let size = self.grid().size();
        let mut m = DenseMatrix::zeros(size, size, self.grid().cell_volume());
        for j in 0..size {
            for i in 0..size {
                let mut v = Complex64::new(a[j * size + i], 0.0);
                if i == j {
                    v -= z;
                }
                m.set(i, j, v);
            }
        }
        m.solve(f)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GateReport {
    pub z: (f64, f64),
    pub p: f64,
    /// Measured lower bound of `||V R0(z)||_{p->p}`; this is the gate.
    pub gate: f64,
    /// Rigorous upper bound: the smaller of `||V||_{n/m} ||K_z||_{n/(n-m)}`
    /// (Hölder then Young, when `1/p > m/n`) and `||V||_inf ||K_z||_1`.
    pub majorant: f64,
}

/// Measures `||V R0(z)||_{p->p}`.
pub fn gate_estimate(pop: &PerturbedOperator, z: Complex64, p: f64, opts: &LowerBoundOpts) -> Result<GateReport> {
    if !(p >= 1.0) {
        return invalid("gate exponent must be >= 1");
    }
    let g = pop.grid();
    let r0 = pop.free_resolvent(z)?;
    let majorant = if pop.v.is_zero() {
        0.0
    } else {
        let kernel = r0.kernel()?;
        let mut bound = pop.v.sup() * kernel.lp_norm(1.0);
        let (n, m) = (g.n as f64, pop.v.m as f64);
        if n > m && 1.0 / p > m / n {
            bound = bound.min(pop.v.smallness().lnm_norm * kernel.lp_norm(n / (n - m)));
        }
        bound
    };
    let gate = if pop.v.is_zero() {
        0.0
    } else {
        let v = pop.v.values();
        let mut o = opts.clone();
        o.p = p;
        o.q = p;
        o.cell_volume = g.cell_volume();
        let peak = (0..v.len()).fold(0, |a, i| if v[i] > v[a] { i } else { a });
        o.extra_starts.insert(0, GridField::delta(g, peak).values);
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            let mut y = r0.apply_vec(x);
            y.iter_mut().zip(v).for_each(|(a, b)| *a *= *b);
            y
        };
        let adjoint = |x: &[Complex64]| -> Vec<Complex64> {
            let y: Vec<Complex64> = x.iter().zip(v).map(|(a, b)| a * *b).collect();
            r0.adjoint_apply_vec(&y)
        };
        lower_bound(&apply, &adjoint, g.size(), &o)?.value
    };
    Ok(GateReport { z: (z.re, z.im), p, gate, majorant })
}

#[derive(Clone, Debug, Serialize)]
pub struct NeumannResult {
    #[serde(skip)]
    pub values: Vec<Complex64>,
    /// `||u_k||_p / ||f||_p` for the terms `u_k = (-V R0)^k f`, `k = 1..`.
    pub residuals: Vec<f64>,
    /// Number of terms summed beyond `u_0`.
    pub terms: usize,
    pub gate: GateReport,
}

/// `R_H(z) f = R0(z) sum_k (-V R0(z))^k f`, refused when the gate is `>= 1`.
pub fn neumann_inverse(
    pop: &PerturbedOperator,
    z: Complex64,
    p_gate: f64,
    k_max: usize,
    tol: f64,
    f: &[Complex64],
    opts: &LowerBoundOpts,
) -> Result<NeumannResult> {
    let g = pop.grid();
    if f.len() != g.size() {
        return invalid("right-hand side length does not match the grid");
    }
    let gate = gate_estimate(pop, z, p_gate, opts)?;
    if gate.gate >= 1.0 {
        return Err(Error::Refused(format!(
            "||V R0(z)||_{{{p_gate}->{p_gate}}} >= {:.4}, the Neumann series is not justified",
            gate.gate
        )));
    }
    let r0 = pop.free_resolvent(z)?;
    let w = g.cell_volume();
    let fnorm = lp_norm(f, p_gate, w);
    let mut sum = f.to_vec();
    let mut u = f.to_vec();
    let mut residuals = Vec::new();
    let mut terms = 0;
    if fnorm > 0.0 && !pop.v.is_zero() {
        loop {
            let mut next = r0.apply_vec(&u);
            next.iter_mut().zip(pop.v.values()).for_each(|(a, b)| *a *= -*b);
            let res = lp_norm(&next, p_gate, w) / fnorm;
            residuals.push(res);
            if res == 0.0 {
                break;
            }
            terms += 1;
            sum.iter_mut().zip(&next).for_each(|(a, b)| *a += b);
            u = next;
            if res <= tol {
                break;
            }
            if terms >= k_max {
                return Err(Error::Numerical(format!("Neumann residual {res:.3e} above {tol:.1e} after {k_max} terms")));
            }
        }
    }
    Ok(NeumannResult { values: r0.apply_vec(&sum), residuals, terms, gate })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoneDensity {
    /// `(1/pi) Im <R_H(lambda + i eps) f, f>` from a linear solve.
    pub value: f64,
    /// Poisson smoothing of the discrete spectral measure.
    pub poisson: f64,
}

/// Spectral density of `f` at `lambda`, smoothed at scale `eps`.
pub fn stone_density(pop: &PerturbedOperator, lambda: f64, eps: f64, f: &[Complex64]) -> Result<StoneDensity> {
    if !(eps > 0.0) {
        return invalid("eps must be positive: the spectrum is a finite set of atoms");
    }
    let w = pop.grid().cell_volume();
    let z = Complex64::new(lambda, eps);
    let r = pop.resolvent_solve(z, f)?;
    let value = pairing(&r, f, w).im / PI;
    let poisson = poisson_density(pop.eigen()?, f, w, lambda, eps);
    Ok(StoneDensity { value, poisson })
}

/// `sum_j (eps/pi) / ((lambda - lambda_j)^2 + eps^2) |<f, e_j>|^2`.
pub fn poisson_density(e: &SymmetricEigen, f: &[Complex64], cell_volume: f64, lambda: f64, eps: f64) -> f64 {
    let c = e.coefficients(f);
    e.values
        .iter()
        .zip(&c)
        .map(|(l, ck)| eps / PI / ((lambda - l).powi(2) + eps * eps) * ck.norm_sqr())
        .sum::<f64>()
        * cell_volume
}

#[derive(Clone, Debug, Serialize)]
pub struct RestrictionPoint {
    pub lambda: f64,
    pub norm: f64,
    pub exact: bool,
    pub occupancy: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RestrictionReport {
    pub p: f64,
    pub points: Vec<RestrictionPoint>,
    pub fit: ScalingReport,
}

/// Windowed spectral projector norms `||E_H([l, l(1+d)])/(l d)||_{p->p'}`
/// across `lambdas`, fitted against `(n/m)(1/p - 1/p') - 1`.
pub fn restriction_sweep(
    pop: &PerturbedOperator,
    p: f64,
    lambdas: &[f64],
    delta: f64,
    tolerance: f64,
    opts: &LowerBoundOpts,
) -> Result<RestrictionReport> {
    if !(1.0..=2.0).contains(&p) {
        return invalid("restriction exponent p must lie in [1, 2]");
    }
    if !(delta > 0.0) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return invalid("windows need positive lambda and width");
    }
    let g = pop.grid();
    let w = g.cell_volume();
    let q = conjugate(p);
    let dense = match pop.mode {
        Mode::Dense => Some(pop.eigen()?),
        Mode::MatrixFree if pop.v.is_zero() => None,
        Mode::MatrixFree => {
            return Err(Error::Unsupported("restriction sweep with V != 0 needs dense mode".into()));
        }
    };
    let spectrum: &[f64] = match dense {
        Some(e) => &e.values,
        None => pop.symbol_values(),
    };
    let occ: Vec<usize> = lambdas.iter().map(|&l| window_occupancy(spectrum, l, l * (1.0 + delta))).collect();
    if occ.iter().any(|&c| c < 30) {
        let list: Vec<String> = lambdas.iter().zip(&occ).map(|(l, c)| format!("{l:.4}:{c}")).collect();
        return invalid(format!("windows need >= 30 spectral values, occupancy {}", list.join(", ")));
    }
    let points = lambdas
        .par_iter()
        .zip(&occ)
        .map(|(&l, &occupancy)| {
            let (a, b) = (l, l * (1.0 + delta));
            let scale = 1.0 / (l * delta);
            let norm = match dense {
                None => {
                    let sym: Vec<Complex64> = spectrum
                        .iter()
                        .map(|&x| Complex64::new(if x >= a && x <= b { scale } else { 0.0 }, 0.0))
                        .collect();
                    let op = GridOperator::multiplier(g, sym)?;
                    if p == 1.0 {
                        op.one_to_q_norm(f64::INFINITY)?
                    } else {
                        op.norm_lower_bound(p, q, opts.clone())?.value
                    }
                }
                Some(e) => {
                    let ks: Vec<usize> = (0..e.size).filter(|&k| e.values[k] >= a && e.values[k] <= b).collect();
                    if p == 1.0 {
                        // the 1 -> inf norm is the largest kernel entry, attained on the diagonal
                        (0..e.size)
                            .map(|i| ks.iter().map(|&k| e.vector(k)[i].powi(2)).sum::<f64>())
                            .fold(0.0, f64::max)
                            * scale
                            / w
                    } else {
                        let apply = |x: &[Complex64]| -> Vec<Complex64> {
                            let mut out = vec![ZERO; x.len()];
                            for &k in &ks {
                                let v = e.vector(k);
                                let c: Complex64 = v.iter().zip(x).map(|(a, b)| b * *a).sum::<Complex64>() * scale;
                                out.iter_mut().zip(v).for_each(|(o, a)| *o += c * *a);
                            }
                            out
                        };
                        let mut o = opts.clone();
                        o.p = p;
                        o.q = q;
                        o.cell_volume = w;
                        o.extra_starts.insert(0, GridField::delta(g, 0).values);
                        lower_bound(&apply, &apply, g.size(), &o)?.value
                    }
                }
            };
            Ok(RestrictionPoint { lambda: l, norm, exact: p == 1.0, occupancy })
        })
        .collect::<Result<Vec<_>>>()?;
    let predicted = g.n as f64 / pop.p.m() as f64 * (1.0 / p - 1.0 / q) - 1.0;
    let pairs: Vec<(f64, f64)> = points.iter().map(|pt| (pt.lambda, pt.norm)).collect();
    let mut fit = fit_power_law(&pairs, predicted, tolerance)?;
    fit.seed = if p == 1.0 { None } else { Some(opts.seed) };
    Ok(RestrictionReport { p, points, fit })
}

#[derive(Clone, Debug, Serialize)]
pub struct DgSample {
    pub t: f64,
    pub distance: f64,
    pub abscissa: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DaviesGaffneyFit {
    /// Decay constant: the fitted slope is `-c`.
    pub c: f64,
    /// Intercept `log C`.
    pub log_c: f64,
    pub r2: f64,
    pub samples: Vec<DgSample>,
    /// Samples dropped below the precision floor.
    pub excluded: usize,
}

/// Norms below this are treated as rounding noise.
pub const DG_FLOOR: f64 = 1e-13;

/// Fits `log ||1_{B(x,r)} e^{-tH} 1_{B(y,r)}|| = log C - c (d/t^{1/m})^{m/(m-1)}`
/// with `r = radius_factor * t^{1/m}` and `d` the minimum-image distance.
pub fn davies_gaffney_fit(
    pop: &PerturbedOperator,
    radius_factor: f64,
    t_list: &[f64],
    pairs: &[(usize, usize)],
) -> Result<DaviesGaffneyFit> {
    let m = pop.p.m() as f64;
    if m < 2.0 {
        return invalid("Davies-Gaffney decay needs m >= 2");
    }
    if !(radius_factor > 0.0) || t_list.iter().any(|t| !(*t > 0.0)) {
        return invalid("radius factor and times must be positive");
    }
    let g = pop.grid();
    if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= g.size() || *b >= g.size()) {
        return invalid(format!("ball centre out of range: ({a}, {b})"));
    }
    for &t in t_list {
        let r = radius_factor * t.powf(1.0 / m);
        if r > g.l / 4.0 {
            return Err(Error::Refused(format!("ball radius {r:.4} exceeds L/4 = {:.4}", g.l / 4.0)));
        }
    }
    let e = pop.eigen()?;
    let jobs: Vec<(f64, usize, usize)> =
        t_list.iter().flat_map(|&t| pairs.iter().map(move |&(a, b)| (t, a, b))).collect();
    let all: Vec<DgSample> = jobs
        .par_iter()
        .map(|&(t, a, b)| {
            let r = radius_factor * t.powf(1.0 / m);
            let ball = |c: usize| -> Vec<usize> { (0..g.size()).filter(|&i| g.distance(i, c) <= r).collect() };
            let (rows, cols) = (ball(a), ball(b));
            let weights: Vec<f64> = e.values.iter().map(|l| (-t * l).exp()).collect();
            let mut block = DenseMatrix::zeros(rows.len(), cols.len(), g.cell_volume());
            for (jj, &j) in cols.iter().enumerate() {
                for (ii, &i) in rows.iter().enumerate() {
                    let s: f64 = (0..e.size).map(|k| weights[k] * e.vector(k)[i] * e.vector(k)[j]).sum();
                    block.set(ii, jj, Complex64::new(s, 0.0));
                }
            }
            let distance = g.distance(a, b);
            DgSample { t, distance, abscissa: (distance / t.powf(1.0 / m)).powf(m / (m - 1.0)), norm: block.max_singular_value() }
        })
        .collect();
    let kept: Vec<&DgSample> = all.iter().filter(|s| s.norm > DG_FLOOR).collect();
    if kept.len() < 3 {
        return Err(Error::Numerical(format!(
            "{} of {} sampled norms are at floor precision; increase t or bring the balls closer",
            all.len() - kept.len(),
            all.len()
        )));
    }
    let x: Vec<f64> = kept.iter().map(|s| s.abscissa).collect();
    let y: Vec<f64> = kept.iter().map(|s| s.norm.ln()).collect();
    let (slope, intercept, _, r2) = linear_fit(&x, &y);
    let excluded = all.len() - kept.len();
    Ok(DaviesGaffneyFit { c: -slope, log_c: intercept, r2, samples: all, excluded })
}

/// `K(p) = p^2 / (3 (3 - 2p) (p - 1))` for `1 < p < 3/2`.
pub fn hardy_constant(p: &Q) -> Result<Q> {
    if !(*p > rat(1, 1) && *p < rat(3, 2)) {
        return invalid(format!("K(p) needs 1 < p < 3/2, got {p}"));
    }
    Ok(p * p / (rat(3, 1) * (rat(3, 1) - rat(2, 1) * p) * (p - rat(1, 1))))
}

#[derive(Clone, Debug, Serialize)]
pub struct InverseSquareReport {
    pub c: f64,
    pub p: f64,
    pub k_p: f64,
    /// `c K(p)`.
    pub majorant: f64,
    pub tolerance: f64,
    pub gates: Vec<GateReport>,
    /// Largest measured gate.
    pub gate: f64,
    pub below_majorant: bool,
    pub sweep: Option<RestrictionReport>,
}

#[derive(Clone, Debug)]
pub struct InverseSquareOpts {
    pub z_list: Vec<Complex64>,
    pub tolerance: f64,
    pub lower: LowerBoundOpts,
    /// Restriction sweep `(lambdas, delta)`, run in dense mode when the gate is below 1/2.
    pub sweep: Option<(Vec<f64>, f64)>,
}

/// `V = c/|x|^2` with `P = |xi|^2` in three dimensions.
///
/// The Hardy-Rellich bound is `||V R0(z)||_{p->p} <= c K(p)`; `K(p)` is the
/// norm of `|x|^{-2} (-Delta)^{-1}` on `L^p(R^3)`.
pub fn inverse_square_scenario(grid: &TorusGrid, c: f64, p: &Q, opts: &InverseSquareOpts) -> Result<InverseSquareReport> {
    if grid.n != 3 {
        return invalid("the inverse-square scenario is three-dimensional");
    }
    let k = hardy_constant(p)?;
    let pf = rational_to_f64(p);
    let kf = rational_to_f64(&k);
    let sym = SymbolPoly::norm_power(3, 2)?;
    let v = PotentialSpec::builtin(grid, 2, &PotentialBuiltin::InverseSquare { c })?;
    let majorant = c * kf;
    let free = PerturbedOperator::new(&sym, v.clone(), Mode::MatrixFree)?;
    let gates = opts
        .z_list
        .par_iter()
        .map(|&z| gate_estimate(&free, z, pf, &opts.lower))
        .collect::<Result<Vec<_>>>()?;
    let gate = gates.iter().map(|g| g.gate).fold(0.0, f64::max);
    let below_majorant = gate <= majorant * (1.0 + opts.tolerance);
    let in_sweep_range = *p >= rat(6, 5) && *p <= rat(4, 3);
    let sweep = match &opts.sweep {
        Some((lambdas, delta)) if gate < 0.5 && in_sweep_range => {
            let dense = PerturbedOperator::new(&sym, v, Mode::Dense)?;
            Some(restriction_sweep(&dense, pf, lambdas, *delta, 0.15, &opts.lower)?)
        }
        _ => None,
    };
    Ok(InverseSquareReport { c, p: pf, k_p: kf, majorant, tolerance: opts.tolerance, gates, gate, below_majorant, sweep })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_field(size: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..size).map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect()
    }

    #[test]
    fn cell_average_matches_ball_limit() {
        // the cube average exceeds the ball average of equal volume
        let cube = cell_average_inverse_power(3, 1.0, 2.0).unwrap();
        let rho = (1.0 / unit_ball_volume(3)).powf(1.0 / 3.0);
        let ball = 3.0 / rho.powi(2);
        assert!(cube > 0.9 * ball && cube < 1.2 * ball, "{cube} {ball}");
        let half = cell_average_inverse_power(3, 0.5, 2.0).unwrap();
        assert!((half / cube - 4.0).abs() < 1e-12);
        // one dimension: mean of |x|^{-1/2} on [-1/2, 1/2] is 2 sqrt 2
        let one = cell_average_inverse_power(1, 1.0, 0.5).unwrap();
        assert!((one - 2.0 * 2f64.sqrt()).abs() < 1e-3, "{one}");
    }

    #[test]
    fn kato_of_unit_ball() {
        let g = TorusGrid::new(3, 64, 8.0).unwrap();
        let c = 0.3;
        let v = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::BallIndicator { c, r: 1.0 }).unwrap();
        let k = v.smallness().kato_like.unwrap();
        assert!((k / (2.0 * PI * c) - 1.0).abs() < 0.03, "{k}");
    }

    #[test]
    fn lnm_norm_of_four_ball() {
        let g = TorusGrid::new(4, 16, 4.0).unwrap();
        let v = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::BallIndicator { c: 1.0, r: 1.0 }).unwrap();
        let want = (PI * PI / 2.0).sqrt();
        assert!((v.smallness().lnm_norm / want - 1.0).abs() < 0.03, "{}", v.smallness().lnm_norm);
        assert_eq!(v.smallness().kato_like.is_some(), true);
        let g2 = TorusGrid::new(2, 16, 4.0).unwrap();
        let v2 = PotentialSpec::builtin(&g2, 2, &PotentialBuiltin::BallIndicator { c: 1.0, r: 1.0 }).unwrap();
        assert!(v2.smallness().kato_like.is_none());
    }

    #[test]
    fn zero_potential_passes_everything() {
        let g = TorusGrid::new(3, 16, 8.0).unwrap();
        let v = PotentialSpec::zero(&g, 2).unwrap();
        assert_eq!(v.smallness().total(), 0.0);
        assert!(v.smallness().passes(1e-12));
    }

    #[test]
    fn negative_potential_is_rejected() {
        let g = TorusGrid::new(1, 8, 8.0).unwrap();
        let mut vals = vec![0.0; 8];
        vals[3] = -1e-3;
        assert!(PotentialSpec::new(&g, 2, vals).is_err());
        let mut v = PotentialSpec::zero(&g, 2).unwrap();
        let mut bump = vec![0.0; 8];
        bump[0] = 2.0;
        v.set_values(bump).unwrap();
        assert!(v.smallness().lnm_norm > 0.0);
    }

    fn small_dense(v_amp: f64) -> PerturbedOperator {
        let g = TorusGrid::new(2, 16, 8.0).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let v = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::Gaussian { c: v_amp, sigma: 1.0 }).unwrap();
        PerturbedOperator::new(&p, v, Mode::Dense).unwrap()
    }

    #[test]
    fn dense_cap_is_enforced() {
        let g = TorusGrid::new(2, 128, 8.0).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let v = PotentialSpec::zero(&g, 2).unwrap();
        assert!(matches!(PerturbedOperator::new(&p, v, Mode::Dense), Err(Error::Refused(_))));
    }

    #[test]
    fn dense_matrix_is_symmetric_and_positive() {
        let pop = small_dense(0.5);
        let a = pop.dense_matrix().unwrap();
        let s = pop.grid().size();
        let defect = (0..s).flat_map(|i| (0..s).map(move |j| (i, j))).map(|(i, j)| (a[i * s + j] - a[j * s + i]).abs()).fold(0.0, f64::max);
        assert!(defect <= 1e-12);
        assert!(pop.eigen().unwrap().values[0] >= -1e-10);
        // dense matrix agrees with matrix-free application
        let f = random_field(s, 3);
        let hf = pop.apply_h(&f);
        let mut df = vec![ZERO; s];
        for j in 0..s {
            for i in 0..s {
                df[i] += f[j] * a[j * s + i];
            }
        }
        let err = hf.iter().zip(&df).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn resolvent_identity_in_dense_mode() {
        let pop = small_dense(0.7);
        let f = random_field(pop.grid().size(), 5);
        let (z1, z2) = (Complex64::new(1.3, 0.4), Complex64::new(-0.5, -1.1));
        let a = pop.resolvent_apply(z1, &f).unwrap();
        let b = pop.resolvent_apply(z2, &f).unwrap();
        let ab = pop.resolvent_apply(z1, &b).unwrap();
        let err = a.iter().zip(&b).zip(&ab).map(|((x, y), w)| (x - y - (z1 - z2) * w).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        let solved = pop.resolvent_solve(z1, &f).unwrap();
        let e2 = a.iter().zip(&solved).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(e2 < 1e-9, "{e2}");
    }

    #[test]
    fn larger_potential_raises_every_eigenvalue() {
        let g = TorusGrid::new(2, 8, 6.0).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let small = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::BallIndicator { c: 1.0, r: 1.0 }).unwrap();
        let big = PotentialSpec::builtin(&g, 2, &PotentialBuiltin::BallIndicator { c: 1.5, r: 2.0 }).unwrap();
        let e0 = PerturbedOperator::new(&p, PotentialSpec::zero(&g, 2).unwrap(), Mode::Dense).unwrap();
        let e1 = PerturbedOperator::new(&p, small, Mode::Dense).unwrap();
        let e2 = PerturbedOperator::new(&p, big, Mode::Dense).unwrap();
        let (v0, v1, v2) = (&e0.eigen().unwrap().values, &e1.eigen().unwrap().values, &e2.eigen().unwrap().values);
        for k in 0..v0.len() {
            assert!(v1[k] >= v0[k] - 1e-10 && v2[k] >= v1[k] - 1e-10);
        }
    }

    #[test]
    fn neumann_matches_dense_solve() {
        let pop = small_dense(0.05);
        let f = random_field(pop.grid().size(), 11);
        let z = Complex64::new(-1.0, 0.5);
        let opts = LowerBoundOpts::new(2.0, 2.0, 1.0);
        let r = neumann_inverse(&pop, z, 2.0, 200, 1e-12, &f, &opts).unwrap();
        assert!(*r.residuals.last().unwrap() < 1e-10);
        let solved = pop.resolvent_solve(z, &f).unwrap();
        let err = r.values.iter().zip(&solved).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        // geometric decay at the rate of the rigorous majorant
        for (k, res) in r.residuals.iter().enumerate() {
            assert!(*res <= r.gate.majorant.powi(k as i32 + 1) * 1.01 + 1e-14);
        }
    }

    #[test]
    fn neumann_with_zero_potential_is_free_resolvent() {
        let g = TorusGrid::new(2, 16, 8.0).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let pop = PerturbedOperator::new(&p, PotentialSpec::zero(&g, 2).unwrap(), Mode::MatrixFree).unwrap();
        let f = random_field(g.size(), 2);
        let z = Complex64::new(0.3, 0.2);
        let r = neumann_inverse(&pop, z, 2.0, 10, 1e-12, &f, &LowerBoundOpts::new(2.0, 2.0, 1.0)).unwrap();
        assert_eq!(r.terms, 0);
        assert_eq!(r.gate.gate, 0.0);
        assert_eq!(r.values, pop.free_resolvent(z).unwrap().apply_vec(&f));
    }

    #[test]
    fn neumann_refuses_large_gate() {
        let pop = small_dense(50.0);
        let f = random_field(pop.grid().size(), 1);
        let r = neumann_inverse(&pop, Complex64::new(-0.1, 0.1), 2.0, 50, 1e-10, &f, &LowerBoundOpts::new(2.0, 2.0, 1.0));
        assert!(matches!(r, Err(Error::Refused(_))));
    }

    #[test]
    fn gate_is_linear_in_amplitude() {
        let z = Complex64::new(-1.0, 0.3);
        let opts = LowerBoundOpts::new(2.0, 2.0, 1.0);
        let a = gate_estimate(&small_dense(0.1), z, 2.0, &opts).unwrap();
        let b = gate_estimate(&small_dense(0.2), z, 2.0, &opts).unwrap();
        assert!((b.majorant / a.majorant - 2.0).abs() < 1e-10);
        assert!((b.gate / a.gate - 2.0).abs() < 1e-6);
        assert!(a.gate <= a.majorant * (1.0 + 1e-9));
    }

    #[test]
    fn stone_equals_poisson_and_has_unit_mass() {
        let pop = small_dense(0.8);
        let f = random_field(pop.grid().size(), 8);
        for &(l, eps) in &[(0.5, 0.1), (2.0, 0.02), (7.0, 1.0)] {
            let s = stone_density(&pop, l, eps, &f).unwrap();
            assert!((s.value - s.poisson).abs() < 1e-10 * (1.0 + s.poisson.abs()), "{s:?}");
        }
        assert!(stone_density(&pop, 1.0, 0.0, &f).is_err());

        let w = pop.grid().cell_volume();
        let e = pop.eigen().unwrap();
        let norm2 = lp_norm(&f, 2.0, w).powi(2);
        let (centre, scale) = (0.5 * e.values[e.size - 1], 0.5 * e.values[e.size - 1]);
        let n = 400_000;
        let mut total = 0.0;
        for k in 0..n {
            let th = -PI / 2.0 + (k as f64 + 0.5) * PI / n as f64;
            let lam = centre + scale * th.tan();
            total += poisson_density(e, &f, w, lam, 0.3) * scale / th.cos().powi(2);
        }
        total *= PI / n as f64;
        assert!((total / norm2 - 1.0).abs() < 1e-6, "{total} {norm2}");
    }

    #[test]
    fn single_mode_gives_a_lorentzian() {
        let g = TorusGrid::new(2, 8, 2.0 * PI).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let pop = PerturbedOperator::new(&p, PotentialSpec::zero(&g, 2).unwrap(), Mode::Dense).unwrap();
        let f: Vec<Complex64> = (0..g.size()).map(|i| Complex64::from_polar(1.0, 2.0 * g.position(i)[0])).collect();
        let norm2 = lp_norm(&f, 2.0, g.cell_volume()).powi(2);
        let eps = 0.25;
        for &l in &[3.0, 4.0, 5.5] {
            let s = stone_density(&pop, l, eps, &f).unwrap();
            let lorentz = norm2 * eps / PI / ((l - 4.0f64).powi(2) + eps * eps);
            assert!((s.value - lorentz).abs() < 1e-9 * lorentz, "{} {lorentz}", s.value);
        }
    }

    #[test]
    fn free_restriction_slopes() {
        let g = TorusGrid::new(2, 256, 256.0).unwrap();
        let lambdas: Vec<f64> = (0..8).map(|i| 0.05 * 10f64.powf(i as f64 / 7.0)).collect();
        let opts = LowerBoundOpts::new(1.0, 1.0, 1.0);
        let p2 = SymbolPoly::norm_power(2, 2).unwrap();
        let pop = PerturbedOperator::new(&p2, PotentialSpec::zero(&g, 2).unwrap(), Mode::MatrixFree).unwrap();
        // flat prediction: r2 carries no information, only the slope is checked
        let r = restriction_sweep(&pop, 1.0, &lambdas, 0.2, 0.1, &opts).unwrap();
        assert!(r.fit.slope.abs() < 0.1, "{:?}", r.fit);
        let lambdas4: Vec<f64> = lambdas.iter().map(|l| l * l).collect();
        let p4 = SymbolPoly::norm_power(2, 4).unwrap();
        let pop4 = PerturbedOperator::new(&p4, PotentialSpec::zero(&g, 4).unwrap(), Mode::MatrixFree).unwrap();
        let r4 = restriction_sweep(&pop4, 1.0, &lambdas4, 0.4, 0.15, &opts).unwrap();
        assert!(r4.fit.verdict, "{:?}", r4.fit);
    }

    #[test]
    fn sparse_windows_are_reported() {
        let g = TorusGrid::new(2, 16, 8.0).unwrap();
        let p = SymbolPoly::norm_power(2, 2).unwrap();
        let pop = PerturbedOperator::new(&p, PotentialSpec::zero(&g, 2).unwrap(), Mode::MatrixFree).unwrap();
        let err = restriction_sweep(&pop, 1.0, &[0.1, 1.0], 0.1, 0.1, &LowerBoundOpts::new(1.0, 1.0, 1.0)).unwrap_err();
        assert!(err.to_string().contains("occupancy"));
    }

    fn dg_pop(m: u32, amp: f64) -> PerturbedOperator {
        let g = TorusGrid::new(1, 512, 64.0).unwrap();
        let p = SymbolPoly::norm_power(1, m).unwrap();
        let v = PotentialSpec::builtin(&g, m, &PotentialBuiltin::Gaussian { c: amp, sigma: 2.0 }).unwrap();
        PerturbedOperator::new(&p, v, Mode::Dense).unwrap()
    }

    fn dg_pairs(g: &TorusGrid, cells: &[usize]) -> Vec<(usize, usize)> {
        cells.iter().map(|&k| ((g.size() - k / 2) % g.size(), k - k / 2)).collect()
    }

    #[test]
    fn heat_kernel_decay_constant() {
        let pop = dg_pop(2, 0.0);
        let pairs = dg_pairs(pop.grid(), &[0, 16, 32, 48, 64, 80, 96, 112]);
        let fit = davies_gaffney_fit(&pop, 1.0, &[0.5, 1.0, 2.0], &pairs).unwrap();
        assert!(fit.c > 0.125 && fit.c < 0.5, "{fit:?}");
        for s in fit.samples.iter().filter(|s| s.distance == 0.0) {
            assert!(s.norm <= 1.0 + 1e-12);
        }
        let with_v = davies_gaffney_fit(&dg_pop(2, 0.1), 1.0, &[0.5, 1.0, 2.0], &pairs).unwrap();
        assert!(with_v.c > 0.125 && with_v.c < 0.5);
    }

    #[test]
    fn fourth_order_fit_quality() {
        let pop = dg_pop(4, 0.0);
        let pairs = dg_pairs(pop.grid(), &[0, 8, 16, 24, 32, 40, 48, 56, 64]);
        let fit = davies_gaffney_fit(&pop, 1.0, &[1.0, 4.0, 16.0], &pairs).unwrap();
        assert!(fit.r2 > 0.9, "{fit:?}");
        assert!(fit.c > 0.0);
    }

    #[test]
    fn dg_refuses_wide_balls_and_floor() {
        let pop = dg_pop(2, 0.0);
        assert!(matches!(davies_gaffney_fit(&pop, 1.0, &[300.0], &[(0, 0)]), Err(Error::Refused(_))));
        let far = dg_pairs(pop.grid(), &[200, 220, 240]);
        let r = davies_gaffney_fit(&pop, 1.0, &[0.5], &far);
        assert!(matches!(r, Err(Error::Numerical(_))), "{r:?}");
    }

    #[test]
    fn hardy_constant_values() {
        assert_eq!(hardy_constant(&rat(6, 5)).unwrap(), rat(4, 1));
        let near = rational_to_f64(&hardy_constant(&rat(1499, 1000)).unwrap());
        assert!(near > 100.0);
        assert!(hardy_constant(&rat(3, 2)).is_err());
        assert!(hardy_constant(&rat(1, 1)).is_err());
    }

    #[test]
    fn inverse_square_gates() {
        let g = TorusGrid::new(3, 16, 8.0).unwrap();
        let opts = InverseSquareOpts {
            z_list: vec![Complex64::new(-0.5, 0.0), Complex64::new(0.0, 0.5)],
            tolerance: 0.1,
            lower: LowerBoundOpts { iters: 15, restarts: 2, ..LowerBoundOpts::new(1.2, 1.2, 1.0) },
            sweep: None,
        };
        let zero = inverse_square_scenario(&g, 0.0, &rat(6, 5), &opts).unwrap();
        assert_eq!(zero.gate, 0.0);
        let r = inverse_square_scenario(&g, 0.05, &rat(6, 5), &opts).unwrap();
        assert!(r.below_majorant, "{r:?}");
        assert!(inverse_square_scenario(&g, 0.05, &rat(3, 2), &opts).is_err());
    }
}
