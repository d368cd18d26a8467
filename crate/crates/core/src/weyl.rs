//! One-dimensional calculus of the homogeneous distributions `chi_+-^a`.
//!
//! `chi_-^a(x) = (-x)_+^a / Gamma(a + 1)` for `a > -1`, and the negative
//! integers are fixed by the convolution law `chi_-^w * chi_-^z = chi_-^{w+z+1}`:
//! `chi_-^{-k} = (-1)^{k-1} delta^{(k-1)}`. Convolving with `chi_-^{mu-1}` is the
//! Weyl integral `W^mu F(x) = Gamma(mu)^{-1} int_x^inf F(y) (y - x)^{mu-1} dy`,
//! and the Weyl derivative is `F^(nu) = (-d/dx)^k W^{k-nu} F` with `k = ceil(nu)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num::complex::Complex64;
use rustfft::FftPlanner;
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::grid::smooth_cutoff;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Samples `values[j]` at `x_j = a + j h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFn {
    pub a: f64,
    pub h: f64,
    pub values: Vec<Complex64>,
}

impl SampledFn {
    pub fn new(a: f64, h: f64, values: Vec<Complex64>) -> Result<Self> {
        if !(h > 0.0) || values.len() < 2 {
            return invalid("sampled function needs h > 0 and at least two samples");
        }
        Ok(Self { a, h, values })
    }

    /// Samples `f` on `[a, b]` with step close to `h` (the step is adjusted to hit `b`).
    pub fn from_fn(a: f64, b: f64, h: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        if !(b > a) {
            return invalid("empty sampling interval");
        }
        let n = ((b - a) / h).round().max(1.0) as usize;
        let h = (b - a) / n as f64;
        Self::new(a, h, (0..=n).map(|j| f(a + j as f64 * h)).collect())
    }

    pub fn from_real(a: f64, b: f64, h: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(a, b, h, |x| Complex64::new(f(x), 0.0))
    }

    pub fn b(&self) -> f64 {
        self.a + (self.values.len() - 1) as f64 * self.h
    }

    pub fn x(&self, j: usize) -> f64 {
        self.a + j as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Piecewise-linear interpolation, zero outside the window.
    pub fn eval(&self, x: f64) -> Complex64 {
        let t = (x - self.a) / self.h;
        if t < 0.0 || t > (self.len() - 1) as f64 {
            return ZERO;
        }
        let j = (t.floor() as usize).min(self.len() - 2);
        let s = t - j as f64;
        self.values[j] * (1.0 - s) + self.values[j + 1] * s
    }

    /// Trapezoid `L^1` norm.
    pub fn l1_norm(&self) -> f64 {
        trapezoid(self.values.iter().map(|z| z.norm()), self.h)
    }

    pub fn integral(&self) -> Complex64 {
        let n = self.len();
        let s: Complex64 = self.values.iter().sum();
        (s - (self.values[0] + self.values[n - 1]) * 0.5) * self.h
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn sup_diff(&self, other: &SampledFn) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Every `k`-th sample.
    pub fn subsample(&self, k: usize) -> Self {
        Self { a: self.a, h: self.h * k as f64, values: self.values.iter().step_by(k).copied().collect() }
    }

    /// `delta_R F(x) = F(R x)`, resampled on the scaled window.
    pub fn dilate(&self, r: f64) -> Self {
        Self { a: self.a / r, h: self.h / r, values: self.values.clone() }
    }

    pub fn to_csv(&self, meta: &str) -> String {
        let mut s = format!("# {meta} a={} h={} samples={}\nx,re,im\n", self.a, self.h, self.len());
        for (j, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.x(j), v.re, v.im);
        }
        s
    }

    fn scale(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }
}

fn trapezoid(v: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for (j, x) in v.enumerate() {
        s += if j == 0 || j == n - 1 { 0.5 * x } else { x };
    }
    s * h
}

/// Smooth bump `exp(-1/((x-a)(b-x)))` supported in `[a, b]`, scaled by `scale`.
pub fn bump(x: f64, a: f64, b: f64) -> f64 {
    if x <= a || x >= b {
        0.0
    } else {
        let t = (x - a) * (b - x) / ((b - a) * (b - a));
        (-0.25 / t).exp() * 1.0f64.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Representation {
    /// `a > -1`: a locally integrable function.
    Regular,
    /// `a = -k`: `coefficient * delta^{(order)}` with `order = k - 1`.
    DeltaDerivative { order: u32, coefficient: f64 },
    /// Other `a <= -1`: defined only as a limit of regularised families.
    EpsLimit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistPower {
    pub sign: Sign,
    pub alpha: f64,
    pub repr: Representation,
}

impl DistPower {
    pub fn new(sign: Sign, alpha: f64) -> Self {
        let repr = if alpha > -1.0 {
            Representation::Regular
        } else if alpha == alpha.round() {
            let k = (-alpha) as u32;
            let coefficient = match sign {
                Sign::Plus => 1.0,
                Sign::Minus => if (k - 1) % 2 == 0 { 1.0 } else { -1.0 },
            };
            Representation::DeltaDerivative { order: k - 1, coefficient }
        } else {
            Representation::EpsLimit
        };
        Self { sign, alpha, repr }
    }

    pub fn minus(alpha: f64) -> Self {
        Self::new(Sign::Minus, alpha)
    }

    pub fn plus(alpha: f64) -> Self {
        Self::new(Sign::Plus, alpha)
    }

    /// Pointwise value of a regular member.
    pub fn value(&self, x: f64) -> Result<f64> {
        if self.repr != Representation::Regular {
            return Err(Error::Unsupported(format!("chi^{} has no pointwise values", self.alpha)));
        }
        let t = match self.sign {
            Sign::Plus => x,
            Sign::Minus => -x,
        };
        if t < 0.0 || (t == 0.0 && self.alpha < 0.0) {
            return Ok(if t == 0.0 && self.alpha < 0.0 { f64::INFINITY } else { 0.0 });
        }
        if t == 0.0 {
            return Ok(if self.alpha == 0.0 { 1.0 } else { 0.0 });
        }
        Ok(t.powf(self.alpha) / gamma(self.alpha + 1.0))
    }
}

/// Product-integration weights for `int_0^{jmax h} u^{mu-1} G(u) du` with
/// piecewise-linear `G`: returns `w_d` such that the integral is
/// `h^mu sum_d w_d G(d h)`.
fn hat_weights(mu: f64, count: usize) -> Vec<f64> {
    let c = 1.0 / (mu * (mu + 1.0));
    let f = |u: f64| u.powf(mu + 1.0);
    let g = |u: f64| u.powf(mu - 1.0);
    (0..count)
        .map(|d| {
            if d == 0 {
                c
            } else if d < 50 {
                let d = d as f64;
                (f(d + 1.0) - 2.0 * f(d) + f(d - 1.0)) * c
            } else {
                let u = d as f64;
                let g2 = (mu - 1.0) * (mu - 2.0) * u.powf(mu - 3.0);
                let g4 = (mu - 1.0) * (mu - 2.0) * (mu - 3.0) * (mu - 4.0) * u.powf(mu - 5.0);
                g(u) + g2 / 12.0 + g4 / 360.0
            }
        })
        .collect()
}

/// `out_i = sum_{d >= 0} w_d g_{i+d}` by FFT.
fn correlate(w: &[f64], g: &[Complex64]) -> Vec<Complex64> {
    let n = g.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    // out_i = sum_d w_d g_{i+d}: convolve reversed g with w.
    let mut a = vec![ZERO; size];
    let mut b = vec![ZERO; size];
    for (i, v) in g.iter().enumerate() {
        a[n - 1 - i] = *v;
    }
    for (d, v) in w.iter().enumerate().take(n) {
        b[d] = Complex64::new(*v, 0.0);
    }
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let s = 1.0 / size as f64;
    (0..n).map(|i| a[n - 1 - i] * s).collect()
}

/// `-F'` by central differences (second-order one-sided at the ends).
fn minus_derivative(f: &SampledFn) -> SampledFn {
    let v = &f.values;
    let n = v.len();
    let h = f.h;
    let mut out = vec![ZERO; n];
    for i in 0..n {
        let d = if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        };
        out[i] = -d;
    }
    SampledFn { values: out, ..f.clone() }
}

fn check_window(f: &SampledFn) -> Result<()> {
    if f.len() < 4 {
        return invalid("need at least four samples");
    }
    let sup = f.sup_norm();
    let tol = 1e-12 * sup.max(1e-300);
    let n = f.len();
    if f.values[..2].iter().chain(&f.values[n - 2..]).any(|v| v.norm() > tol) {
        return invalid("support touches the sampling window edge");
    }
    Ok(())
}

/// Weyl integral `F * chi_-^{mu-1}` on the sampling window, `mu > 0`.
/// Exact for piecewise-linear data; `F` is taken to vanish right of the window.
pub fn weyl_integral(f: &SampledFn, mu: f64) -> Result<SampledFn> {
    if !(mu > 0.0) {
        return invalid(format!("Weyl integral order mu = {mu} must be positive"));
    }
    let w = hat_weights(mu, f.len());
    let scale = f.h.powf(mu) / gamma(mu);
    let values = correlate(&w, &f.values).into_iter().map(|v| v * scale).collect();
    Ok(SampledFn { values, ..f.clone() })
}

/// Weyl fractional derivative `F^(nu) = F * chi_-^{-nu-1}`.
pub fn weyl_derivative(f: &SampledFn, nu: f64) -> Result<SampledFn> {
    if nu < 0.0 {
        return invalid(format!("nu = {nu} must be nonnegative"));
    }
    check_window(f)?;
    if nu == 0.0 {
        return Ok(f.clone());
    }
    let k = nu.ceil() as u32;
    let mu = k as f64 - nu;
    let mut g = if mu > 1e-14 { weyl_integral(f, mu)? } else { f.clone() };
    for _ in 0..k {
        g = minus_derivative(&g);
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WSNorm {
    pub nu: f64,
    pub value_l1: f64,
    pub value_deriv_l1: f64,
    pub total: f64,
    /// Estimate of `int |F^(nu)|` left of the window, from the far-field
    /// asymptotics `F^(nu)(x) ~ (int F) (c - x)^{-nu-1} / Gamma(-nu)`.
    pub truncation_estimate: f64,
}

/// `||F||_1 + ||F^(nu)||_1` on the sampling window.
pub fn ws_norm(f: &SampledFn, nu: f64) -> Result<WSNorm> {
    let d = weyl_derivative(f, nu)?;
    let value_l1 = f.l1_norm();
    let value_deriv_l1 = d.l1_norm();
    let truncation_estimate = if nu == nu.round() {
        0.0
    } else {
        let mass = f.integral();
        let weights: f64 = f.values.iter().map(|v| v.norm()).sum();
        let center = f.values.iter().enumerate().map(|(j, v)| v.norm() * f.x(j)).sum::<f64>() / weights;
        let dist = (center - f.a).max(f.h);
        mass.norm() / gamma(-nu).abs() * dist.powf(-nu) / nu
    };
    Ok(WSNorm { nu, value_l1, value_deriv_l1, total: value_l1 + value_deriv_l1, truncation_estimate })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvolveResult {
    pub result: DistPower,
    /// Quadrature samples of the convolution on `[-window, 0]` when computed.
    pub samples: Option<SampledFn>,
    /// Sup error of the samples against the closed form.
    pub max_err: Option<f64>,
}

/// `int_0^T u^e G(u) du` for `G` linear between nodes `u_j = j h`, `j = j0..=j1`;
/// `G` is evaluated through `g(j)`.
fn product_moments(e: f64, h: f64, j0: usize, j1: usize, g: impl Fn(usize) -> f64) -> f64 {
    let m = |k: f64, a: f64, b: f64| (b.powf(k + 1.0) - a.powf(k + 1.0)) / (k + 1.0);
    let mut s = 0.0;
    for j in j0..j1 {
        let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
        let m0 = m(e, a, b);
        let m1 = m(e + 1.0, a, b);
        s += g(j) * (b * m0 - m1) / h + g(j + 1) * (m1 - a * m0) / h;
    }
    s
}

/// `(chi_-^w * chi_-^z)(-t) = int_0^t (t-u)^w u^z du / (Gamma(w+1) Gamma(z+1))`,
/// split at the midpoint so each half carries one algebraic endpoint weight.
fn regular_convolution_at(w: f64, z: f64, m: usize, h: f64) -> f64 {
    if m == 0 {
        return if w + z + 1.0 == 0.0 { 1.0 } else { 0.0 };
    }
    let t = m as f64 * h;
    // at least 32 panels so short intervals keep the same relative accuracy
    let k = 2 * m.max(16);
    let h = t / k as f64;
    let half = k / 2;
    let left = product_moments(z, h, 0, half, |j| (t - j as f64 * h).max(0.0).powf(w));
    let right = product_moments(w, h, 0, half, |j| (t - j as f64 * h).powf(z));
    (left + right) / (gamma(w + 1.0) * gamma(z + 1.0))
}

/// `chi_-^w * chi_-^z`, checked by quadrature on `[-window, 0]` with step `h`
/// whenever both factors are regular.
pub fn chi_convolve(w: &DistPower, z: &DistPower, window: f64, h: f64) -> Result<ConvolveResult> {
    if w.sign != Sign::Minus || z.sign != Sign::Minus {
        return Err(Error::Unsupported("convolution is implemented for the minus family".into()));
    }
    let result = DistPower::minus(w.alpha + z.alpha + 1.0);
    match (w.repr, z.repr) {
        (Representation::Regular, Representation::Regular) => {
            let m = (window / h).round() as usize;
            let mut vals = Vec::with_capacity(m + 1);
            let mut err = 0.0f64;
            for i in 0..=m {
                // sample x = -window + i h, i.e. t = (m - i) h
                let tm = m - i;
                let v = regular_convolution_at(w.alpha, z.alpha, tm, h);
                let x = -(tm as f64) * h;
                if tm > 0 {
                    err = err.max((v - result.value(x)?).abs());
                }
                vals.push(Complex64::new(v, 0.0));
            }
            Ok(ConvolveResult {
                result,
                samples: Some(SampledFn::new(-window, h, vals)?),
                max_err: Some(err),
            })
        }
        (Representation::DeltaDerivative { order, coefficient }, Representation::Regular)
        | (Representation::Regular, Representation::DeltaDerivative { order, coefficient }) => {
            let reg = if w.repr == Representation::Regular { w } else { z };
            // coefficient * delta^{(k)} * chi_-^a = coefficient * (-1)^k chi_-^{a-k}
            let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
            if (coefficient * sign - 1.0).abs() > 0.0 {
                return Err(Error::Numerical("delta coefficient inconsistent with the convolution law".into()));
            }
            let err = if result.repr == Representation::Regular {
                // differentiate samples of the regular factor and compare
                let m = (window / h).round() as usize;
                let base = SampledFn::from_real(-window, 0.0, h, |x| reg.value(x).unwrap_or(0.0))?;
                let mut d = base.clone();
                for _ in 0..order {
                    d = minus_derivative(&d);
                }
                let d = d.scale(coefficient * sign);
                let interior = (m / 10).max(2 * order as usize + 1);
                let mut e = 0.0f64;
                for i in interior..m.saturating_sub(interior) {
                    e = e.max((d.values[i].re - result.value(d.x(i))?).abs());
                }
                Some(e)
            } else {
                None
            };
            Ok(ConvolveResult { result, samples: None, max_err: err })
        }
        (Representation::DeltaDerivative { .. }, Representation::DeltaDerivative { .. }) => {
            Ok(ConvolveResult { result, samples: None, max_err: None })
        }
        (Representation::EpsLimit, Representation::EpsLimit) => Err(Error::Unsupported(
            "EpsLimit * EpsLimit without a regular factor is not computed".into(),
        )),
        _ => Ok(ConvolveResult { result, samples: None, max_err: None }),
    }
}

/// `(1/Gamma(mu)) int_lambda^inf G(s) (s - lambda)^{mu-1} ds` for piecewise-linear `G`.
pub fn weyl_integral_at(g: &SampledFn, mu: f64, lambda: f64) -> f64 {
    let n = g.len();
    let pw = |k: f64, a: f64, b: f64| (b.powf(k + 1.0) - a.powf(k + 1.0)) / (k + 1.0);
    let mut s = 0.0;
    for j in 0..n - 1 {
        let (x0, x1) = (g.x(j), g.x(j + 1));
        if x1 <= lambda {
            continue;
        }
        let (g0, g1) = (g.values[j].re, g.values[j + 1].re);
        let lo = x0.max(lambda);
        let glo = g0 + (g1 - g0) * (lo - x0) / g.h;
        // G(s) = glo + slope (s - lo) on [lo, x1]; v = s - lambda
        let slope = (g1 - g0) / g.h;
        let (va, vb) = (lo - lambda, x1 - lambda);
        let m0 = pw(mu - 1.0, va, vb);
        let m1 = pw(mu, va, vb);
        s += (glo - slope * (lo - lambda)) * m0 + slope * m1;
    }
    s / gamma(mu)
}

/// `max_lambda |W^nu F^(nu)(lambda) - F(lambda)| / |F(lambda)|` over the
/// eigenvalue list, with a Richardson ratio test on `h, 2h, 4h`.
pub fn subordination_check(f: &SampledFn, nu: f64, eigenvalues: &[f64]) -> Result<f64> {
    if nu < 0.5 {
        return invalid(format!("nu = {nu} below 1/2"));
    }
    if f.a < 0.0 && f.values.iter().enumerate().any(|(j, v)| f.x(j) <= 0.0 && v.norm() > 0.0) {
        return invalid("F must be supported in (0, inf)");
    }
    if eigenvalues.iter().any(|&l| l < 0.0) {
        return invalid("eigenvalues must be nonnegative");
    }
    let at = |g: &SampledFn, l: f64| -> Result<f64> {
        let d = weyl_derivative(g, nu)?;
        Ok(weyl_integral_at(&d, nu, l))
    };
    let mut worst = 0.0f64;
    for &l in eigenvalues {
        let want = f.eval(l).re;
        let r1 = at(f, l)?;
        let scale = f.sup_norm();
        if want.abs() < 1e-12 * scale {
            if r1.abs() > 1e-6 * scale {
                worst = worst.max(r1.abs() / scale);
            }
            continue;
        }
        let r2 = at(&f.subsample(2), l)?;
        let r4 = at(&f.subsample(4), l)?;
        let (d1, d2) = ((r2 - r1).abs(), (r4 - r2).abs());
        if d1 > 1e-9 * want.abs() && d2 / d1 < 1.5 {
            return Err(Error::Numerical(format!(
                "quadrature not converging at lambda = {l}: successive differences {d2:e}, {d1:e}"
            )));
        }
        worst = worst.max((r1 - want).abs() / want.abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DyadicDecomposition {
    pub pieces: Vec<SampledFn>,
    /// `L^1` norm of `G - sum of pieces`.
    pub tail_l1: f64,
    pub warning: Option<String>,
}

/// Frequencies `tau_k` of the periodic window in storage order.
fn window_frequencies(len: usize, h: f64) -> Vec<f64> {
    let period = len as f64 * h;
    (0..len)
        .map(|k| {
            let s = if k < len / 2 { k as i64 } else { k as i64 - len as i64 };
            2.0 * PI * s as f64 / period
        })
        .collect()
}

/// Applies the Fourier multiplier `m(tau)` on the periodised window; the
/// Fourier transform convention is `F_hat(tau) = int F e^{-i tau x} dx`.
pub fn apply_fourier_multiplier(g: &SampledFn, m: impl Fn(f64) -> Complex64) -> SampledFn {
    let n = g.len();
    let mut planner = FftPlanner::new();
    let mut d = g.values.clone();
    planner.plan_fft_forward(n).process(&mut d);
    for (v, tau) in d.iter_mut().zip(window_frequencies(n, g.h)) {
        *v *= m(tau);
    }
    planner.plan_fft_inverse(n).process(&mut d);
    let s = 1.0 / n as f64;
    SampledFn { values: d.into_iter().map(|v| v * s).collect(), ..g.clone() }
}

/// Spectral Weyl derivative, symbol `(-i tau)^nu` (principal branch).
pub fn spectral_weyl_derivative(g: &SampledFn, nu: f64) -> SampledFn {
    apply_fourier_multiplier(g, |tau| {
        if tau == 0.0 {
            if nu == 0.0 { Complex64::new(1.0, 0.0) } else { ZERO }
        } else {
            Complex64::new(0.0, -tau).powf(nu)
        }
    })
}

/// Littlewood-Paley pieces `G^(l)`, `l = 0..=ell_max`, with
/// `phi_0 = psi`, `phi_l(tau) = psi(2^{-l}|tau|) - psi(2^{1-l}|tau|)`.
pub fn dyadic_decompose(g: &SampledFn, ell_max: u32, tail_tol: f64) -> Result<DyadicDecomposition> {
    if !g.len().is_power_of_two() {
        return invalid("dyadic decomposition needs a power-of-two sample count");
    }
    let pieces: Vec<SampledFn> = (0..=ell_max)
        .map(|l| apply_fourier_multiplier(g, |tau| Complex64::new(crate::grid::dyadic_piece(l, tau.abs()), 0.0)))
        .collect();
    let mut sum = vec![ZERO; g.len()];
    for p in &pieces {
        for (s, v) in sum.iter_mut().zip(&p.values) {
            *s += v;
        }
    }
    let rest = SampledFn { values: g.values.iter().zip(&sum).map(|(a, b)| a - b).collect(), ..g.clone() };
    let tail_l1 = rest.l1_norm();
    let warning = (tail_l1 > tail_tol).then(|| format!("ell_max = {ell_max} leaves an L1 tail of {tail_l1:e}"));
    Ok(DyadicDecomposition { pieces, tail_l1, warning })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpConvention {
    /// `e^{i pi a}(x - i0)^{-a} - e^{-i pi a}(x + i0)^{-a}`.
    Standard,
    /// `e^{i pi a}(x + i0)^{-a} - e^{-i pi a}(x - i0)^{-a}`.
    Swapped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpResolution {
    pub convention: JumpConvention,
    pub max_error: f64,
    /// Extrapolated error of each candidate, in the order standard, swapped.
    pub candidate_errors: [f64; 2],
    /// Both placements agree within tolerance (e.g. `alpha = 1/2`, where `sin(2 pi alpha) = 0`).
    pub ambiguous: bool,
}

pub fn jump_combination(conv: JumpConvention, alpha: f64, x: f64, eps: f64) -> Complex64 {
    let up = Complex64::new(x, eps).powf(-alpha);
    let down = Complex64::new(x, -eps).powf(-alpha);
    let (ep, em) = (Complex64::from_polar(1.0, PI * alpha), Complex64::from_polar(1.0, -PI * alpha));
    match conv {
        JumpConvention::Standard => ep * down - em * up,
        JumpConvention::Swapped => ep * up - em * down,
    }
}

/// Target `2 pi i chi_+^{-a}(x) / Gamma(a) = 2i sin(pi a) x_+^{-a}`.
pub fn jump_target(alpha: f64, x: f64) -> Complex64 {
    if x <= 0.0 {
        ZERO
    } else {
        Complex64::new(0.0, 2.0 * (PI * alpha).sin() * x.powf(-alpha))
    }
}

pub const JUMP_EPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Richardson-extrapolated boundary combination at `x`.
pub fn jump_extrapolated(conv: JumpConvention, alpha: f64, x: f64) -> Complex64 {
    let f: Vec<Complex64> = JUMP_EPS.iter().map(|&e| jump_combination(conv, alpha, x, e)).collect();
    // error is O(eps); two-point Richardson on the two smallest values
    (f[2] * 10.0 - f[1]) / 9.0
}

/// Decides which placement of `+-i0` reproduces `2 pi i chi_+^{-a}/Gamma(a)`.
pub fn jump_identity_resolve(alpha: f64, test_points: &[f64], tol: f64) -> Result<JumpResolution> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha = {alpha} outside (0,1)"));
    }
    let err = |conv| {
        test_points
            .iter()
            .map(|&x| (jump_extrapolated(conv, alpha, x) - jump_target(alpha, x)).norm())
            .fold(0.0, f64::max)
    };
    let e = [err(JumpConvention::Standard), err(JumpConvention::Swapped)];
    let ambiguous = e[0] <= tol && e[1] <= tol;
    let (convention, best) = if e[0] < e[1] && !ambiguous {
        (JumpConvention::Standard, e[0])
    } else {
        (JumpConvention::Swapped, e[1])
    };
    if best > tol {
        return Err(Error::Numerical(format!(
            "neither placement converges: standard {:e}, swapped {:e}",
            e[0], e[1]
        )));
    }
    Ok(JumpResolution { convention, max_error: best, candidate_errors: e, ambiguous })
}

/// `int g(x) C_eps(x) dx` for the resolved combination; tends to `2 pi i g(0)` at `alpha = 1`.
pub fn jump_pairing(conv: JumpConvention, alpha: f64, eps: f64, g: impl Fn(f64) -> f64, half_width: f64) -> Complex64 {
    // Gauss-Legendre on geometric panels refined towards the origin
    const X: [f64; 4] = [0.1834346424956498, 0.5255324099163290, 0.7966664774136267, 0.9602898564975363];
    const W: [f64; 4] = [0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763];
    let mut edges = vec![0.0];
    let mut e = eps / 64.0;
    while e < half_width {
        edges.push(e);
        e *= 1.25;
    }
    edges.push(half_width);
    let mut s = ZERO;
    for side in [-1.0, 1.0] {
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
            for (xi, wi) in X.iter().zip(&W) {
                for t in [c - r * xi, c + r * xi] {
                    let x = side * t;
                    s += jump_combination(conv, alpha, x, eps) * g(x) * (wi * r);
                }
            }
        }
    }
    s
}

/// Smooth cutoff helper re-exported for dyadic tests.
pub fn psi0(lambda: f64) -> f64 {
    smooth_cutoff(lambda, 0.5, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump_fn(h: f64) -> SampledFn {
        SampledFn::from_real(-1.0, 2.0, h, |x| bump(x, 0.5, 1.0)).unwrap()
    }

    #[test]
    fn dist_power_representations() {
        assert_eq!(DistPower::minus(-1.0).repr, Representation::DeltaDerivative { order: 0, coefficient: 1.0 });
        assert_eq!(DistPower::minus(-2.0).repr, Representation::DeltaDerivative { order: 1, coefficient: -1.0 });
        assert_eq!(DistPower::minus(-1.5).repr, Representation::EpsLimit);
        assert!((DistPower::plus(0.5).value(4.0).unwrap() - 2.0 / gamma(1.5)).abs() < 1e-14);
        assert!((DistPower::minus(0.0).value(-3.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(DistPower::minus(0.0).value(3.0).unwrap(), 0.0);
    }

    #[test]
    fn convolution_examples() {
        let r = chi_convolve(&DistPower::minus(0.0), &DistPower::minus(0.0), 1.0, 1e-3).unwrap();
        assert_eq!(r.result.alpha, 1.0);
        assert!(r.max_err.unwrap() < 1e-12);
        let r = chi_convolve(&DistPower::minus(-0.5), &DistPower::minus(-0.5), 1.0, 1e-3).unwrap();
        assert_eq!(r.result.alpha, 0.0);
        assert!(r.max_err.unwrap() < 1e-3, "{:?}", r.max_err);
        let r = chi_convolve(&DistPower::minus(-1.0), &DistPower::minus(0.5), 1.0, 1e-3).unwrap();
        assert_eq!(r.result.alpha, 0.5);
        assert!(r.max_err.unwrap() < 1e-12);
        let r = chi_convolve(&DistPower::minus(-2.0), &DistPower::minus(1.5), 1.0, 1e-3).unwrap();
        assert_eq!(r.result.alpha, 0.5);
        assert!(r.max_err.unwrap() < 1e-4, "{:?}", r.max_err);
        assert!(chi_convolve(&DistPower::minus(-1.5), &DistPower::minus(-2.5), 1.0, 1e-3).is_err());
    }

    #[test]
    fn associativity_of_regular_triples() {
        // (chi^w * chi^z) * chi^v via the closed form of the inner product, then quadrature
        for (w, z, v) in [(0.0, 0.5, -0.5), (-0.5, 1.0, 0.0)] {
            let inner = w + z + 1.0;
            let lhs = chi_convolve(&DistPower::minus(inner), &DistPower::minus(v), 1.0, 1e-3).unwrap();
            let rhs_inner = z + v + 1.0;
            let rhs = chi_convolve(&DistPower::minus(w), &DistPower::minus(rhs_inner), 1.0, 1e-3).unwrap();
            assert_eq!(lhs.result.alpha, w + z + v + 2.0);
            assert_eq!(lhs.result, rhs.result);
            assert!(lhs.max_err.unwrap() < 1e-3 && rhs.max_err.unwrap() < 1e-3);
        }
    }

    #[test]
    fn refinement_reduces_error() {
        let e1 = chi_convolve(&DistPower::minus(-0.5), &DistPower::minus(0.5), 1.0, 4e-3).unwrap().max_err.unwrap();
        let e2 = chi_convolve(&DistPower::minus(-0.5), &DistPower::minus(0.5), 1.0, 2e-3).unwrap().max_err.unwrap();
        assert!(e2 < e1 && e2 < 1e-6, "{e1} {e2}");
    }

    #[test]
    fn first_derivative_is_minus_f_prime() {
        let h = 1e-3;
        let f = bump_fn(h);
        let d = weyl_derivative(&f, 1.0).unwrap();
        let fp = |x: f64| (bump(x + 1e-6, 0.5, 1.0) - bump(x - 1e-6, 0.5, 1.0)) / 2e-6;
        let err = (0..f.len()).map(|j| (d.values[j].re + fp(f.x(j))).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3 * d.sup_norm(), "{err}");
        assert_eq!(weyl_derivative(&f, 0.0).unwrap(), f);
        assert!(weyl_derivative(&f, -0.5).is_err());
        let edge = SampledFn::from_real(0.6, 2.0, h, |x| bump(x, 0.5, 1.0)).unwrap();
        assert!(weyl_derivative(&edge, 0.5).is_err());
    }

    #[test]
    fn half_derivative_semigroup() {
        // the outer derivative amplifies the O(h^2) quadrature error by 1/h
        let h = 5e-4;
        let f = bump_fn(h);
        let twice = weyl_derivative(&weyl_derivative(&f, 0.5).unwrap(), 0.5);
        // the inner result no longer vanishes at the left edge, so go through the integral directly
        let inner = weyl_derivative(&f, 0.5).unwrap();
        let outer = minus_derivative(&weyl_integral(&inner, 0.5).unwrap());
        let once = weyl_derivative(&f, 1.0).unwrap();
        assert!(twice.is_err());
        let m = f.len();
        let err = (10..m - 10).map(|j| (outer.values[j] - once.values[j]).norm()).fold(0.0, f64::max);
        assert!(err < 1e-3 * once.sup_norm(), "{err}");
    }

    #[test]
    fn reproduction() {
        let h = 1e-3;
        let f = bump_fn(h);
        for nu in [0.5, 1.0, 1.5] {
            let d = weyl_derivative(&f, nu).unwrap();
            let back = weyl_integral(&d, nu).unwrap();
            let err = back.sup_diff(&f);
            assert!(err < 10.0 * h, "nu = {nu}: {err}");
        }
    }

    #[test]
    fn weyl_integral_matches_closed_form() {
        // W^mu of the indicator-like ramp: for F = (1 - x)_+ on [0, 1],
        // W^mu F(0) = int_0^1 (1 - y) y^{mu-1} dy / Gamma(mu) = 1 / Gamma(mu + 2)
        for mu in [0.3, 0.5, 1.0, 1.7] {
            let f = SampledFn::from_real(0.0, 3.0, 1e-3, |x| (1.0 - x).max(0.0)).unwrap();
            let w = weyl_integral(&f, mu).unwrap();
            assert!((w.values[0].re - 1.0 / gamma(mu + 2.0)).abs() < 1e-9, "mu = {mu}");
            assert!((weyl_integral_at(&f, mu, 0.0) - 1.0 / gamma(mu + 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn hat_weights_series_is_continuous() {
        for mu in [0.25, 0.5, 1.5] {
            let c = 1.0 / (mu * (mu + 1.0));
            let f = |u: f64| u.powf(mu + 1.0);
            let w = hat_weights(mu, 52);
            let exact = (f(51.0) - 2.0 * f(50.0) + f(49.0)) * c;
            assert!((w[50] - exact).abs() < 1e-10 * exact.abs());
        }
    }

    #[test]
    fn ws_norm_examples() {
        let h = 1e-3;
        let f = bump_fn(h);
        let n1 = ws_norm(&f, 1.0).unwrap();
        let fp_l1 = minus_derivative(&f).l1_norm();
        assert!((n1.total - (f.l1_norm() + fp_l1)).abs() < 1e-12);
        let n0 = ws_norm(&f, 0.0).unwrap();
        assert!((n0.total - 2.0 * f.l1_norm()).abs() < 1e-14);
        let g = f.dilate(4.0);
        assert!((g.l1_norm() - f.l1_norm() / 4.0).abs() < 1e-12);
        let half = ws_norm(&f, 0.5).unwrap();
        assert!(half.truncation_estimate > 0.0 && half.truncation_estimate < half.value_deriv_l1);
    }

    #[test]
    fn subordination_examples() {
        let h = 1e-4;
        let f = SampledFn::from_real(0.0, 1.5, h, |x| bump(x, 0.5, 1.0)).unwrap();
        let e = subordination_check(&f, 1.5, &[0.7]).unwrap();
        assert!(e < 1e-4, "{e}");
        let e = subordination_check(&f, 1.0, &[0.6, 0.75, 0.9]).unwrap();
        assert!(e < 1e-4, "{e}");
        assert_eq!(subordination_check(&f, 1.5, &[1.2]).unwrap(), 0.0);
        assert!(subordination_check(&f, 0.25, &[0.7]).is_err());
    }

    #[test]
    fn dyadic_examples() {
        let g = SampledFn::from_real(-20.0, 20.0 - 40.0 / 4096.0, 40.0 / 4096.0, |x| (-x * x).exp()).unwrap();
        assert_eq!(g.len(), 4096);
        let d = dyadic_decompose(&g, 10, 1e-6).unwrap();
        assert!(d.tail_l1 < 1e-6 && d.warning.is_none());
        let coarse = dyadic_decompose(&g, 0, 1e-6).unwrap();
        assert!(coarse.warning.is_some());

        // band-limited inside |tau| < 1/4
        let period = 400.0;
        let low = SampledFn::from_real(0.0, period - period / 4096.0, period / 4096.0, |x| {
            (2.0 * PI * 3.0 * x / period).cos() + 0.5 * (2.0 * PI * 7.0 * x / period).sin()
        })
        .unwrap();
        let d = dyadic_decompose(&low, 6, 1e-6).unwrap();
        assert!(d.pieces[1..].iter().all(|p| p.sup_norm() < 1e-12));
    }

    #[test]
    fn dyadic_bernstein_and_decay() {
        let n = 1 << 14;
        let h = 40.0 / n as f64;
        let g = SampledFn::from_real(-20.0, 20.0 - h, h, |x| (1.0 - x * x).max(0.0).powi(3)).unwrap();
        let d = dyadic_decompose(&g, 9, 1e-3).unwrap();
        for alpha in [0.0, 0.5] {
            let ratios: Vec<f64> = (1..=9)
                .map(|l| {
                    let p = &d.pieces[l];
                    spectral_weyl_derivative(p, alpha + 1.0).l1_norm() / (2f64.powf((alpha + 1.0) * l as f64) * p.l1_norm())
                })
                .collect();
            assert!(ratios.iter().all(|r| *r < 4.0), "{ratios:?}");
        }
        // C^2 function: ||G^(l)||_1 2^{2l} stays bounded
        let scaled: Vec<f64> = (1..=9).map(|l| d.pieces[l].l1_norm() * 4f64.powi(l as i32)).collect();
        let first = scaled[0];
        assert!(scaled.iter().all(|s| *s < 10.0 * first), "{scaled:?}");
    }

    #[test]
    fn spectral_and_quadrature_derivatives_agree() {
        let n = 1 << 13;
        let h = 8.0 / n as f64;
        let f = SampledFn::from_real(-4.0, 4.0 - h, h, |x| bump(x, 0.5, 1.0)).unwrap();
        let a = spectral_weyl_derivative(&f, 1.5);
        let b = weyl_derivative(&f, 1.5).unwrap();
        // compare away from the left edge, where the periodic tail differs
        let err = (n / 2..n - 10).map(|j| (a.values[j] - b.values[j]).norm()).fold(0.0, f64::max);
        assert!(err < 1e-2 * b.sup_norm(), "{err}");
    }

    #[test]
    fn jump_resolution() {
        let pts: Vec<f64> = (0..20).map(|i| if i < 10 { -0.1 - 0.2 * i as f64 } else { 0.1 + 0.2 * (i - 10) as f64 }).collect();
        for alpha in [0.25, 0.5, 0.75] {
            let r = jump_identity_resolve(alpha, &pts, 1e-3).unwrap();
            assert_eq!(r.convention, JumpConvention::Swapped);
            assert_eq!(r.ambiguous, alpha == 0.5);
            assert!(r.max_error < 1e-3);
            assert!(jump_extrapolated(JumpConvention::Swapped, alpha, -1.0).norm() < 1e-6);
        }
        let v = jump_extrapolated(JumpConvention::Swapped, 0.5, 1.0);
        assert!((v - Complex64::new(0.0, 2.0)).norm() < 1e-6);
        // alpha -> 1: pairing with a Gaussian tends to 2 pi i g(0)
        let p = jump_pairing(JumpConvention::Swapped, 1.0, 1e-4, |x| (-x * x).exp(), 30.0);
        assert!((p - Complex64::new(0.0, 2.0 * PI)).norm() < 1e-3, "{p}");
        let p = jump_pairing(JumpConvention::Swapped, 0.999, 1e-4, |x| (-x * x).exp(), 30.0);
        assert!((p - Complex64::new(0.0, 2.0 * PI)).norm() < 5e-2, "{p}");
    }

    #[test]
    fn csv_has_header() {
        let f = SampledFn::from_real(0.0, 1.0, 0.5, |x| x).unwrap();
        let s = f.to_csv("test");
        assert!(s.starts_with("# test"));
        assert!(s.lines().nth(1) == Some("x,re,im"));
        assert_eq!(s.lines().count(), 5);
    }
}
