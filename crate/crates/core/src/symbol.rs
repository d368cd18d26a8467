//! Real homogeneous elliptic polynomials `P(xi)` and the level set `P = 1`.

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolPoly {
    n: usize,
    m: u32,
    terms: Vec<(Vec<u32>, f64)>,
}

/// Value, gradient and row-major Hessian at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Config form of a symbol.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged, deny_unknown_fields)]
pub enum SymbolSpec {
    Terms { n: usize, m: u32, terms: Vec<(Vec<u32>, f64)> },
    Builtin(BuiltinSymbol),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinSymbol {
    NormPowerM { n: usize, m: u32 },
    LaplacianPowK { n: usize, k: u32 },
}

impl SymbolSpec {
    pub fn build(&self) -> Result<SymbolPoly> {
        match self {
            SymbolSpec::Terms { n, m, terms } => SymbolPoly::new(*n, *m, terms.clone()),
            SymbolSpec::Builtin(BuiltinSymbol::NormPowerM { n, m }) => SymbolPoly::norm_power(*n, *m),
            SymbolSpec::Builtin(BuiltinSymbol::LaplacianPowK { n, k }) => {
                SymbolPoly::norm_power(*n, 2 * *k)
            }
        }
    }
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

/// Multi-indices of length `n` summing to `total`, lexicographically descending.
fn compositions(n: usize, total: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(n - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl SymbolPoly {
    pub fn new(n: usize, m: u32, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if n == 0 {
            return invalid("dimension must be positive");
        }
        if m == 0 || m % 2 != 0 {
            return invalid(format!("degree m = {m} must be even and positive"));
        }
        if terms.is_empty() {
            return invalid("symbol has no terms");
        }
        for (idx, c) in &terms {
            if idx.len() != n {
                return invalid(format!("multi-index {idx:?} does not have length {n}"));
            }
            if idx.iter().sum::<u32>() != m {
                return invalid(format!("multi-index {idx:?} does not have degree {m}"));
            }
            if !c.is_finite() {
                return invalid("non-finite coefficient");
            }
        }
        Ok(Self { n, m, terms })
    }

    /// `|xi|^m` expanded as a polynomial; `m` must be even.
    pub fn norm_power(n: usize, m: u32) -> Result<Self> {
        if m == 0 || m % 2 != 0 {
            return invalid(format!("degree m = {m} must be even and positive"));
        }
        let k = m / 2;
        let terms = compositions(n, k)
            .into_iter()
            .map(|a| {
                let coef = factorial(k) / a.iter().map(|&ai| factorial(ai)).product::<f64>();
                (a.iter().map(|ai| 2 * ai).collect(), coef)
            })
            .collect();
        Self::new(n, m, terms)
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let spec: SymbolSpec = serde_json::from_value(v.clone())
            .map_err(|e| Error::InvalidParam(format!("symbol spec: {e}")))?;
        spec.build()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    /// Whether every exponent is even, so `P(-xi) = P(xi)` coordinatewise.
    pub fn is_even_in_each_variable(&self) -> bool {
        self.terms.iter().all(|(a, _)| a.iter().all(|e| e % 2 == 0))
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.n);
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().zip(xi).map(|(&e, &x)| powi(x, e)).product::<f64>())
            .sum()
    }

    pub fn eval_grad_hess(&self, xi: &[f64]) -> Jet {
        let n = self.n;
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        // d^k/dx^k of x^e evaluated at xi_j, for k = 0, 1, 2
        let d = |x: f64, e: u32, k: u32| -> f64 {
            if e < k {
                0.0
            } else {
                let fall: f64 = (0..k).map(|i| (e - i) as f64).product();
                fall * powi(x, e - k)
            }
        };
        for (a, c) in &self.terms {
            let base: Vec<[f64; 3]> = (0..n)
                .map(|j| [d(xi[j], a[j], 0), d(xi[j], a[j], 1), d(xi[j], a[j], 2)])
                .collect();
            let prod_except = |skip: &[usize]| -> f64 {
                (0..n).filter(|j| !skip.contains(j)).map(|j| base[j][0]).product()
            };
            value += c * prod_except(&[]);
            for i in 0..n {
                grad[i] += c * base[i][1] * prod_except(&[i]);
                hess[i * n + i] += c * base[i][2] * prod_except(&[i]);
                for j in (i + 1)..n {
                    let v = c * base[i][1] * base[j][1] * prod_except(&[i, j]);
                    hess[i * n + j] += v;
                    hess[j * n + i] += v;
                }
            }
        }
        Jet { value, grad, hess }
    }

    pub fn hess_det(&self, xi: &[f64]) -> f64 {
        let jet = self.eval_grad_hess(xi);
        let n = self.n;
        Mat::<f64>::from_fn(n, n, |i, j| jet.hess[i * n + j]).determinant()
    }
}

/// Deterministic quasi-uniform directions on the unit sphere.
pub fn sphere_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        }
    }
}

/// Radial Newton projection of a unit direction onto `P = 1`.
pub fn project_to_sigma(p: &SymbolPoly, omega: &[f64]) -> Result<Vec<f64>> {
    let pw = p.eval(omega);
    if pw.is_nan() || pw <= 0.0 {
        return Err(Error::Numerical(format!(
            "P = {pw} <= 0 along ray {omega:?}: symbol not elliptic"
        )));
    }
    let m = p.m() as f64;
    let mut t = 1.0f64;
    let scaled = |t: f64| -> Vec<f64> { omega.iter().map(|w| w * t).collect() };
    for _ in 0..50 {
        let xi = scaled(t);
        let jet_val = p.eval(&xi);
        let g = jet_val - 1.0;
        if g.abs() < 1e-13 {
            return Ok(xi);
        }
        // d/dt P(t omega) = m P(t omega) / t by homogeneity of the terms
        let dg = m * jet_val / t;
        t -= g / dg;
        if !(t.is_finite() && t > 0.0) {
            break;
        }
    }
    let xi = scaled(t);
    if (p.eval(&xi) - 1.0).abs() < 1e-10 {
        return Ok(xi);
    }
    Err(Error::Numerical(format!(
        "Newton projection did not converge in 50 iterations along ray {omega:?}"
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSample {
    pub points: Vec<Vec<f64>>,
    pub hessdets: Vec<f64>,
    pub min_abs_hessdet: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const DEFAULT_HESSDET_THRESHOLD: f64 = 1e-8;

/// Samples `P = 1` along at least `1000 n` rays and reports the smallest `|det Hess P|`.
pub fn nondegeneracy_check(p: &SymbolPoly, num_samples: usize, threshold: f64) -> Result<SigmaSample> {
    let count = num_samples.max(1000 * p.n());
    let dirs = sphere_directions(p.n(), count, 0x5eed);
    let points: Vec<Vec<f64>> = dirs
        .par_iter()
        .map(|w| project_to_sigma(p, w))
        .collect::<Result<_>>()?;
    let hessdets: Vec<f64> = points.par_iter().map(|x| p.hess_det(x)).collect();
    let min_abs_hessdet = hessdets.iter().fold(f64::INFINITY, |a, d| a.min(d.abs()));
    Ok(SigmaSample {
        points,
        hessdets,
        min_abs_hessdet,
        threshold,
        pass: min_abs_hessdet > threshold,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportValue {
    pub phi: f64,
    /// A maximiser on `P = 1`.
    pub omega: Vec<f64>,
    /// Distinct local maxima found by the multi-start, best first, as (value, point).
    pub local_maxima: Vec<(f64, Vec<f64>)>,
    /// Number of distinct points attaining the maximum within tolerance.
    pub multiplicity: usize,
}

fn normalize(v: &mut [f64]) {
    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= s);
}

/// `f(theta) = (y . theta) P(theta)^{-1/m}` for unit `theta`.
fn support_objective(p: &SymbolPoly, y: &[f64], theta: &[f64]) -> f64 {
    let dot: f64 = y.iter().zip(theta).map(|(a, b)| a * b).sum();
    dot * p.eval(theta).powf(-1.0 / p.m() as f64)
}

fn ascend(p: &SymbolPoly, y: &[f64], start: &[f64]) -> Option<(f64, Vec<f64>)> {
    let m = p.m() as f64;
    let mut theta = start.to_vec();
    let mut f = support_objective(p, y, &theta);
    let mut step = 0.1;
    for _ in 0..5000 {
        let jet = p.eval_grad_hess(&theta);
        let pm = jet.value.powf(-1.0 / m);
        let dot: f64 = y.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let mut g: Vec<f64> = (0..theta.len())
            .map(|i| y[i] * pm - dot * pm / (m * jet.value) * jet.grad[i])
            .collect();
        let radial: f64 = g.iter().zip(&theta).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(&theta).for_each(|(gi, ti)| *gi -= radial * ti);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm < 1e-12 * (1.0 + f.abs()) {
            return Some((f, theta));
        }
        loop {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            normalize(&mut cand);
            let fc = support_objective(p, y, &cand);
            if fc > f {
                theta = cand;
                f = fc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return Some((f, theta));
            }
        }
    }
    None
}

/// `phi(y) = max over P(omega) = 1 of y . omega`, by multi-start projected ascent.
///
/// Errors if an ascent run fails to settle; several maximisers are reported
/// through `multiplicity` rather than treated as an error.
pub fn support_function(p: &SymbolPoly, y: &[f64]) -> Result<SupportValue> {
    if y.len() != p.n() {
        return invalid(format!("direction has length {}, expected {}", y.len(), p.n()));
    }
    let ynorm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ynorm == 0.0 {
        return Ok(SupportValue {
            phi: 0.0,
            omega: project_to_sigma(p, &sphere_directions(p.n(), 1, 0)[0])?,
            local_maxima: vec![],
            multiplicity: 0,
        });
    }
    let dirs = sphere_directions(p.n(), 200 * p.n(), 0xface);
    let mut scored: Vec<(f64, &Vec<f64>)> =
        dirs.iter().map(|d| (support_objective(p, y, d), d)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<Vec<f64>> = vec![y.iter().map(|v| v / ynorm).collect()];
    starts.extend(scored.iter().take(8).map(|(_, d)| (*d).clone()));
    let mut maxima: Vec<(f64, Vec<f64>)> = Vec::new();
    for s in &starts {
        let (f, theta) = ascend(p, y, s).ok_or_else(|| {
            Error::Numerical(format!("support ascent from {s:?} did not converge"))
        })?;
        let close = maxima.iter().any(|(_, t)| {
            t.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < 1e-5
        });
        if !close {
            maxima.push((f, theta));
        }
    }
    maxima.sort_by(|a, b| b.0.total_cmp(&a.0));
    let best = maxima[0].0;
    let tol = 1e-9 * best.abs().max(1e-300);
    let multiplicity = maxima.iter().filter(|(f, _)| best - f <= tol).count();
    let local_maxima: Vec<(f64, Vec<f64>)> = maxima
        .into_iter()
        .map(|(f, t)| {
            let s = p.eval(&t).powf(-1.0 / p.m() as f64);
            (f, t.iter().map(|x| x * s).collect())
        })
        .collect();
    Ok(SupportValue {
        phi: best,
        omega: local_maxima[0].1.clone(),
        local_maxima,
        multiplicity,
    })
}
