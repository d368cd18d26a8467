//! Periodic discretisation of `R^n` on which `P(D)` is exactly diagonal.
//!
//! Conventions, fixed once:
//! * sample `j` along an axis sits at `x = j h`, `h = L/N`; distances use the
//!   minimum image, so index `j >= N/2` stands for `x = (j - N) h`;
//! * frequency index `k` in `[-N/2, N/2)` is stored at position `k mod N` and
//!   represents `xi = 2 pi k / L`;
//! * the DFT is unitary (`N^{-n/2}` both ways), so Parseval holds verbatim;
//! * a dense matrix `M` stores `K(x, y) h^n`, so `M f` is the quadrature of
//!   `int K(x, y) f(y) dy` and the identity operator is the identity matrix.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num::complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::gamma;

use crate::dense::DenseMatrix;
use crate::error::{invalid, Error, Result};
use crate::norms::{self, fit_power_law, LowerBoundOpts, ScalingReport};
use crate::symbol::SymbolPoly;

pub const DEFAULT_DENSE_CAP: usize = 4096;
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid {
    pub n: usize,
    pub big_n: usize,
    pub l: f64,
}

impl TorusGrid {
    pub fn new(n: usize, big_n: usize, l: f64) -> Result<Self> {
        if n == 0 {
            return invalid("grid dimension must be positive");
        }
        if big_n < 2 || !big_n.is_power_of_two() {
            return invalid(format!("N = {big_n} must be a power of two >= 2"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return invalid(format!("box side L = {l} must be positive"));
        }
        Ok(Self { n, big_n, l })
    }

    pub fn size(&self) -> usize {
        self.big_n.pow(self.n as u32)
    }

    pub fn h(&self) -> f64 {
        self.l / self.big_n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.n as i32)
    }

    /// Signed index in `[-N/2, N/2)` for a stored position.
    pub fn signed_index(&self, i: usize) -> i64 {
        if i < self.big_n / 2 {
            i as i64
        } else {
            i as i64 - self.big_n as i64
        }
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        for a in (0..self.n).rev() {
            idx[a] = flat % self.big_n;
            flat /= self.big_n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.big_n + i % self.big_n)
    }

    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        let scale = 2.0 * PI / self.l;
        self.multi_index(flat).into_iter().map(|i| scale * self.signed_index(i) as f64).collect()
    }

    /// Minimum-image position of a sample.
    pub fn position(&self, flat: usize) -> Vec<f64> {
        let h = self.h();
        self.multi_index(flat).into_iter().map(|i| h * self.signed_index(i) as f64).collect()
    }

    pub fn radius(&self, flat: usize) -> f64 {
        self.position(flat).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Minimum-image distance between two samples.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ia, ib) = (self.multi_index(a), self.multi_index(b));
        let h = self.h();
        ia.iter()
            .zip(&ib)
            .map(|(&x, &y)| {
                let d = (x as i64 - y as i64).rem_euclid(self.big_n as i64) as usize;
                (h * self.signed_index(d) as f64).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `P(xi_k)` at every lattice frequency, in storage order.
    pub fn symbol_values(&self, p: &SymbolPoly) -> Result<Vec<f64>> {
        if p.n() != self.n {
            return invalid(format!("symbol dimension {} does not match grid dimension {}", p.n(), self.n));
        }
        Ok((0..self.size()).into_par_iter().map(|k| p.eval(&self.frequency(k))).collect())
    }

    /// Positions of the shifted sample `flat + shift` (componentwise, periodic).
    pub fn shifted(&self, flat: usize, shift: &[i64]) -> usize {
        let idx: Vec<usize> = self
            .multi_index(flat)
            .iter()
            .zip(shift)
            .map(|(&i, &s)| (i as i64 + s).rem_euclid(self.big_n as i64) as usize)
            .collect();
        self.flat_index(&idx)
    }
}

/// Cached unitary n-dimensional FFT for one grid.
pub struct GridFft {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GridFft({:?})", self.grid)
    }
}

impl GridFft {
    pub fn new(grid: &TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid: grid.clone(),
            forward: planner.plan_fft_forward(grid.big_n),
            inverse: planner.plan_fft_inverse(grid.big_n),
        }
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let nn = self.grid.big_n;
        let total = data.len();
        assert_eq!(total, self.grid.size());
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![ZERO; nn];
        let mut stride = nn;
        for _ in 1..self.grid.n {
            let block = stride * nn;
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
            stride = block;
        }
        let s = 1.0 / (total as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= s);
    }

    /// `f_hat(k) = N^{-n/2} sum_j f(j) e^{-2 pi i j k / N}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.forward, data);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inverse, data);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: TorusGrid,
    pub values: Vec<Complex64>,
}

impl GridField {
    pub fn new(grid: &TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.size() {
            return invalid(format!("field has {} samples, grid has {}", values.len(), grid.size()));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone(), values: vec![ZERO; grid.size()] }
    }

    /// Kronecker delta at a flat index.
    pub fn delta(grid: &TorusGrid, at: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[at] = ONE;
        f
    }

    /// Samples `f` at minimum-image positions.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> Complex64 + Sync) -> Self {
        let values = (0..grid.size()).into_par_iter().map(|k| f(&grid.position(k))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        norms::lp_norm(&self.values, p, self.grid.cell_volume())
    }

    /// Plain (unweighted) Euclidean norm of the sample vector.
    pub fn l2_samples(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Little-endian dump: 32-byte header then interleaved `f32` real/imag pairs.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        w.write_all(&(self.grid.big_n as u32).to_le_bytes())?;
        w.write_all(&self.grid.l.to_le_bytes())?;
        w.write_all(&[0u8; 8])?;
        for z in &self.values {
            w.write_all(&(z.re as f32).to_le_bytes())?;
            w.write_all(&(z.im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 32];
        r.read_exact(&mut head)?;
        if &head[..8] != FIELD_MAGIC {
            return invalid("not a field dump (bad magic)");
        }
        let n = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let big_n = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        let l = f64::from_le_bytes(head[16..24].try_into().unwrap());
        let grid = TorusGrid::new(n, big_n, l)?;
        let mut buf = vec![0u8; grid.size() * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| {
                Complex64::new(
                    f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
                )
            })
            .collect();
        Ok(Self { grid, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dump(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

pub const FIELD_MAGIC: &[u8; 8] = b"SPLBFLD1";

/// `C^inf` step: 1 on `(-inf, 0]`, 0 on `[1, inf)`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / (1.0 - t)).exp();
        let b = (-1.0 / t).exp();
        a / (a + b)
    }
}

/// 1 on `[-inner, inner]`, 0 outside `(-outer, outer)`, smooth in between.
pub fn smooth_cutoff(lambda: f64, inner: f64, outer: f64) -> f64 {
    smooth_step((lambda.abs() - inner) / (outer - inner))
}

/// `(x)_+^a / Gamma(a + 1)` for `a > -1`; errors at `x = 0` when `a < 0`.
pub fn chi_plus(x: f64, a: f64) -> Result<f64> {
    if x < 0.0 {
        return Ok(0.0);
    }
    if x == 0.0 {
        if a < 0.0 {
            return Err(Error::Numerical(
                "singular Bochner-Riesz symbol at a lattice point; use eps-regularised mode".into(),
            ));
        }
        return Ok(if a == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(x.powf(a) / gamma(a + 1.0))
}

/// `chi_+^a` regularised through the upper boundary value `(x + i eps)^a`,
/// valid for `-1 < a < 0`: `Im(e^{-i pi a}(x + i eps)^a) / (sin(-pi a) Gamma(a + 1))`.
pub fn chi_plus_eps(x: f64, a: f64, eps: f64) -> f64 {
    let z = Complex64::new(x, eps).powf(a) * Complex64::from_polar(1.0, -PI * a);
    z.im / ((-PI * a).sin() * gamma(a + 1.0))
}

/// Scalar spectral multipliers `lambda -> F(lambda)`.
#[derive(Clone)]
pub enum MultiplierFn {
    Identity,
    /// `(1 - lambda/R)_+^alpha / Gamma(alpha + 1)`, `alpha > -1`.
    BochnerRiesz { r: f64, alpha: f64 },
    /// Indicator of the closed interval `[a, b]`.
    SpectralWindow { a: f64, b: f64 },
    /// `(lambda - z)^{-alpha}`, principal branch.
    Resolvent { z: Complex64, alpha: f64 },
    /// `e^{-t lambda}`.
    Heat { t: f64 },
    /// 1 on `|lambda| <= inner`, 0 beyond `outer`.
    Cutoff { inner: f64, outer: f64 },
    /// `psi(2^{-l} lambda) - psi(2^{1-l} lambda)` for `l >= 1`, `psi` for `l = 0`,
    /// with `psi` the cutoff 1 on `[0, 1/2]`, 0 beyond 1.
    Dyadic { level: u32 },
    Product(Vec<MultiplierFn>),
    Custom(Arc<dyn Fn(f64) -> Complex64 + Send + Sync>),
}

impl fmt::Debug for MultiplierFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiplierFn::Identity => write!(f, "Identity"),
            MultiplierFn::BochnerRiesz { r, alpha } => write!(f, "BochnerRiesz(R={r}, alpha={alpha})"),
            MultiplierFn::SpectralWindow { a, b } => write!(f, "SpectralWindow[{a}, {b}]"),
            MultiplierFn::Resolvent { z, alpha } => write!(f, "Resolvent(z={z}, alpha={alpha})"),
            MultiplierFn::Heat { t } => write!(f, "Heat(t={t})"),
            MultiplierFn::Cutoff { inner, outer } => write!(f, "Cutoff({inner}, {outer})"),
            MultiplierFn::Dyadic { level } => write!(f, "Dyadic({level})"),
            MultiplierFn::Product(v) => write!(f, "Product({v:?})"),
            MultiplierFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Dyadic piece used by [`MultiplierFn::Dyadic`].
pub fn dyadic_piece(level: u32, lambda: f64) -> f64 {
    let psi = |x: f64| smooth_cutoff(x, 0.5, 1.0);
    let s = 0.5f64.powi(level as i32);
    if level == 0 {
        psi(lambda)
    } else {
        psi(s * lambda) - psi(2.0 * s * lambda)
    }
}

impl MultiplierFn {
    pub fn eval(&self, lambda: f64) -> Result<Complex64> {
        let v = match self {
            MultiplierFn::Identity => ONE,
            MultiplierFn::BochnerRiesz { r, alpha } => {
                if *alpha <= -1.0 {
                    return invalid("Bochner-Riesz multiplier needs alpha > -1; use bochner_riesz_op for -1");
                }
                Complex64::new(chi_plus(1.0 - lambda / r, *alpha)?, 0.0)
            }
            MultiplierFn::SpectralWindow { a, b } => {
                if lambda >= *a && lambda <= *b {
                    ONE
                } else {
                    ZERO
                }
            }
            MultiplierFn::Resolvent { z, alpha } => {
                let d = Complex64::new(lambda, 0.0) - z;
                if d == ZERO {
                    return Err(Error::Numerical(format!("resolvent singular at lambda = {lambda}")));
                }
                if *alpha == 0.0 {
                    ONE
                } else {
                    d.powf(-alpha)
                }
            }
            MultiplierFn::Heat { t } => Complex64::new((-t * lambda).exp(), 0.0),
            MultiplierFn::Cutoff { inner, outer } => Complex64::new(smooth_cutoff(lambda, *inner, *outer), 0.0),
            MultiplierFn::Dyadic { level } => Complex64::new(dyadic_piece(*level, lambda), 0.0),
            MultiplierFn::Product(fs) => {
                let mut acc = ONE;
                for f in fs {
                    acc *= f.eval(lambda)?;
                }
                acc
            }
            MultiplierFn::Custom(f) => f(lambda),
        };
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Numerical(format!("multiplier not finite at lambda = {lambda}")));
        }
        Ok(v)
    }

    pub fn conj(&self) -> MultiplierFn {
        let me = self.clone();
        MultiplierFn::Custom(Arc::new(move |l| me.eval(l).map(|v| v.conj()).unwrap_or(Complex64::new(f64::NAN, 0.0))))
    }
}

#[derive(Clone, Debug)]
pub enum OperatorKind {
    /// Symbol values in frequency storage order.
    FourierMultiplier(Vec<Complex64>),
    DenseMatrix(DenseMatrix),
}

#[derive(Clone, Debug)]
pub struct GridOperator {
    pub grid: TorusGrid,
    pub kind: OperatorKind,
    fft: Arc<GridFft>,
}

impl GridOperator {
    pub fn multiplier(grid: &TorusGrid, symbol: Vec<Complex64>) -> Result<Self> {
        if symbol.len() != grid.size() {
            return invalid("symbol length does not match the grid");
        }
        Ok(Self { grid: grid.clone(), kind: OperatorKind::FourierMultiplier(symbol), fft: Arc::new(GridFft::new(grid)) })
    }

    pub fn dense(grid: &TorusGrid, m: DenseMatrix) -> Result<Self> {
        if m.rows != grid.size() || m.cols != grid.size() {
            return invalid("matrix shape does not match the grid");
        }
        Ok(Self { grid: grid.clone(), kind: OperatorKind::DenseMatrix(m), fft: Arc::new(GridFft::new(grid)) })
    }

    /// `F(P(D))` on the grid.
    pub fn from_multiplier_fn(grid: &TorusGrid, f: &MultiplierFn, p: &SymbolPoly) -> Result<Self> {
        let vals = grid.symbol_values(p)?;
        let symbol = vals.par_iter().map(|&l| f.eval(l)).collect::<Result<Vec<_>>>()?;
        Self::multiplier(grid, symbol)
    }

    pub fn symbol(&self) -> Option<&[Complex64]> {
        match &self.kind {
            OperatorKind::FourierMultiplier(s) => Some(s),
            OperatorKind::DenseMatrix(_) => None,
        }
    }

    pub fn fft(&self) -> &GridFft {
        &self.fft
    }

    pub fn apply_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        match &self.kind {
            OperatorKind::FourierMultiplier(s) => {
                let mut d = x.to_vec();
                self.fft.forward(&mut d);
                d.iter_mut().zip(s).for_each(|(v, m)| *v *= m);
                self.fft.inverse(&mut d);
                d
            }
            OperatorKind::DenseMatrix(m) => m.matvec(x),
        }
    }

    /// Adjoint for the weighted pairing.
    pub fn adjoint_apply_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        match &self.kind {
            OperatorKind::FourierMultiplier(s) => {
                let mut d = x.to_vec();
                self.fft.forward(&mut d);
                d.iter_mut().zip(s).for_each(|(v, m)| *v *= m.conj());
                self.fft.inverse(&mut d);
                d
            }
            OperatorKind::DenseMatrix(m) => m.adjoint_matvec(x),
        }
    }

    pub fn apply(&self, f: &GridField) -> Result<GridField> {
        if f.grid != self.grid {
            return invalid("field and operator live on different grids");
        }
        Ok(GridField { grid: self.grid.clone(), values: self.apply_vec(&f.values) })
    }

    /// Convolution kernel `K(x)` of a multiplier, `K = (T delta_0) / h^n`.
    pub fn kernel(&self) -> Result<GridField> {
        if !matches!(self.kind, OperatorKind::FourierMultiplier(_)) {
            return Err(Error::Unsupported("kernel() needs a Fourier multiplier".into()));
        }
        let mut k = self.apply_vec(&GridField::delta(&self.grid, 0).values);
        let w = self.grid.cell_volume();
        k.iter_mut().for_each(|v| *v /= w);
        GridField::new(&self.grid, k)
    }

    /// Composition `self` after `other` for two multipliers.
    pub fn compose(&self, other: &GridOperator) -> Result<GridOperator> {
        match (&self.kind, &other.kind) {
            (OperatorKind::FourierMultiplier(a), OperatorKind::FourierMultiplier(b)) => {
                Self::multiplier(&self.grid, a.iter().zip(b).map(|(x, y)| x * y).collect())
            }
            _ => Err(Error::Unsupported("compose is defined for multipliers only".into())),
        }
    }

    /// `||T||_{2->2}`: sup of `|symbol|` or the largest singular value.
    pub fn l2_norm(&self) -> f64 {
        match &self.kind {
            OperatorKind::FourierMultiplier(s) => s.iter().map(|z| z.norm()).fold(0.0, f64::max),
            OperatorKind::DenseMatrix(m) => m.max_singular_value(),
        }
    }

    /// `||T||_{p->q}` lower bound by power iteration, with a delta start.
    pub fn norm_lower_bound(&self, p: f64, q: f64, mut opts: LowerBoundOpts) -> Result<norms::LowerBound> {
        opts.p = p;
        opts.q = q;
        opts.cell_volume = self.grid.cell_volume();
        opts.extra_starts.insert(0, GridField::delta(&self.grid, 0).values);
        norms::lower_bound(&|x| self.apply_vec(x), &|x| self.adjoint_apply_vec(x), self.grid.size(), &opts)
    }

    /// Exact `||T||_{1->q}` for a multiplier: the `L^q` norm of its kernel.
    pub fn one_to_q_norm(&self, q: f64) -> Result<f64> {
        Ok(self.kernel()?.lp_norm(q))
    }
}

/// `F(P(D)) f`.
pub fn apply_multiplier(f_mult: &MultiplierFn, p: &SymbolPoly, f: &GridField) -> Result<GridField> {
    GridOperator::from_multiplier_fn(&f.grid, f_mult, p)?.apply(f)
}

/// Dense matrix of an operator: column `y` is the operator applied to `delta_y`.
pub fn materialize(op: &GridOperator, cap: usize) -> Result<DenseMatrix> {
    let size = op.grid.size();
    if size > cap {
        return Err(Error::Refused(format!("grid has {size} points, dense cap is {cap}")));
    }
    match &op.kind {
        OperatorKind::DenseMatrix(m) => Ok(m.clone()),
        OperatorKind::FourierMultiplier(_) => {
            let col0 = op.apply_vec(&GridField::delta(&op.grid, 0).values);
            let g = &op.grid;
            let mut m = DenseMatrix::zeros(size, size, g.cell_volume());
            for y in 0..size {
                let iy = g.multi_index(y);
                let neg: Vec<i64> = iy.iter().map(|&v| -(v as i64)).collect();
                for x in 0..size {
                    m.set(x, y, col0[g.shifted(x, &neg)]);
                }
            }
            Ok(m)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BrVariant {
    /// `(1 - P^{1/m}/R)_+^alpha`.
    Root,
    /// `(1 - P/R^m)_+^alpha`.
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BrMode {
    Direct,
    EpsRegularized(f64),
}

pub const DEFAULT_WINDOW_WIDTH: f64 = 0.02;

/// Bochner-Riesz mean `S_R^alpha` of `P(D)` as a multiplier.
///
/// `alpha = -1` is realised as the window `[R(1 - delta), R]` in the variable
/// `P^{1/m}` (or `[R^m(1 - delta), R^m]` in `P`) divided by `delta`, i.e. the
/// limit `R dE(R)` of `chi_+^alpha(1 - lambda/R)` as `alpha -> -1`.
pub fn bochner_riesz_op(
    grid: &TorusGrid,
    r: f64,
    alpha: f64,
    p: &SymbolPoly,
    variant: BrVariant,
    mode: BrMode,
    window_width: f64,
) -> Result<GridOperator> {
    if r <= 0.0 {
        return invalid("radius R must be positive");
    }
    if alpha < -1.0 {
        return invalid(format!("alpha = {alpha} below -1"));
    }
    let m = p.m() as f64;
    let vals = grid.symbol_values(p)?;
    let s_of = |lam: f64| match variant {
        BrVariant::Root => lam.max(0.0).powf(1.0 / m) / r,
        BrVariant::Power => lam / r.powf(m),
    };
    let symbol: Vec<Complex64> = if alpha == -1.0 {
        if !(window_width > 0.0 && window_width < 1.0) {
            return invalid("window width must lie in (0,1)");
        }
        vals.iter()
            .map(|&lam| {
                let s = s_of(lam);
                let lo = match variant {
                    BrVariant::Root => 1.0 - window_width,
                    BrVariant::Power => (1.0 - window_width).powf(m),
                };
                let scale = match variant {
                    BrVariant::Root => 1.0 / window_width,
                    BrVariant::Power => 1.0 / (1.0 - (1.0 - window_width).powf(m)),
                };
                Complex64::new(if s >= lo && s <= 1.0 { scale } else { 0.0 }, 0.0)
            })
            .collect()
    } else {
        match mode {
            BrMode::Direct => vals
                .iter()
                .map(|&lam| chi_plus(1.0 - s_of(lam), alpha).map(|v| Complex64::new(v, 0.0)))
                .collect::<Result<_>>()?,
            BrMode::EpsRegularized(eps) => {
                if eps <= 0.0 {
                    return invalid("eps must be positive");
                }
                vals.iter()
                    .map(|&lam| {
                        let x = 1.0 - s_of(lam);
                        let v = if alpha < 0.0 { chi_plus_eps(x, alpha, eps) } else { chi_plus(x, alpha).unwrap_or(0.0) };
                        Complex64::new(v, 0.0)
                    })
                    .collect()
            }
        }
    };
    GridOperator::multiplier(grid, symbol)
}

/// Half the local spacing of lattice `P^{1/m}`-values near `r` (relative to `r`),
/// the default regularisation for negative orders.
pub fn default_br_eps(grid: &TorusGrid, p: &SymbolPoly, r: f64) -> Result<f64> {
    let m = p.m() as f64;
    let mut near: Vec<f64> = grid
        .symbol_values(p)?
        .into_iter()
        .map(|l| l.max(0.0).powf(1.0 / m) / r)
        .filter(|s| (s - 1.0).abs() < 0.05)
        .collect();
    near.sort_by(f64::total_cmp);
    near.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    if near.len() < 2 {
        return Err(Error::Numerical("too few lattice values near R to set eps".into()));
    }
    let mut gaps: Vec<f64> = near.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    Ok(0.5 * gaps[gaps.len() / 2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Checks `(1 - s)_+^alpha = (1 - s^{1/m})_+^alpha (sum_{k<m} s^{k/m})^alpha`
/// on the lattice values `s = P/R^m` and on `extra_samples` points of `[0, 2]`.
/// Both sides use the unnormalised power, so `alpha = -1` is covered as well.
pub fn equivalence_l_vs_root(
    grid: &TorusGrid,
    r: f64,
    alpha: f64,
    p: &SymbolPoly,
    extra_samples: usize,
) -> Result<EquivalenceReport> {
    if alpha < -1.0 {
        return invalid(format!("alpha = {alpha} below -1"));
    }
    let m = p.m();
    let mut s_list: Vec<f64> = grid.symbol_values(p)?.into_iter().map(|l| l / r.powi(m as i32)).collect();
    s_list.extend((0..extra_samples).map(|i| 2.0 * (i as f64 + 0.5) / extra_samples as f64));
    let pow = |x: f64| if x > 0.0 { x.powf(alpha) } else if alpha == 0.0 && x == 0.0 { 1.0 } else { 0.0 };
    let (mut abs_e, mut rel_e, mut count) = (0.0f64, 0.0f64, 0usize);
    for s in s_list {
        if s == 1.0 && alpha < 0.0 {
            continue;
        }
        let root = s.powf(1.0 / m as f64);
        let lhs = pow(1.0 - s);
        let factor: f64 = (0..m).map(|k| s.powf(k as f64 / m as f64)).sum();
        let rhs = if root < 1.0 { pow(1.0 - root) * factor.powf(alpha) } else { pow(1.0 - root) };
        let e = (lhs - rhs).abs();
        abs_e = abs_e.max(e);
        rel_e = rel_e.max(e / lhs.abs().max(1e-300).max(if lhs == 0.0 { 1.0 } else { 0.0 }));
        count += 1;
    }
    Ok(EquivalenceReport { samples: count, max_abs_err: abs_e, max_rel_err: rel_e, pass: rel_e <= 1e-12 })
}

/// Number of lattice values in `[a, b]`.
pub fn window_occupancy(values: &[f64], a: f64, b: f64) -> usize {
    values.iter().filter(|&&v| v >= a && v <= b).count()
}

/// Measures `||e^{-t^m P(D)}||_{p->2}` over `t` and fits `t^{-n(1/p - 1/2)}`.
///
/// The multiplier `e^{-t^m P}` has spatial scale `t`, so every `t` must lie in
/// `[4L/N, L/4]`. `p = 1` uses the exact value `||K||_2`, `p = 2` the exact
/// symbol sup, other `p` a power-iteration lower bound.
pub fn generalized_gaussian_check(
    grid: &TorusGrid,
    p: &SymbolPoly,
    p_list: &[f64],
    t_sweep: &[f64],
    tolerance: f64,
    seed: u64,
) -> Result<Vec<ScalingReport>> {
    let (lo, hi) = (4.0 * grid.l / grid.big_n as f64, grid.l / 4.0);
    if let Some(t) = t_sweep.iter().find(|&&t| !(t >= lo && t <= hi)) {
        return invalid(format!("t = {t} outside the resolved band [{lo}, {hi}]"));
    }
    let m = p.m() as i32;
    let vals = grid.symbol_values(p)?;
    let n = grid.n as f64;
    let mut out = Vec::new();
    for &pe in p_list {
        if !(1.0..=2.0).contains(&pe) {
            return invalid(format!("p = {pe} outside [1,2]"));
        }
        let pts: Vec<(f64, f64)> = t_sweep
            .par_iter()
            .map(|&t| -> Result<(f64, f64)> {
                let tm = t.powi(m);
                let sym: Vec<Complex64> = vals.iter().map(|&l| Complex64::new((-tm * l).exp(), 0.0)).collect();
                let op = GridOperator::multiplier(grid, sym)?;
                let v = if pe == 1.0 {
                    op.one_to_q_norm(2.0)?
                } else if pe == 2.0 {
                    op.l2_norm()
                } else {
                    let mut o = LowerBoundOpts::new(pe, 2.0, grid.cell_volume());
                    o.seed = seed;
                    o.restarts = 2;
                    op.norm_lower_bound(pe, 2.0, o)?.value
                };
                Ok((t, v))
            })
            .collect::<Result<_>>()?;
        let mut rep = fit_power_law(&pts, -n * (1.0 / pe - 0.5), tolerance)?;
        rep.seed = Some(seed);
        out.push(rep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::exact_norm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &TorusGrid, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.size()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        GridField::new(grid, v).unwrap()
    }

    fn lap(n: usize) -> SymbolPoly {
        SymbolPoly::norm_power(n, 2).unwrap()
    }

    #[test]
    fn fft_matches_naive_dft() {
        let g = TorusGrid::new(2, 8, 3.0).unwrap();
        let f = random_field(&g, 1);
        let mut fast = f.values.clone();
        GridFft::new(&g).forward(&mut fast);
        for k in 0..g.size() {
            let kk = g.multi_index(k);
            let mut acc = ZERO;
            for j in 0..g.size() {
                let jj = g.multi_index(j);
                let phase = -2.0 * PI * (kk[0] * jj[0] + kk[1] * jj[1]) as f64 / 8.0;
                acc += f.values[j] * Complex64::from_polar(1.0, phase);
            }
            assert!((acc / 8.0 - fast[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_and_roundtrip() {
        let g = TorusGrid::new(3, 8, 5.0).unwrap();
        let f = random_field(&g, 2);
        let fft = GridFft::new(&g);
        let mut d = f.values.clone();
        fft.forward(&mut d);
        let e: f64 = d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((e - f.l2_samples()).abs() < 1e-12 * e);
        fft.inverse(&mut d);
        assert!(d.iter().zip(&f.values).all(|(a, b)| (a - b).norm() < 1e-13));
    }

    #[test]
    fn trace_of_window() {
        let g = TorusGrid::new(1, 4, 2.0 * PI).unwrap();
        let mut vals = g.symbol_values(&lap(1)).unwrap();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals.iter().map(|v| v.round() as i64).collect::<Vec<_>>(), vec![0, 1, 1, 4]);
        let op = GridOperator::from_multiplier_fn(&g, &MultiplierFn::SpectralWindow { a: 0.0, b: 2.0 }, &lap(1)).unwrap();
        let m = materialize(&op, DEFAULT_DENSE_CAP).unwrap();
        let tr: Complex64 = (0..4).map(|i| m.get(i, i)).sum();
        assert!((tr.re - 3.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
    }

    #[test]
    fn identity_and_idempotence() {
        let g = TorusGrid::new(2, 16, 4.0).unwrap();
        let f = random_field(&g, 3);
        let out = apply_multiplier(&MultiplierFn::Identity, &lap(2), &f).unwrap();
        assert!(out.values.iter().zip(&f.values).all(|(a, b)| (a - b).norm() < 1e-13));
        let w = MultiplierFn::SpectralWindow { a: 0.0, b: 30.0 };
        let once = apply_multiplier(&w, &lap(2), &f).unwrap();
        let twice = apply_multiplier(&w, &lap(2), &once).unwrap();
        assert!(once.values.iter().zip(&twice.values).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn materialize_conventions() {
        let g = TorusGrid::new(2, 8, 2.0).unwrap();
        let id = GridOperator::from_multiplier_fn(&g, &MultiplierFn::Identity, &lap(2)).unwrap();
        let m = materialize(&id, DEFAULT_DENSE_CAP).unwrap();
        assert!(m.max_abs_diff(&DenseMatrix::identity(64, g.cell_volume())) < 1e-13);
        assert!((exact_norm(&m, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // e^{i xi a} with a = 2h along the first axis shifts by two samples.
        let a = 2.0 * g.h();
        let sym: Vec<Complex64> = (0..g.size()).map(|k| Complex64::from_polar(1.0, g.frequency(k)[0] * a)).collect();
        let shift = GridOperator::multiplier(&g, sym).unwrap();
        let f = random_field(&g, 4);
        let out = shift.apply(&f).unwrap();
        for x in 0..g.size() {
            let src = g.shifted(x, &[2, 0]);
            assert!((out.values[x] - f.values[src]).norm() < 1e-12);
        }
        let heat = GridOperator::from_multiplier_fn(&g, &MultiplierFn::Heat { t: 0.1 }, &lap(2)).unwrap();
        let hm = materialize(&heat, DEFAULT_DENSE_CAP).unwrap();
        assert!(hm.hermitian_defect() < 1e-12);
        let f = random_field(&g, 5);
        let dense = hm.matvec(&f.values);
        let fast = heat.apply_vec(&f.values);
        assert!(dense.iter().zip(&fast).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!(materialize(&heat, 63).is_err());
    }

    #[test]
    fn br_symbol_values() {
        let g = TorusGrid::new(1, 8, 2.0 * PI).unwrap();
        // alpha = -1/2 at lambda = 3R/4
        let v = chi_plus(0.25, -0.5).unwrap();
        assert!((v - 2.0 / PI.sqrt()).abs() < 1e-12);
        // a lattice value exactly on the sphere: P = 4 at k = 2, R = 2 in the root variant
        assert!(bochner_riesz_op(&g, 2.0, -0.5, &lap(1), BrVariant::Root, BrMode::Direct, 0.02).is_err());
        assert!(bochner_riesz_op(&g, 2.0, -0.5, &lap(1), BrVariant::Root, BrMode::EpsRegularized(0.1), 0.02).is_ok());
        let op = bochner_riesz_op(&g, 2.5, 0.0, &lap(1), BrVariant::Root, BrMode::Direct, 0.02).unwrap();
        assert!((op.l2_norm() - 1.0).abs() < 1e-15);
        let big = bochner_riesz_op(&g, 1e9, 1.0, &lap(1), BrVariant::Root, BrMode::Direct, 0.02).unwrap();
        assert!(big.symbol().unwrap().iter().all(|z| (z - ONE).norm() < 1e-8));
        let w = bochner_riesz_op(&g, 3.0, -1.0, &lap(1), BrVariant::Root, BrMode::Direct, 0.5).unwrap();
        // window [1.5, 3] in |xi| holds k = +-2, +-3 and the scale is 1/delta = 2
        let nz: Vec<f64> = w.symbol().unwrap().iter().map(|z| z.re).filter(|v| *v != 0.0).collect();
        assert_eq!(nz, vec![2.0; 4]);
    }

    #[test]
    fn eps_regularisation_converges() {
        for a in [-0.25, -0.5, -0.75] {
            for x in [-0.7, -0.1, 0.2, 0.9] {
                let exact = chi_plus(x, a).unwrap();
                let reg = chi_plus_eps(x, a, 1e-7);
                assert!((exact - reg).abs() < 1e-5 * (1.0 + exact.abs()), "a={a} x={x}");
            }
        }
    }

    #[test]
    fn equivalence_examples() {
        let g = TorusGrid::new(2, 16, 10.0).unwrap();
        let r = equivalence_l_vs_root(&g, 3.0, 1.0, &lap(2), 100).unwrap();
        assert!(r.pass, "{r:?}");
        let p4 = SymbolPoly::norm_power(2, 4).unwrap();
        let r = equivalence_l_vs_root(&g, 1.7, -0.5, &p4, 10_000).unwrap();
        assert!(r.pass && r.samples > 10_000, "{r:?}");
        let r = equivalence_l_vs_root(&g, 1.7, -1.0, &p4, 1000).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn field_dump_roundtrip() {
        let g = TorusGrid::new(2, 4, 1.5).unwrap();
        let f = random_field(&g, 9);
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 16 * 8);
        assert_eq!(&buf[..8], b"SPLBFLD1");
        let back = GridField::read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid, g);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| (a - b).norm() < 1e-6));
    }

    #[test]
    fn gaussian_scaling() {
        let g = TorusGrid::new(1, 1024, 64.0).unwrap();
        let ts: Vec<f64> = (0..8).map(|i| 0.3 * 10f64.powf(i as f64 / 7.0 * 1.2)).collect();
        let reps = generalized_gaussian_check(&g, &lap(1), &[1.0, 2.0], &ts, 0.1, 0).unwrap();
        assert!(reps[0].verdict && (reps[0].slope + 0.5).abs() < 0.1, "{:?}", reps[0]);
        assert!(reps[1].verdict && reps[1].slope.abs() < 1e-12);
        assert!(reps[1].pairs.iter().all(|(_, v)| (v - 1.0).abs() < 1e-15));

        let g2 = TorusGrid::new(2, 256, 64.0).unwrap();
        let ts: Vec<f64> = (0..7).map(|i| 1.0 * 10f64.powf(i as f64 / 6.0 * 1.1)).collect();
        let reps = generalized_gaussian_check(&g2, &SymbolPoly::norm_power(2, 4).unwrap(), &[1.0], &ts, 0.15, 0).unwrap();
        assert!(reps[0].verdict, "{:?}", reps[0]);
        assert!(generalized_gaussian_check(&g2, &lap(2), &[1.0], &[0.1, 1.0], 0.1, 0).is_err());
    }

    #[test]
    fn scaling_covariance_of_lattice() {
        let p = lap(2);
        let a = TorusGrid::new(2, 16, 5.0).unwrap();
        let b = TorusGrid::new(2, 32, 10.0).unwrap();
        let va = a.symbol_values(&p).unwrap();
        let vb = b.symbol_values(&p).unwrap();
        // frequency index k on (N, L) is the same xi as 2k on (2N, 2L)
        for k in 0..a.size() {
            let idx: Vec<i64> = a.multi_index(k).iter().map(|&i| a.signed_index(i)).collect();
            if idx.iter().any(|&i| i == -8) {
                continue;
            }
            let twice: Vec<usize> = idx.iter().map(|&i| (2 * i).rem_euclid(32) as usize).collect();
            let lb = vb[b.flat_index(&twice)];
            assert!((va[k] - lb).abs() < 1e-12 * (1.0 + va[k]));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn homomorphism(seed in 0u64..1000, t in 0.01f64..1.0, r in 1.0f64..40.0) {
            let g = TorusGrid::new(2, 16, 6.0).unwrap();
            let f = random_field(&g, seed);
            let a = MultiplierFn::Heat { t };
            let b = MultiplierFn::BochnerRiesz { r, alpha: 1.5 };
            let ab = MultiplierFn::Product(vec![a.clone(), b.clone()]);
            let lhs = apply_multiplier(&ab, &lap(2), &f).unwrap();
            let rhs = apply_multiplier(&a, &lap(2), &apply_multiplier(&b, &lap(2), &f).unwrap()).unwrap();
            prop_assert!(lhs.values.iter().zip(&rhs.values).all(|(x, y)| (x - y).norm() < 1e-12));
        }

        #[test]
        fn self_adjoint_real_symbol(seed in 0u64..1000, r in 1.0f64..40.0) {
            let g = TorusGrid::new(2, 16, 6.0).unwrap();
            let f = random_field(&g, seed);
            let h = random_field(&g, seed + 7);
            let op = GridOperator::from_multiplier_fn(&g, &MultiplierFn::BochnerRiesz { r, alpha: 0.5 }, &lap(2)).unwrap();
            let w = g.cell_volume();
            let lhs = norms::pairing(&op.apply_vec(&f.values), &h.values, w);
            let rhs = norms::pairing(&f.values, &op.apply_vec(&h.values), w);
            prop_assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn projector_algebra(a in 0.0f64..20.0, gap in 0.0f64..10.0, b in 0.0f64..20.0) {
            let g = TorusGrid::new(2, 16, 6.0).unwrap();
            let f = random_field(&g, 11);
            let w1 = MultiplierFn::SpectralWindow { a, b: a + gap };
            let w2 = MultiplierFn::SpectralWindow { a: a + gap + 1e-9, b: a + gap + b };
            let disjoint = apply_multiplier(&w1, &lap(2), &apply_multiplier(&w2, &lap(2), &f).unwrap()).unwrap();
            prop_assert!(disjoint.l2_samples() < 1e-12);
            let outer = MultiplierFn::SpectralWindow { a: 0.0, b: a + gap + b };
            let nested = apply_multiplier(&outer, &lap(2), &apply_multiplier(&w1, &lap(2), &f).unwrap()).unwrap();
            let direct = apply_multiplier(&w1, &lap(2), &f).unwrap();
            prop_assert!(nested.values.iter().zip(&direct.values).all(|(x, y)| (x - y).norm() < 1e-12));
        }

        #[test]
        fn br_bounded_by_gamma(alpha in 0.0f64..3.0, lam in 0.0f64..2.0) {
            let v = MultiplierFn::BochnerRiesz { r: 1.0, alpha }.eval(lam).unwrap();
            prop_assert!(v.re <= 1.0 / gamma(alpha + 1.0) + 1e-15);
        }
    }
}
