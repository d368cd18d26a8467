//! Exact-rational regions of reciprocal Lebesgue exponents.
//!
//! Every exponent is stored as its reciprocal, so a pair `(1/r, 1/s)` is a
//! point of the unit square and duality `(x, y) -> (1 - y, 1 - x)` is affine.
//! No floating point is used anywhere in this module.

use std::fmt;

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};

pub type Q = BigRational;

/// `num / den` as an exact rational. Panics on a zero denominator.
pub fn rat(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

fn int(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

/// Parses `"6/5"`, `"-1/2"` or `"3"`.
pub fn parse_rational(s: &str) -> Result<Q> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let num: BigInt = num
        .parse()
        .map_err(|_| Error::InvalidParam(format!("malformed rational {s:?}")))?;
    let den: BigInt = den
        .parse()
        .map_err(|_| Error::InvalidParam(format!("malformed rational {s:?}")))?;
    if den.is_zero() {
        return invalid(format!("zero denominator in {s:?}"));
    }
    Ok(Q::new(num, den))
}

/// JSON form `[num, den]`; integers that overflow `i64` are emitted as strings.
pub fn rational_json(v: &Q) -> Value {
    let part = |b: &BigInt| match b.to_i64() {
        Some(i) => json!(i),
        None => json!(b.to_string()),
    };
    json!([part(v.numer()), part(v.denom())])
}

pub fn rational_to_f64(v: &Q) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

fn min_q(a: &Q, b: &Q) -> Q {
    if a < b {
        a.clone()
    } else {
        b.clone()
    }
}

fn max_q(a: &Q, b: &Q) -> Q {
    if a > b {
        a.clone()
    } else {
        b.clone()
    }
}

/// A pair `(1/p, 1/q)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExponentPoint {
    pub inv_p: Q,
    pub inv_q: Q,
}

impl ExponentPoint {
    /// Checked constructor; both coordinates must lie in `[0, 1]`.
    pub fn new(inv_p: Q, inv_q: Q) -> Result<Self> {
        let unit = |v: &Q| !v.is_negative() && *v <= Q::one();
        if !unit(&inv_p) || !unit(&inv_q) {
            return invalid(format!("exponent point ({inv_p}, {inv_q}) outside [0,1]^2"));
        }
        Ok(Self { inv_p, inv_q })
    }

    /// Builds the point from the exponents themselves; `None` stands for infinity.
    pub fn from_exponents(p: Option<&Q>, q: Option<&Q>) -> Result<Self> {
        let recip = |e: Option<&Q>| -> Result<Q> {
            match e {
                None => Ok(Q::zero()),
                Some(e) if *e >= Q::one() => Ok(e.recip()),
                Some(e) => invalid(format!("Lebesgue exponent {e} below 1")),
            }
        };
        Self::new(recip(p)?, recip(q)?)
    }

    /// Unchecked constructor for computed vertices, which may leave the square.
    pub fn raw(inv_p: Q, inv_q: Q) -> Self {
        Self { inv_p, inv_q }
    }

    pub fn dual(&self) -> Self {
        Self {
            inv_p: Q::one() - &self.inv_q,
            inv_q: Q::one() - &self.inv_p,
        }
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (rational_to_f64(&self.inv_p), rational_to_f64(&self.inv_q))
    }

    pub fn to_json(&self) -> Value {
        json!([rational_json(&self.inv_p), rational_json(&self.inv_q)])
    }
}

impl fmt::Display for ExponentPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.inv_p, self.inv_q)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionParams {
    pub n: u32,
    pub m: u32,
    pub alpha: Q,
    pub p: Q,
    pub p0: Q,
}

impl RegionParams {
    pub fn new(n: u32, m: u32, alpha: Q, p: Q, p0: Q) -> Result<Self> {
        if n < 2 {
            return invalid(format!("dimension n = {n} must be at least 2"));
        }
        if m < 2 {
            return invalid(format!("order m = {m} must be at least 2"));
        }
        if alpha < int(-1) {
            return invalid(format!("alpha = {alpha} below -1"));
        }
        if p <= Q::one() || p >= int(2) {
            return invalid(format!("p = {p} outside (1,2)"));
        }
        if p0 < Q::one() || p0 >= p {
            return invalid(format!("p0 = {p0} must satisfy 1 <= p0 < p = {p}"));
        }
        Ok(Self { n, m, alpha, p, p0 })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "n": self.n,
            "m": self.m,
            "alpha": rational_json(&self.alpha),
            "p": rational_json(&self.p),
            "p0": rational_json(&self.p0),
        })
    }
}

/// The eight labelled vertices of the pentagon picture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PentagonVertices {
    pub a: ExponentPoint,
    pub a_dual: ExponentPoint,
    pub b: ExponentPoint,
    pub b_dual: ExponentPoint,
    pub c: ExponentPoint,
    pub c_dual: ExponentPoint,
    pub d: ExponentPoint,
    pub d_dual: ExponentPoint,
}

impl PentagonVertices {
    pub fn labeled(&self) -> Vec<(&'static str, &ExponentPoint)> {
        vec![
            ("A", &self.a),
            ("A'", &self.a_dual),
            ("B(p)", &self.b),
            ("B'(p)", &self.b_dual),
            ("C(p)", &self.c),
            ("C'(p)", &self.c_dual),
            ("D(p)", &self.d),
            ("D'(p)", &self.d_dual),
        ]
    }
}

/// `(n + 1 + 2 alpha) / (2n)`, the common height of A, B(p) and C(p).
fn top_height(n: u32, alpha: &Q) -> Q {
    (int(n as i64 + 1) + alpha * int(2)) / int(2 * n as i64)
}

/// Vertices of the pentagon and its dual companions. Points are returned as
/// computed and may leave the unit square for extreme `alpha`.
pub fn pentagon_vertices(params: &RegionParams) -> Result<PentagonVertices> {
    let RegionParams { n, alpha, p, .. } = params;
    if *alpha < int(-1) {
        return invalid(format!("alpha = {alpha} below -1"));
    }
    if *p <= Q::one() || *p >= int(2) {
        return invalid(format!("p = {p} outside (1,2)"));
    }
    let h = top_height(*n, alpha);
    let shift = alpha - alpha * int(2) / p;
    let half = rat(1, 2);
    let a = ExponentPoint::raw(Q::one(), h.clone());
    let b = ExponentPoint::raw(&h + &shift, h.clone());
    let c = ExponentPoint::raw(p.recip(), h);
    let d = ExponentPoint::raw(&half + &shift, half);
    Ok(PentagonVertices {
        a_dual: a.dual(),
        b_dual: b.dual(),
        c_dual: c.dual(),
        d_dual: d.dual(),
        a,
        b,
        c,
        d,
    })
}

/// `max{1, 2n/(n+1+2 alpha)}`.
pub fn q_alpha(n: u32, alpha: &Q) -> Result<Q> {
    if n < 2 {
        return invalid(format!("dimension n = {n} must be at least 2"));
    }
    let den = int(n as i64 + 1) + alpha * int(2);
    if !den.is_positive() {
        return invalid(format!("alpha = {alpha} <= -(n+1)/2 makes q_alpha undefined"));
    }
    Ok(max_q(&Q::one(), &(int(2 * n as i64) / den)))
}

/// Reciprocal of the case-4 threshold exponent, `1 + alpha - (2 alpha + 1)/p`.
pub fn inv_q_alpha_case4(p: &Q, alpha: &Q) -> Q {
    Q::one() + alpha - (alpha * int(2) + Q::one()) / p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CaseId {
    ThmIII7Case1,
    ThmIII7Case2,
    ThmIII7Case3,
    ThmIII7Case4,
    KrsThm4,
    SobolevLine,
    Thm56,
}

impl CaseId {
    pub fn name(self) -> &'static str {
        match self {
            CaseId::ThmIII7Case1 => "ThmIII_7_case1",
            CaseId::ThmIII7Case2 => "ThmIII_7_case2",
            CaseId::ThmIII7Case3 => "ThmIII_7_case3",
            CaseId::ThmIII7Case4 => "ThmIII_7_case4",
            CaseId::KrsThm4 => "KRS_Thm4",
            CaseId::SobolevLine => "Sobolev_line",
            CaseId::Thm56 => "Thm5_6",
        }
    }

    /// Case number 1..=4 of the negative-order estimate.
    pub fn from_case_number(k: u32) -> Result<Self> {
        match k {
            1 => Ok(CaseId::ThmIII7Case1),
            2 => Ok(CaseId::ThmIII7Case2),
            3 => Ok(CaseId::ThmIII7Case3),
            4 => Ok(CaseId::ThmIII7Case4),
            _ => invalid(format!("case {k} is not one of 1..4")),
        }
    }

    fn case_number(self) -> Option<u32> {
        match self {
            CaseId::ThmIII7Case1 => Some(1),
            CaseId::ThmIII7Case2 => Some(2),
            CaseId::ThmIII7Case3 => Some(3),
            CaseId::ThmIII7Case4 => Some(4),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        }
    }

    fn test(self, lhs: &Q, rhs: &Q) -> bool {
        match self {
            Op::Lt => lhs < rhs,
            Op::Le => lhs <= rhs,
            Op::Gt => lhs > rhs,
            Op::Ge => lhs >= rhs,
        }
    }
}

/// `a * (1/r) + b * (1/s) op c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub a: Q,
    pub b: Q,
    pub c: Q,
    pub op: Op,
    pub label: String,
}

impl Constraint {
    pub fn new(a: Q, b: Q, op: Op, c: Q, label: impl Into<String>) -> Self {
        Self { a, b, c, op, label: label.into() }
    }

    pub fn holds(&self, x: &ExponentPoint) -> bool {
        let lhs = &self.a * &x.inv_p + &self.b * &x.inv_q;
        self.op.test(&lhs, &self.c)
    }

    /// Signed slack `c - (a x + b y)` normalised so that the closed half-plane is slack >= 0.
    fn slack(&self, x: &Q, y: &Q) -> Q {
        let v = &self.c - (&self.a * x + &self.b * y);
        match self.op {
            Op::Lt | Op::Le => v,
            Op::Gt | Op::Ge => -v,
        }
    }

    /// The constraint satisfied by `dual(x)` exactly when `x` satisfies `self`.
    pub fn dual(&self) -> Self {
        // a(1 - y) + b(1 - x) op c  <=>  -b x - a y op c - a - b
        Self {
            a: -self.b.clone(),
            b: -self.a.clone(),
            c: &self.c - &self.a - &self.b,
            op: self.op,
            label: format!("dual of [{}]", self.label),
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "a": rational_json(&self.a),
            "b": rational_json(&self.b),
            "c": rational_json(&self.c),
            "op": self.op.symbol(),
            "label": self.label,
        })
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}*(1/r) + {}*(1/s) {} {}  [{}]",
            self.a,
            self.b,
            self.op.symbol(),
            self.c,
            self.label
        )
    }
}

/// A convex region of the square cut out by exact affine constraints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub case_id: CaseId,
    pub n: u32,
    pub m: u32,
    pub alpha: Q,
    /// Present for the negative-order cases.
    pub params: Option<RegionParams>,
    pub constraints: Vec<Constraint>,
}

impl Region {
    pub fn contains(&self, x: &ExponentPoint) -> bool {
        self.constraints.iter().all(|c| c.holds(x))
    }

    /// Constraints violated by `x`, for diagnostics.
    pub fn violated(&self, x: &ExponentPoint) -> Vec<&Constraint> {
        self.constraints.iter().filter(|c| !c.holds(x)).collect()
    }

    pub fn dual(&self) -> Self {
        Self {
            constraints: self.constraints.iter().map(Constraint::dual).collect(),
            ..self.clone()
        }
    }

    /// Vertices of the closure, counter-clockwise, clipped to the unit square.
    /// Empty when the closure is empty; may be degenerate (segment or point).
    pub fn polygon(&self) -> Vec<ExponentPoint> {
        let mut poly = vec![
            (Q::zero(), Q::zero()),
            (Q::one(), Q::zero()),
            (Q::one(), Q::one()),
            (Q::zero(), Q::one()),
        ];
        for c in &self.constraints {
            poly = clip(&poly, c);
            if poly.is_empty() {
                break;
            }
        }
        let mut out: Vec<ExponentPoint> = Vec::with_capacity(poly.len());
        for (x, y) in poly {
            let pt = ExponentPoint::raw(x, y);
            if out.last() != Some(&pt) {
                out.push(pt);
            }
        }
        while out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "case": self.case_id.name(),
            "params": match &self.params {
                Some(p) => p.to_json(),
                None => json!({"n": self.n, "m": self.m, "alpha": rational_json(&self.alpha)}),
            },
            "vertices": self.polygon().iter().map(ExponentPoint::to_json).collect::<Vec<_>>(),
            "constraints": self.constraints.iter().map(Constraint::to_json).collect::<Vec<_>>(),
        });
        if let Some(p) = &self.params {
            if let Ok(pv) = pentagon_vertices(p) {
                let labeled: Vec<Value> = pv
                    .labeled()
                    .into_iter()
                    .map(|(l, pt)| json!({"label": l, "point": pt.to_json()}))
                    .collect();
                v["pentagon"] = Value::Array(labeled);
            }
        }
        v
    }
}

/// One Sutherland-Hodgman pass against the closed half-plane of `c`.
fn clip(poly: &[(Q, Q)], c: &Constraint) -> Vec<(Q, Q)> {
    let mut out = Vec::new();
    let k = poly.len();
    for i in 0..k {
        let (px, py) = &poly[i];
        let (qx, qy) = &poly[(i + 1) % k];
        let sp = c.slack(px, py);
        let sq = c.slack(qx, qy);
        let p_in = !sp.is_negative();
        let q_in = !sq.is_negative();
        if p_in {
            out.push((px.clone(), py.clone()));
        }
        if p_in != q_in && !(sp.is_zero() || sq.is_zero()) {
            let t = &sp / (&sp - &sq);
            out.push((px + &t * (qx - px), py + &t * (qy - py)));
        }
    }
    out
}

fn square_constraints(open: bool) -> Vec<Constraint> {
    let (lo, hi) = if open { (Op::Gt, Op::Lt) } else { (Op::Ge, Op::Le) };
    vec![
        Constraint::new(Q::one(), Q::zero(), lo, Q::zero(), "1/r in square (lower)"),
        Constraint::new(Q::one(), Q::zero(), hi, Q::one(), "1/r in square (upper)"),
        Constraint::new(Q::zero(), Q::one(), lo, Q::zero(), "1/s in square (lower)"),
        Constraint::new(Q::zero(), Q::one(), hi, Q::one(), "1/s in square (upper)"),
    ]
}

/// `y < line(x)` for the line through `p1` and `p2`.
fn strictly_below(p1: &ExponentPoint, p2: &ExponentPoint, label: &str) -> Result<Constraint> {
    let (p1, p2) = if p1.inv_p <= p2.inv_p { (p1, p2) } else { (p2, p1) };
    let dx = &p2.inv_p - &p1.inv_p;
    if dx.is_zero() {
        return Err(Error::Numerical(format!("cut line {label} is vertical")));
    }
    let dy = &p2.inv_q - &p1.inv_q;
    let c = &p1.inv_q * &dx - &dy * &p1.inv_p;
    Ok(Constraint::new(-dy, dx, Op::Lt, c, label))
}

fn pentagon_constraints(params: &RegionParams) -> Vec<Constraint> {
    let n = params.n as i64;
    let alpha = &params.alpha;
    let k = (alpha * int(2) + Q::one()) / int(2 * n);
    let half = rat(1, 2);
    vec![
        Constraint::new(Q::one(), Q::zero(), Op::Gt, &half - &k, "pentagon: 1/r - 1/2 > -(2a+1)/(2n)"),
        Constraint::new(Q::zero(), Q::one(), Op::Lt, &half + &k, "pentagon: 1/2 - 1/s > -(2a+1)/(2n)"),
        Constraint::new(
            Q::one(),
            -Q::one(),
            Op::Gt,
            alpha - alpha * int(2) / &params.p,
            "pentagon: 1/r - 1/s > a - 2a/p",
        ),
    ]
}

/// The valid case number for `alpha` at the given `p` and `n`.
pub fn case_for(params: &RegionParams) -> Option<u32> {
    let alpha = &params.alpha;
    let t = int(params.n as i64) * (params.p.recip() - rat(1, 2)) - rat(1, 2);
    if *alpha > t {
        Some(1)
    } else if alpha.is_positive() {
        Some(2)
    } else if *alpha > rat(-1, 2) {
        Some(3)
    } else if *alpha > int(-1) {
        Some(4)
    } else {
        None
    }
}

/// Region of `(1/r, 1/s)` for which the negative-order Bochner-Riesz bound is predicted.
pub fn thm37_region(params: &RegionParams, case_id: CaseId) -> Result<Region> {
    let Some(case) = case_id.case_number() else {
        return invalid(format!("{} is not a negative-order case", case_id.name()));
    };
    if case_for(params) != Some(case) {
        let valid = match case_for(params) {
            Some(k) => format!("alpha = {} belongs to case {k}", params.alpha),
            None => format!("alpha = {} belongs to no case", params.alpha),
        };
        return invalid(format!("case {case} not applicable: {valid}"));
    }
    let mut cons = square_constraints(true);
    cons.push(Constraint::new(-Q::one(), Q::one(), Op::Le, Q::zero(), "r <= s"));
    cons.push(Constraint::new(Q::one(), Q::zero(), Op::Lt, params.p0.recip(), "p0 < r"));
    cons.push(Constraint::new(
        Q::zero(),
        Q::one(),
        Op::Gt,
        Q::one() - params.p0.recip(),
        "s < p0'",
    ));
    let pv = pentagon_vertices(params)?;
    let center = ExponentPoint::raw(rat(1, 2), rat(1, 2));
    match case {
        1 => {
            let inv = q_alpha(params.n, &params.alpha)?.recip();
            cons.push(Constraint::new(Q::one(), Q::zero(), Op::Gt, Q::one() - &inv, "r < q_alpha'"));
            cons.push(Constraint::new(Q::zero(), Q::one(), Op::Lt, inv, "q_alpha < s"));
        }
        2 => {
            cons.extend(pentagon_constraints(params));
            cons.push(strictly_below(&center, &pv.c, "below (1/2,1/2)-C(p)")?);
            cons.push(strictly_below(&center, &pv.c_dual, "below (1/2,1/2)-C'(p)")?);
        }
        3 => {
            cons.extend(pentagon_constraints(params));
            cons.push(strictly_below(&pv.d, &pv.c, "below D(p)-C(p)")?);
            if pv.d != pv.d_dual {
                cons.push(strictly_below(&pv.d, &pv.d_dual, "below D(p)-D'(p)")?);
            }
            cons.push(strictly_below(&pv.d_dual, &pv.c_dual, "below D'(p)-C'(p)")?);
        }
        _ => {
            let alpha = &params.alpha;
            let inv = inv_q_alpha_case4(&params.p, alpha);
            cons.push(Constraint::new(
                Q::one(),
                -Q::one(),
                Op::Gt,
                alpha - alpha * int(2) / &params.p,
                "1/r - 1/s > a - 2a/p",
            ));
            cons.push(Constraint::new(Q::one(), Q::zero(), Op::Gt, Q::one() - &inv, "r < q_alpha'"));
            cons.push(Constraint::new(Q::zero(), Q::one(), Op::Lt, inv, "q_alpha < s"));
        }
    }
    Ok(Region {
        case_id,
        n: params.n,
        m: params.m,
        alpha: params.alpha.clone(),
        params: Some(params.clone()),
        constraints: cons,
    })
}

/// Convex combination `theta * node1 + (1 - theta) * node2` of order and exponents.
pub fn stein_interpolate(
    node1: (&Q, &ExponentPoint),
    node2: (&Q, &ExponentPoint),
    theta: &Q,
) -> Result<(Q, ExponentPoint)> {
    if !theta.is_positive() || *theta >= Q::one() {
        return invalid(format!("theta = {theta} outside (0,1)"));
    }
    ExponentPoint::new(node1.1.inv_p.clone(), node1.1.inv_q.clone())?;
    ExponentPoint::new(node2.1.inv_p.clone(), node2.1.inv_q.clone())?;
    let s = Q::one() - theta;
    let delta = theta * node1.0 + &s * node2.0;
    let pt = ExponentPoint::raw(
        theta * &node1.1.inv_p + &s * &node2.1.inv_p,
        theta * &node1.1.inv_q + &s * &node2.1.inv_q,
    );
    Ok((delta, pt))
}

fn check_krs_alpha(n: u32, m: u32, alpha: &Q) -> Result<()> {
    if n < 2 || m < 2 {
        return invalid(format!("need n >= 2 and m >= 2, got n = {n}, m = {m}"));
    }
    let ok = if n == 2 {
        alpha.is_positive() && *alpha < rat(3, 2)
    } else {
        *alpha >= rat(1, 2) && *alpha < rat(n as i64 + 1, 2)
    };
    if !ok {
        let window = if n == 2 { "(0, 3/2)".to_string() } else { format!("[1/2, {}/2)", n + 1) };
        return invalid(format!("alpha = {alpha} outside {window} for n = {n}"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KrsVerdict {
    pub admissible: bool,
    pub reason: String,
    /// Whether the estimate is predicted for the full resolvent as well.
    pub full_resolvent: bool,
}

/// Admissibility of `(1/p, 1/q)` for fractional resolvent bounds of order `alpha`.
pub fn krs_admissible(n: u32, m: u32, point: &ExponentPoint, alpha: &Q) -> Result<KrsVerdict> {
    check_krs_alpha(n, m, alpha)?;
    let half = rat(1, 2);
    let gap = min_q(&(&point.inv_p - &half), &(&half - &point.inv_q));
    let need_gap = (alpha * int(2) - Q::one()) / int(2 * n as i64);
    let diff = &point.inv_p - &point.inv_q;
    let need_diff = alpha * int(2) / int(n as i64 + 1);
    let mut reasons = Vec::new();
    if gap <= need_gap {
        reasons.push(format!(
            "min(1/p-1/2, 1/2-1/q) = {gap} is not > (2a-1)/(2n) = {need_gap}"
        ));
    }
    if diff <= need_diff {
        reasons.push(format!("1/p-1/q = {diff} is not > 2a/(n+1) = {need_diff}"));
    }
    let admissible = reasons.is_empty();
    let full_resolvent = admissible && {
        let ma = alpha * int(m as i64);
        if ma > int(n as i64) {
            true
        } else {
            diff <= ma / int(n as i64) && point.inv_p != Q::one() && !point.inv_q.is_zero()
        }
    };
    let reason = if admissible {
        format!("admissible: gap {gap} > {need_gap}, 1/p-1/q = {diff} > {need_diff}")
    } else {
        reasons.join("; ")
    };
    Ok(KrsVerdict { admissible, reason, full_resolvent })
}

/// The admissible set of [`krs_admissible`] as a region.
pub fn krs_region(n: u32, m: u32, alpha: &Q) -> Result<Region> {
    check_krs_alpha(n, m, alpha)?;
    let half = rat(1, 2);
    let g = (alpha * int(2) - Q::one()) / int(2 * n as i64);
    let mut cons = square_constraints(false);
    cons.push(Constraint::new(Q::one(), Q::zero(), Op::Gt, &half + &g, "1/p - 1/2 > (2a-1)/(2n)"));
    cons.push(Constraint::new(Q::zero(), Q::one(), Op::Lt, &half - &g, "1/2 - 1/q > (2a-1)/(2n)"));
    cons.push(Constraint::new(
        Q::one(),
        -Q::one(),
        Op::Gt,
        alpha * int(2) / int(n as i64 + 1),
        "1/p - 1/q > 2a/(n+1)",
    ));
    Ok(Region {
        case_id: CaseId::KrsThm4,
        n,
        m,
        alpha: alpha.clone(),
        params: None,
        constraints: cons,
    })
}

/// The closed segment `1/p - 1/q = m/n` inside the order-one admissible set.
pub fn sobolev_line_region(n: u32, m: u32) -> Result<Region> {
    let mut r = krs_region(n, m, &Q::one())?;
    let gap = rat(m as i64, n as i64);
    r.case_id = CaseId::SobolevLine;
    r.constraints.push(Constraint::new(Q::one(), -Q::one(), Op::Ge, gap.clone(), "1/p - 1/q >= m/n"));
    r.constraints.push(Constraint::new(Q::one(), -Q::one(), Op::Le, gap, "1/p - 1/q <= m/n"));
    Ok(r)
}

/// Predicted exponent `(n/m)(1/p - 1/q) - 1` of the resolvent norm in `|z|`.
pub fn sobolev_exponent(n: u32, m: u32, point: &ExponentPoint) -> Q {
    rat(n as i64, m as i64) * (&point.inv_p - &point.inv_q) - Q::one()
}

/// Half-open interval `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfOpen {
    pub lo: Q,
    pub hi: Q,
}

/// Range of `p` for the perturbed restriction estimate.
pub fn thm56_range(n: u32, m: u32) -> Result<HalfOpen> {
    if m < 2 || n <= m {
        return invalid(format!("need n > m >= 2, got n = {n}, m = {m}"));
    }
    let a = rat(2 * (n as i64 + 1), n as i64 + 3);
    let b = rat(n as i64, m as i64);
    Ok(HalfOpen { lo: Q::one(), hi: min_q(&a, &b) })
}

/// The pairs `(1/p, 1/p')` with `p` in [`thm56_range`].
pub fn thm56_region(n: u32, m: u32) -> Result<Region> {
    let range = thm56_range(n, m)?;
    let mut cons = square_constraints(false);
    cons.push(Constraint::new(Q::one(), Q::one(), Op::Ge, Q::one(), "q = p' (lower)"));
    cons.push(Constraint::new(Q::one(), Q::one(), Op::Le, Q::one(), "q = p' (upper)"));
    cons.push(Constraint::new(Q::one(), Q::zero(), Op::Gt, range.hi.recip(), "p < p_max"));
    Ok(Region {
        case_id: CaseId::Thm56,
        n,
        m,
        alpha: Q::zero(),
        params: None,
        constraints: cons,
    })
}

/// Closed interval of `q` reached from a restriction estimate at `p0` when the
/// resolvent-power hypothesis holds at `p`.
pub fn restriction_bootstrap(p0: &Q, p: &Q, resolvent_power_ok: bool) -> Result<(Q, Q)> {
    if *p < Q::one() || *p0 >= int(2) {
        return invalid(format!("need 1 <= p <= p0 < 2, got p = {p}, p0 = {p0}"));
    }
    if p > p0 {
        return invalid(format!("p = {p} exceeds p0 = {p0}"));
    }
    if !resolvent_power_ok {
        return Err(Error::Refused(
            "resolvent-power hypothesis unavailable; no range predicted".into(),
        ));
    }
    Ok((p.clone(), p0.clone()))
}
