//! Pointwise convex analysis for the integrand catalog.
//!
//! Every catalog integrand has the form `f(x, y) = φₓ(|Ay|)` with a convex,
//! non-decreasing radial profile `φₓ` on `[0, ∞)`, so conjugates, proximal
//! maps and recession functions all reduce to one-dimensional problems in
//! the radius `|Ay|`. Arguments are projected by `A` before use; in
//! particular [`Integrand::conjugate`] evaluates `f*(x, Az)` (the true
//! conjugate is `+∞` off the range of `A`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::cantor::FatCantor;
use crate::error::{invalid, Error, Result};
use crate::linalg::{norm, Projection};

/// Physical coordinates of a point; the second entry is ignored in 1D.
pub type Point = [f64; 2];

/// Relative slack used when testing `|z| ≤ radius`.
pub const DOMAIN_TOL: f64 = 1e-12;

const ITER_CAP: usize = 200;
const SUP_GAIN_TOL: f64 = 1e-10;
const RECESSION_TOL: f64 = 1e-13;

/// Value of a Legendre transform; infinite exactly off its domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjugateValue {
    Finite(f64),
    Infinite,
}

impl ConjugateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, ConjugateValue::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            ConjugateValue::Finite(v) => Some(v),
            ConjugateValue::Infinite => None,
        }
    }

    fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            ConjugateValue::Finite(v) => ConjugateValue::Finite(f(v)),
            ConjugateValue::Infinite => ConjugateValue::Infinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjugateMode {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrandKind {
    /// `|Ay|`
    Euclid,
    /// `√(1 + |Ay|²)`
    Area,
    /// `a(x)|Ay|` with `a(x) = 1 + amp·sin²(π·freq·x₁)`.
    XWeight { amp: f64, freq: f64 },
    /// `2|Ay|` on a fat-Cantor set `K`, `|Ay|` off it (depends on `x₁`).
    KWeight { set: Arc<FatCantor>, auto_level: bool },
    /// `f(x, y)^q`
    QPower { base: Box<IntegrandKind>, q: f64 },
    /// Moreau–Yosida envelope of the base with parameter `lambda`.
    Moreau { base: Box<IntegrandKind>, lambda: f64 },
    /// Base plus `amp·(1 + cos(2π·freq·x₁))/2`, a bounded `y`-independent shift.
    Perturbed { base: Box<IntegrandKind>, amp: f64, freq: f64 },
}

fn xweight(amp: f64, freq: f64, x1: f64) -> f64 {
    let s = (PI * freq * x1).sin();
    1.0 + amp * s * s
}

fn perturbation(amp: f64, freq: f64, x1: f64) -> f64 {
    amp * 0.5 * (1.0 + (2.0 * PI * freq * x1).cos())
}

/// Mean of `cos(2π·freq·x)` over `[a, b]`.
fn mean_cos(freq: f64, a: f64, b: f64) -> f64 {
    if b - a <= 0.0 || freq == 0.0 {
        return (2.0 * PI * freq * a).cos();
    }
    let w = 2.0 * PI * freq;
    ((w * b).sin() - (w * a).sin()) / (w * (b - a))
}

/// Root of a non-decreasing function on `[lo, hi]` with `g(lo) < 0 ≤ g(hi)`
/// by the Illinois variant of regula falsi, falling back to bisection.
fn monotone_root(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut glo = g(lo);
    let mut ghi = g(hi);
    if ghi <= 0.0 {
        return hi;
    }
    let mut side = 0i8;
    for it in 0..ITER_CAP {
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
        let mut mid = if it % 4 == 3 {
            0.5 * (lo + hi)
        } else {
            (lo * ghi - hi * glo) / (ghi - glo)
        };
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm < 0.0 {
            lo = mid;
            glo = gm;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            ghi = gm;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `c·ρ^{q−1} + (ρ − r)/λ` on `[0, r]`: the prox of `(a·ρ)^q` with
/// `c = q·a^q`. In `t = ρ^{q−1}` the equation `c·t + (t^p − r)/λ = 0`,
/// `p = 1/(q−1)`, is convex and increasing, so Newton from an upper bound
/// decreases monotonically onto the root.
fn qpower_prox(c: f64, q: f64, lambda: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let p = 1.0 / (q - 1.0);
    let mut t = r.powf(q - 1.0).min(r / (lambda * c));
    for _ in 0..ITER_CAP {
        let tp = t.powf(p);
        let g = c * t + (tp - r) / lambda;
        if g <= 0.0 || t <= 0.0 {
            break;
        }
        let dg = c + p * tp / (t * lambda);
        let next = t - g / dg;
        if !(next < t) {
            break;
        }
        let done = t - next <= 4.0 * f64::EPSILON * t;
        t = next.max(0.0);
        if done {
            break;
        }
    }
    t.powf(p).clamp(0.0, r)
}

impl IntegrandKind {
    /// Weight `a` when the profile is `a·r`.
    fn norm_weight(&self, x: Point) -> Option<f64> {
        match self {
            IntegrandKind::Euclid => Some(1.0),
            IntegrandKind::XWeight { amp, freq } => Some(xweight(*amp, *freq, x[0])),
            IntegrandKind::KWeight { set, .. } => Some(if set.contains(x[0]) { 2.0 } else { 1.0 }),
            _ => None,
        }
    }

    fn superlinear(&self) -> bool {
        match self {
            IntegrandKind::QPower { .. } => true,
            IntegrandKind::Moreau { base, .. } | IntegrandKind::Perturbed { base, .. } => {
                base.superlinear()
            }
            _ => false,
        }
    }

    /// Radial profile `φₓ(r)`, `r ≥ 0`.
    pub fn phi(&self, x: Point, r: f64) -> f64 {
        if let Some(a) = self.norm_weight(x) {
            return a * r;
        }
        match self {
            IntegrandKind::Area => (1.0 + r * r).sqrt(),
            IntegrandKind::QPower { base, q } => base.phi(x, r).powf(*q),
            IntegrandKind::Moreau { base, lambda } => {
                let p = base.prox(x, *lambda, r);
                base.phi(x, p) + (p - r) * (p - r) / (2.0 * lambda)
            }
            IntegrandKind::Perturbed { base, amp, freq } => {
                base.phi(x, r) + perturbation(*amp, *freq, x[0])
            }
            _ => unreachable!(),
        }
    }

    /// Right derivative `φₓ'(r)`.
    pub fn dphi(&self, x: Point, r: f64) -> f64 {
        if let Some(a) = self.norm_weight(x) {
            return a;
        }
        match self {
            IntegrandKind::Area => r / (1.0 + r * r).sqrt(),
            IntegrandKind::QPower { base, q } => {
                q * base.phi(x, r).powf(q - 1.0) * base.dphi(x, r)
            }
            IntegrandKind::Moreau { base, lambda } => (r - base.prox(x, *lambda, r)) / lambda,
            IntegrandKind::Perturbed { base, .. } => base.dphi(x, r),
            _ => unreachable!(),
        }
    }

    /// `argmin_{ρ ≥ 0} φₓ(ρ) + (ρ − r)²/(2λ)`.
    pub fn prox(&self, x: Point, lambda: f64, r: f64) -> f64 {
        if let Some(a) = self.norm_weight(x) {
            return (r - lambda * a).max(0.0);
        }
        match self {
            IntegrandKind::Moreau { base, lambda: mu } => {
                let p = base.prox(x, lambda + mu, r);
                r + lambda / (lambda + mu) * (p - r)
            }
            IntegrandKind::Perturbed { base, .. } => base.prox(x, lambda, r),
            IntegrandKind::QPower { base, q } if base.norm_weight(x).is_some() => {
                let c = q * base.norm_weight(x).unwrap().powf(*q);
                qpower_prox(c, *q, lambda, r)
            }
            _ => {
                let g = |rho: f64| self.dphi(x, rho) + (rho - r) / lambda;
                if r <= 0.0 || g(0.0) >= 0.0 {
                    0.0
                } else {
                    monotone_root(g, 0.0, r)
                }
            }
        }
    }

    /// `lim φₓ(t)/t` by doubling `t`; `+∞` for superlinear profiles.
    pub fn recession_slope(&self, x: Point) -> Result<f64> {
        if self.superlinear() {
            return Ok(f64::INFINITY);
        }
        let mut t = 1.0;
        let mut prev = self.phi(x, t) / t;
        for _ in 0..ITER_CAP {
            t *= 2.0;
            let cur = self.phi(x, t) / t;
            if (cur - prev).abs() <= RECESSION_TOL * (1.0 + cur.abs()) {
                return Ok(cur);
            }
            prev = cur;
        }
        Err(Error::NonConvergence { what: "recession t-doubling", iterations: ITER_CAP })
    }

    /// Monotone conjugate `sup_{r≥0} s·r − φₓ(r)`, closed form where the
    /// catalog provides one.
    pub fn conj(&self, x: Point, s: f64) -> Result<ConjugateValue> {
        if let Some(a) = self.norm_weight(x) {
            return Ok(if s <= a * (1.0 + DOMAIN_TOL) {
                ConjugateValue::Finite(0.0)
            } else {
                ConjugateValue::Infinite
            });
        }
        match self {
            IntegrandKind::Area => Ok(if s <= 1.0 + DOMAIN_TOL {
                ConjugateValue::Finite(-(1.0 - s * s).max(0.0).sqrt())
            } else {
                ConjugateValue::Infinite
            }),
            IntegrandKind::QPower { base, q } => match base.norm_weight(x) {
                Some(a) => {
                    let aq = a.powf(*q);
                    let r = (s / (q * aq)).powf(1.0 / (q - 1.0));
                    Ok(ConjugateValue::Finite(s * r * (1.0 - 1.0 / q)))
                }
                None => self.conj_numeric(x, s),
            },
            IntegrandKind::Moreau { base, lambda } => {
                Ok(base.conj(x, s)?.map(|v| v + 0.5 * lambda * s * s))
            }
            IntegrandKind::Perturbed { base, amp, freq } => {
                let b = perturbation(*amp, *freq, x[0]);
                Ok(base.conj(x, s)?.map(|v| v - b))
            }
            _ => unreachable!(),
        }
    }

    /// Numeric monotone conjugate: maximize the concave map `r ↦ s·r − φₓ(r)`
    /// over `[0, R]`, doubling `R` until the gain stalls.
    pub fn conj_numeric(&self, x: Point, s: f64) -> Result<ConjugateValue> {
        let slope = self.recession_slope(x)?;
        if s > slope * (1.0 + DOMAIN_TOL) {
            return Ok(ConjugateValue::Infinite);
        }
        let value = |r: f64| s * r - self.phi(x, r);
        if self.dphi(x, 0.0) >= s {
            return Ok(ConjugateValue::Finite(value(0.0)));
        }
        let mut radius = 1.0;
        let mut prev = value(0.0);
        for _ in 0..ITER_CAP {
            if self.dphi(x, radius) >= s {
                let r = monotone_root(|r| self.dphi(x, r) - s, 0.0, radius);
                return Ok(ConjugateValue::Finite(value(r)));
            }
            let cur = value(radius);
            if cur - prev < SUP_GAIN_TOL && radius > 1.0 {
                return Ok(ConjugateValue::Finite(cur));
            }
            prev = cur;
            radius *= 2.0;
        }
        Err(Error::NonConvergence { what: "numeric conjugate", iterations: ITER_CAP })
    }

    fn mode(&self) -> ConjugateMode {
        match self {
            IntegrandKind::QPower { base, .. } if base.norm_weight([0.0; 2]).is_none() => {
                ConjugateMode::Numeric
            }
            IntegrandKind::Moreau { base, .. } | IntegrandKind::Perturbed { base, .. } => base.mode(),
            _ => ConjugateMode::ClosedForm,
        }
    }

    fn x_independent(&self) -> bool {
        match self {
            IntegrandKind::Euclid | IntegrandKind::Area => true,
            IntegrandKind::XWeight { amp, .. } => *amp == 0.0,
            IntegrandKind::KWeight { .. } => false,
            IntegrandKind::QPower { base, .. } | IntegrandKind::Moreau { base, .. } => {
                base.x_independent()
            }
            IntegrandKind::Perturbed { base, amp, .. } => *amp == 0.0 && base.x_independent(),
        }
    }

    fn growth(&self) -> Option<(f64, f64)> {
        match self {
            IntegrandKind::Euclid | IntegrandKind::Area => Some((1.0, 1.0)),
            IntegrandKind::XWeight { amp, .. } => Some((1.0, 1.0 + amp)),
            IntegrandKind::KWeight { .. } => Some((1.0, 2.0)),
            IntegrandKind::Perturbed { base, amp, .. } => {
                base.growth().map(|(c0, big)| (c0, big + amp))
            }
            IntegrandKind::QPower { .. } | IntegrandKind::Moreau { .. } => None,
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            IntegrandKind::Moreau { base, .. } => base.lipschitz(),
            IntegrandKind::QPower { .. } => f64::INFINITY,
            _ => self.growth().map(|g| g.1).unwrap_or(f64::INFINITY),
        }
    }

    fn rebind(&self, cells: usize) -> IntegrandKind {
        match self {
            IntegrandKind::KWeight { set, auto_level: true } => IntegrandKind::KWeight {
                set: Arc::new(FatCantor::new(set.seed(), FatCantor::level_for_cells(cells))),
                auto_level: true,
            },
            IntegrandKind::QPower { base, q } => {
                IntegrandKind::QPower { base: Box::new(base.rebind(cells)), q: *q }
            }
            IntegrandKind::Moreau { base, lambda } => {
                IntegrandKind::Moreau { base: Box::new(base.rebind(cells)), lambda: *lambda }
            }
            IntegrandKind::Perturbed { base, amp, freq } => IntegrandKind::Perturbed {
                base: Box::new(base.rebind(cells)),
                amp: *amp,
                freq: *freq,
            },
            other => other.clone(),
        }
    }

    /// Per-cell data on `[x1lo, x1hi]` (the catalog only varies along `x₁`).
    fn cell(&self, x1lo: f64, x1hi: f64) -> Option<(f64, f64, f64)> {
        // (mean weight, essential-infimum weight, mean shift) for norm types
        let len = x1hi - x1lo;
        match self {
            IntegrandKind::Euclid => Some((1.0, 1.0, 0.0)),
            IntegrandKind::XWeight { amp, freq } => {
                let mean_sin2 = 0.5 * (1.0 - mean_cos(*freq, x1lo, x1hi));
                let mean = 1.0 + amp * mean_sin2;
                let hits_zero = *freq == 0.0 || {
                    let k = (x1lo * freq).ceil();
                    k / freq <= x1hi
                };
                let ess_inf = if hits_zero {
                    1.0
                } else {
                    xweight(*amp, *freq, x1lo).min(xweight(*amp, *freq, x1hi))
                };
                Some((mean, ess_inf, 0.0))
            }
            IntegrandKind::KWeight { set, .. } => {
                let theta = if len > 0.0 { set.measure_in(x1lo, x1hi) / len } else { 0.0 };
                let ess_inf = if set.covers(x1lo, x1hi) { 2.0 } else { 1.0 };
                Some((1.0 + theta, ess_inf, 0.0))
            }
            IntegrandKind::Perturbed { base, amp, freq } => base.cell(x1lo, x1hi).map(|(m, e, s)| {
                (m, e, s + amp * 0.5 * (1.0 + mean_cos(*freq, x1lo, x1hi)))
            }),
            _ => None,
        }
    }

    fn write_id(&self, out: &mut String) {
        match self {
            IntegrandKind::Euclid => out.push_str("euclid"),
            IntegrandKind::Area => out.push_str("area"),
            IntegrandKind::XWeight { amp, freq } => {
                out.push_str(&format!("xweight(amp={amp},freq={freq})"))
            }
            IntegrandKind::KWeight { set, auto_level } => {
                if *auto_level {
                    out.push_str(&format!("kweight(seed={})", set.seed()))
                } else {
                    out.push_str(&format!("kweight(seed={},level={})", set.seed(), set.level()))
                }
            }
            IntegrandKind::QPower { base, q } => {
                out.push_str("qpow(");
                base.write_id(out);
                out.push_str(&format!(",{q})"));
            }
            IntegrandKind::Moreau { base, lambda } => {
                out.push_str("moreau(");
                base.write_id(out);
                out.push_str(&format!(",{lambda})"));
            }
            IntegrandKind::Perturbed { base, amp, freq } => {
                out.push_str("perturbed(");
                base.write_id(out);
                out.push_str(&format!(",amp={amp},freq={freq})"));
            }
        }
    }
}

/// A catalog integrand `f(x, y) = φₓ(|Ay|)` together with its projection `A`
/// (identity when unset).
#[derive(Debug, Clone, PartialEq)]
pub struct Integrand {
    kind: IntegrandKind,
    proj: Option<Projection>,
}

impl fmt::Display for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl Integrand {
    pub fn new(kind: IntegrandKind) -> Self {
        Integrand { kind, proj: None }
    }

    pub fn euclid() -> Self {
        Self::new(IntegrandKind::Euclid)
    }

    pub fn area() -> Self {
        Self::new(IntegrandKind::Area)
    }

    pub fn xweight(amp: f64, freq: f64) -> Result<Self> {
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(invalid("amp", "must be a finite non-negative number"));
        }
        Ok(Self::new(IntegrandKind::XWeight { amp, freq }))
    }

    /// `kweight` on the fat-Cantor set for `seed`; `level = None` picks the
    /// depth from the grid when bound via [`Integrand::for_cells`].
    pub fn kweight(seed: u64, level: Option<u32>) -> Self {
        let auto_level = level.is_none();
        let set = Arc::new(FatCantor::new(seed, level.unwrap_or(16)));
        Self::new(IntegrandKind::KWeight { set, auto_level })
    }

    pub fn perturbed(base: Integrand, amp: f64, freq: f64) -> Result<Self> {
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(invalid("amp", "must be a finite non-negative number"));
        }
        Ok(Integrand {
            kind: IntegrandKind::Perturbed { base: Box::new(base.kind), amp, freq },
            proj: base.proj,
        })
    }

    /// `f^q` for `q ∈ (1, 2]`.
    pub fn qpower(&self, q: f64) -> Result<Self> {
        if !(q > 1.0 && q <= 2.0) {
            return Err(invalid("q", format!("{q} is outside (1, 2]")));
        }
        Ok(Integrand {
            kind: IntegrandKind::QPower { base: Box::new(self.kind.clone()), q },
            proj: self.proj.clone(),
        })
    }

    /// Moreau–Yosida envelope `f_λ`.
    pub fn moreau_of(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", "must be positive"));
        }
        Ok(Integrand {
            kind: IntegrandKind::Moreau { base: Box::new(self.kind.clone()), lambda },
            proj: self.proj.clone(),
        })
    }

    pub fn with_projection(mut self, proj: Projection) -> Self {
        self.proj = if proj.is_identity() { None } else { Some(proj) };
        self
    }

    /// Rebinds grid-dependent data (the depth of an auto-level fat-Cantor
    /// set) to a grid with `cells` cells along `x₁`.
    pub fn for_cells(&self, cells: usize) -> Self {
        Integrand { kind: self.kind.rebind(cells), proj: self.proj.clone() }
    }

    pub fn kind(&self) -> &IntegrandKind {
        &self.kind
    }

    pub fn id(&self) -> String {
        let mut s = String::new();
        self.kind.write_id(&mut s);
        s
    }

    pub fn conjugate_mode(&self) -> ConjugateMode {
        self.kind.mode()
    }

    pub fn is_x_independent(&self) -> bool {
        self.kind.x_independent()
    }

    /// `(c₀, C₀)` of the bound `c₀|Ay| ≤ f ≤ C₀(1 + |Ay|)`; `None` for
    /// integrands without linear growth (q-powers, Moreau envelopes).
    pub fn growth(&self) -> Option<(f64, f64)> {
        self.kind.growth()
    }

    /// Lipschitz constant in `y`.
    pub fn lipschitz(&self) -> f64 {
        self.kind.lipschitz()
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        match &self.proj {
            Some(p) => p.apply(y),
            None => y.to_vec(),
        }
    }

    pub fn evaluate(&self, x: Point, y: &[f64]) -> f64 {
        self.kind.phi(x, norm(&self.project(y)))
    }

    pub fn conjugate(&self, x: Point, z: &[f64]) -> Result<ConjugateValue> {
        self.kind.conj(x, norm(&self.project(z)))
    }

    /// Conjugate by the numeric radial search regardless of closed forms.
    pub fn conjugate_numeric(&self, x: Point, z: &[f64]) -> Result<ConjugateValue> {
        self.kind.conj_numeric(x, norm(&self.project(z)))
    }

    pub fn prox(&self, lambda: f64, x: Point, y: &[f64]) -> Vec<f64> {
        let ay = self.project(y);
        let r = norm(&ay);
        if r == 0.0 {
            return y.to_vec();
        }
        let scale = self.kind.prox(x, lambda, r) / r - 1.0;
        y.iter().zip(&ay).map(|(yi, ai)| yi + scale * ai).collect()
    }

    pub fn moreau(&self, lambda: f64, x: Point, y: &[f64]) -> f64 {
        let p = self.prox(lambda, x, y);
        let d2: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.evaluate(x, &p) + d2 / (2.0 * lambda)
    }

    pub fn recession(&self, x: Point, y: &[f64]) -> Result<f64> {
        let r = norm(&self.project(y));
        if r == 0.0 {
            return Ok(0.0);
        }
        Ok(self.kind.recession_slope(x)? * r)
    }

    /// Minimal-norm element of `∂_y f(x, y)` (a gradient where `f` is smooth).
    pub fn subgradient(&self, x: Point, y: &[f64]) -> Vec<f64> {
        let mut ay = self.project(y);
        let r = norm(&ay);
        if r == 0.0 {
            return vec![0.0; y.len()];
        }
        let s = self.kind.dphi(x, r) / r;
        ay.iter_mut().for_each(|v| *v *= s);
        ay
    }

    /// Cell-level integrand on the box with `x₁ ∈ [x1lo, x1hi]`, sampled at
    /// `center` where no exact cell averaging is available.
    pub fn cell(&self, x1lo: f64, x1hi: f64, center: Point) -> CellIntegrand {
        match self.kind.cell(x1lo, x1hi) {
            Some((mean, ess_inf, shift)) => {
                CellIntegrand::Ball { slope: mean, radius: ess_inf, shift }
            }
            None => CellIntegrand::Smooth { f: self.clone(), x: center },
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Self::parse_seeded(id, 0)
    }

    /// Like [`Integrand::parse`], with `seed` used wherever the id leaves it out.
    pub fn parse_seeded(id: &str, seed: u64) -> Result<Self> {
        let node = IdNode::parse(id).map_err(|reason| Error::IntegrandId { id: id.into(), reason })?;
        node.build(seed).map_err(|e| match e {
            Error::IntegrandId { .. } => e,
            other => Error::IntegrandId { id: id.into(), reason: other.to_string() },
        })
    }
}

/// An integrand restricted to one grid cell.
///
/// `Ball` is used for norm-type integrands: the primal value uses the cell
/// mean of the weight, while the conjugate is finite only where it is finite
/// for almost every point of the cell, i.e. on the ball whose radius is the
/// essential infimum of the weight. The conjugate of that cell conjugate is
/// the relaxed cell integrand `radius·|y|`.
#[derive(Debug, Clone)]
pub enum CellIntegrand {
    Ball { slope: f64, radius: f64, shift: f64 },
    Smooth { f: Integrand, x: Point },
}

impl CellIntegrand {
    /// Cell average of `f(·, y)`.
    pub fn primal(&self, y: &[f64]) -> f64 {
        match self {
            CellIntegrand::Ball { slope, shift, .. } => slope * norm(y) + shift,
            CellIntegrand::Smooth { f, x } => f.evaluate(*x, y),
        }
    }

    /// Biconjugate of the cell conjugate (the relaxed cell integrand).
    pub fn relaxed(&self, y: &[f64]) -> f64 {
        match self {
            CellIntegrand::Ball { radius, shift, .. } => radius * norm(y) + shift,
            CellIntegrand::Smooth { f, x } => f.evaluate(*x, y),
        }
    }

    pub fn conjugate(&self, z: &[f64]) -> Result<ConjugateValue> {
        match self {
            CellIntegrand::Ball { radius, shift, .. } => Ok(if norm(z) <= radius * (1.0 + DOMAIN_TOL) {
                ConjugateValue::Finite(-shift)
            } else {
                ConjugateValue::Infinite
            }),
            CellIntegrand::Smooth { f, x } => f.conjugate(*x, z),
        }
    }

    /// `prox_{s·f*}(v)`, via the Moreau identity for smooth cells.
    pub fn prox_conjugate(&self, s: f64, v: &mut [f64]) {
        match self {
            CellIntegrand::Ball { radius, .. } => crate::linalg::project_ball(v, *radius),
            CellIntegrand::Smooth { f, x } => {
                let scaled: Vec<f64> = v.iter().map(|vi| vi / s).collect();
                let p = f.prox(1.0 / s, *x, &scaled);
                v.iter_mut().zip(p).for_each(|(vi, pi)| *vi -= s * pi);
            }
        }
    }

    /// Minimal-norm subgradient of the relaxed cell integrand at `y`.
    pub fn maximizer(&self, y: &[f64]) -> Vec<f64> {
        match self {
            CellIntegrand::Ball { radius, .. } => {
                let r = norm(y);
                if r == 0.0 {
                    vec![0.0; y.len()]
                } else {
                    y.iter().map(|v| v * radius / r).collect()
                }
            }
            CellIntegrand::Smooth { f, x } => f.subgradient(*x, y),
        }
    }

    /// Radius of the closed conjugate domain, which bounds admissible normal
    /// traces on an adjacent boundary face; `+∞` without linear growth.
    pub fn trace_radius(&self) -> f64 {
        match self {
            CellIntegrand::Ball { radius, .. } => *radius,
            CellIntegrand::Smooth { f, x } => f.kind.recession_slope(*x).unwrap_or(f64::INFINITY),
        }
    }
}

// ---------------------------------------------------------------------------
// id parsing: name [ "(" arg { "," arg } ")" ], arg = id | number | key=number

#[derive(Debug)]
enum IdArg {
    Node(IdNode),
    Num(f64),
    Key(String, f64),
}

#[derive(Debug)]
struct IdNode {
    name: String,
    args: Vec<IdArg>,
}

impl IdNode {
    fn parse(s: &str) -> std::result::Result<IdNode, String> {
        let s = s.trim();
        let (name, rest) = match s.find('(') {
            Some(i) => (&s[..i], Some(&s[i + 1..])),
            None => (s, None),
        };
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad name `{name}`"));
        }
        let mut args = Vec::new();
        if let Some(rest) = rest {
            let inner = rest.strip_suffix(')').ok_or("missing `)`")?;
            for part in split_top_level(inner)? {
                let part = part.trim();
                if part.is_empty() {
                    return Err("empty argument".into());
                }
                if let Ok(v) = part.parse::<f64>() {
                    args.push(IdArg::Num(v));
                } else if let Some((k, v)) = part.split_once('=') {
                    let v = v.trim().parse::<f64>().map_err(|_| format!("bad value in `{part}`"))?;
                    args.push(IdArg::Key(k.trim().to_string(), v));
                } else {
                    args.push(IdArg::Node(IdNode::parse(part)?));
                }
            }
        } else if s.contains(')') {
            return Err("unbalanced `)`".into());
        }
        Ok(IdNode { name: name.to_string(), args })
    }

    fn key(&self, key: &str) -> Option<f64> {
        self.args.iter().find_map(|a| match a {
            IdArg::Key(k, v) if k == key => Some(*v),
            _ => None,
        })
    }

    fn number(&self, pos: usize) -> Option<f64> {
        self.args
            .iter()
            .filter_map(|a| if let IdArg::Num(v) = a { Some(*v) } else { None })
            .nth(pos)
    }

    fn base(&self, seed: u64) -> Result<Integrand> {
        self.args
            .iter()
            .find_map(|a| if let IdArg::Node(n) = a { Some(n) } else { None })
            .ok_or_else(|| Error::IntegrandId {
                id: self.name.clone(),
                reason: "missing base integrand".into(),
            })?
            .build(seed)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for a in &self.args {
            if let IdArg::Key(k, _) = a {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::IntegrandId {
                        id: self.name.clone(),
                        reason: format!("unknown key `{k}`"),
                    });
                }
            }
        }
        Ok(())
    }

    fn build(&self, default_seed: u64) -> Result<Integrand> {
        let missing = |what: &str| Error::IntegrandId {
            id: self.name.clone(),
            reason: format!("missing {what}"),
        };
        match self.name.as_str() {
            "euclid" => Ok(Integrand::euclid()),
            "area" => Ok(Integrand::area()),
            "xweight" => {
                self.check_keys(&["amp", "freq"])?;
                Integrand::xweight(self.key("amp").unwrap_or(0.5), self.key("freq").unwrap_or(1.0))
            }
            "kweight" => {
                self.check_keys(&["seed", "level"])?;
                let seed = self.key("seed").unwrap_or(default_seed as f64);
                let level = self.key("level");
                if seed < 0.0 || seed.fract() != 0.0 || level.is_some_and(|l| l < 0.0 || l.fract() != 0.0 || l > 24.0) {
                    return Err(missing("integer seed / level in [0, 24]"));
                }
                Ok(Integrand::kweight(seed as u64, level.map(|l| l as u32)))
            }
            "qpow" => {
                self.check_keys(&["q"])?;
                let q = self.key("q").or_else(|| self.number(0)).ok_or_else(|| missing("q"))?;
                self.base(default_seed)?.qpower(q)
            }
            "moreau" => {
                self.check_keys(&["lambda"])?;
                let l = self.key("lambda").or_else(|| self.number(0)).ok_or_else(|| missing("lambda"))?;
                self.base(default_seed)?.moreau_of(l)
            }
            "perturbed" => {
                self.check_keys(&["amp", "freq"])?;
                let amp = self.key("amp").or_else(|| self.number(0)).unwrap_or(0.25);
                Integrand::perturbed(self.base(default_seed)?, amp, self.key("freq").unwrap_or(1.0))
            }
            other => Err(Error::IntegrandId { id: other.into(), reason: "unknown integrand".into() }),
        }
    }
}

fn split_top_level(s: &str) -> std::result::Result<Vec<&str>, String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err("unbalanced `)`".into());
                }
            }
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err("unbalanced `(`".into());
    }
    parts.push(&s[start..]);
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: Point = [0.3, 0.0];

    /// Brute-force `min_t φ(t) + (t − r)²/(2λ)` over a sampled `t` grid.
    fn brute_min(phi: impl Fn(f64) -> f64, lambda: f64, r: f64) -> (f64, f64) {
        let n = 200_000;
        let hi = r.abs() + 2.0;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=n {
            let t = -hi + 2.0 * hi * i as f64 / n as f64;
            let v = phi(t.abs()) + (t - r) * (t - r) / (2.0 * lambda);
            if v < best.0 {
                best = (v, t);
            }
        }
        best
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(Integrand::euclid().evaluate(X, &[3.0, 4.0]), 5.0);
        assert_eq!(Integrand::area().evaluate(X, &[0.0, 0.0]), 1.0);
        let k = Integrand::kweight(7, Some(6));
        let KWeight { set, .. } = k.kind() else { unreachable!() };
        let (a, b) = set.intervals()[3];
        assert_eq!(k.evaluate([0.5 * (a + b), 0.0], &[1.0]), 2.0);
        let gap = 0.5 * (set.intervals()[3].1 + set.intervals()[4].0);
        assert_eq!(k.evaluate([gap, 0.0], &[1.0]), 1.0);
    }
    use IntegrandKind::KWeight;

    #[test]
    fn conjugate_examples() {
        let e = Integrand::euclid();
        assert_eq!(e.conjugate(X, &[0.6, 0.8]).unwrap(), ConjugateValue::Finite(0.0));
        assert_eq!(e.conjugate(X, &[0.6, 0.9]).unwrap(), ConjugateValue::Infinite);
        let k = Integrand::kweight(7, Some(6));
        let KWeight { set, .. } = k.kind() else { unreachable!() };
        let x_in = [set.intervals()[0].1 * 0.5, 0.0];
        assert_eq!(k.conjugate(x_in, &[1.9]).unwrap(), ConjugateValue::Finite(0.0));
        assert_eq!(k.conjugate(x_in, &[2.1]).unwrap(), ConjugateValue::Infinite);
    }

    #[test]
    fn area_conjugate_matches_brute_force_sup() {
        // sup over a fine sampled grid of y of <y, z> - sqrt(1 + |y|²), radial
        let area = Integrand::area();
        for s in [0.0, 0.3, 0.6, 0.9] {
            let brute = (0..=400_000)
                .map(|i| {
                    let r = i as f64 * 1e-4;
                    s * r - (1.0 + r * r).sqrt()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let closed = area.conjugate(X, &[s, 0.0]).unwrap().value().unwrap();
            assert!((closed - brute).abs() < 1e-8, "s={s}: {closed} vs {brute}");
            assert!((closed + (1.0 - s * s).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn prox_and_envelope_match_brute_force() {
        let e = Integrand::euclid();
        for (y, prox, env) in [(0.5, 0.0, 0.125), (3.0, 2.0, 2.5)] {
            let (bv, bt) = brute_min(|t| t, 1.0, y);
            assert!((bt - prox).abs() < 1e-4 && (bv - env).abs() < 1e-8);
            assert!((e.prox(1.0, X, &[y])[0] - prox).abs() < 1e-15);
            assert!((e.moreau(1.0, X, &[y]) - env).abs() < 1e-15);
        }
        assert_eq!(Integrand::area().prox(1.0, X, &[0.0, 0.0]), vec![0.0, 0.0]);
        // prox of |y|² at 3 with λ = 1: minimize t² + (t − 3)²/2
        let q2 = e.qpower(2.0).unwrap();
        let (_, bt) = brute_min(|t| t * t, 1.0, 3.0);
        assert!((bt - 1.0).abs() < 1e-4);
        assert!((q2.prox(1.0, X, &[3.0])[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generic_prox_matches_brute_force() {
        for f in [
            Integrand::area(),
            Integrand::euclid().qpower(1.5).unwrap(),
            Integrand::euclid().qpower(1.05).unwrap(),
            Integrand::area().qpower(1.3).unwrap(),
        ] {
            for &y in &[0.2, 1.0, 4.0] {
                for &lambda in &[0.1, 1.0] {
                    let (_, bt) = brute_min(|t| f.evaluate(X, &[t]), lambda, y);
                    let p = f.prox(lambda, X, &[y])[0];
                    assert!((p - bt).abs() < 1e-4, "{f} y={y} λ={lambda}: {p} vs {bt}");
                }
            }
        }
    }

    #[test]
    fn recession_examples() {
        assert_eq!(Integrand::euclid().recession(X, &[3.0, 4.0]).unwrap(), 5.0);
        let r = Integrand::area().recession(X, &[1.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let q = Integrand::euclid().qpower(1.5).unwrap();
        assert_eq!(q.recession(X, &[1.0]).unwrap(), f64::INFINITY);
        assert_eq!(q.recession(X, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn qpower_range_and_values() {
        let e = Integrand::euclid();
        assert!(e.qpower(1.0).is_err() && e.qpower(2.5).is_err() && e.qpower(f64::NAN).is_err());
        assert_eq!(e.qpower(2.0).unwrap().evaluate(X, &[2.0]), 4.0);
        let near = e.qpower(1.0 + 1e-12).unwrap();
        for i in 0..=100 {
            let y = i as f64 * 0.1;
            assert!((near.evaluate(X, &[y]) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn numeric_conjugate_agrees_with_closed_forms() {
        for f in [
            Integrand::euclid(),
            Integrand::area(),
            Integrand::euclid().qpower(1.5).unwrap(),
            Integrand::area().moreau_of(0.2).unwrap(),
            Integrand::perturbed(Integrand::area(), 0.3, 1.0).unwrap(),
        ] {
            for &s in &[0.0, 0.25, 0.5, 0.99, 1.5] {
                let a = f.conjugate(X, &[s]).unwrap();
                let b = f.conjugate_numeric(X, &[s]).unwrap();
                match (a, b) {
                    (ConjugateValue::Finite(a), ConjugateValue::Finite(b)) => {
                        assert!((a - b).abs() < 1e-8, "{f} s={s}: {a} vs {b}")
                    }
                    (a, b) => assert_eq!(a, b, "{f} s={s}"),
                }
            }
        }
    }

    #[test]
    fn projection_is_respected() {
        let f = Integrand::euclid().with_projection(Projection::symmetric(2));
        let rot = [0.0, -1.0, 1.0, 0.0];
        assert_eq!(f.evaluate(X, &rot), 0.0);
        assert_eq!(f.prox(0.5, X, &rot), rot.to_vec());
        let y = [1.0, 2.0, 0.0, -1.0];
        let ay = f.project(&y);
        assert_eq!(f.evaluate(X, &y), f.evaluate(X, &ay));
    }

    #[test]
    fn id_round_trip() {
        for id in [
            "euclid",
            "area",
            "xweight(amp=0.5,freq=2)",
            "kweight(seed=7)",
            "kweight(seed=3,level=9)",
            "qpow(euclid,1.5)",
            "moreau(area,0.1)",
            "perturbed(euclid,amp=0.3,freq=1)",
            "qpow(moreau(euclid,0.05),1.05)",
        ] {
            let f = Integrand::parse(id).unwrap();
            assert_eq!(Integrand::parse(&f.id()).unwrap(), f, "{id}");
        }
        assert_eq!(Integrand::parse("qpow(euclid,1.5)").unwrap().id(), "qpow(euclid,1.5)");
        for bad in ["", "nope", "qpow(euclid", "qpow(euclid,3)", "xweight(bogus=1)", "kweight(seed=-1)"] {
            assert!(Integrand::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn cell_integrands() {
        let k = Integrand::kweight(7, Some(12));
        let CellIntegrand::Ball { slope, radius, shift } = k.cell(0.25, 0.25 + 1.0 / 64.0, [0.0; 2]) else {
            panic!()
        };
        assert!(slope > 1.0 && slope < 2.0 && radius == 1.0 && shift == 0.0);
        let w = Integrand::xweight(1.0, 1.0).unwrap();
        match w.cell(0.4, 0.6, [0.5, 0.0]) {
            CellIntegrand::Ball { slope, radius, .. } => {
                assert!((radius - xweight(1.0, 1.0, 0.4)).abs() < 1e-15);
                assert!(slope > radius && slope < 2.0);
            }
            _ => panic!(),
        }
        match w.cell(0.9, 1.1, [1.0, 0.0]) {
            CellIntegrand::Ball { radius, .. } => assert_eq!(radius, 1.0),
            _ => panic!(),
        }
        let mut v = vec![3.0, 4.0];
        Integrand::area().cell(0.0, 0.1, X).prox_conjugate(2.0, &mut v);
        assert!(norm(&v) <= 1.0);
    }
}
