//! Bounded convex domains: defining functions, strong convexity, two-sided
//! Kobayashi bounds, squeezing lower bounds and boundary horosphere values.

use crate::ball::{self, kobayashi_ball, kobayashi_siegel};
use crate::numerics::{detect_limit, fibonacci_directions, golden_section_min, pattern_search, sphere_search, SeededSampler};
use crate::{CMatrix, CPoint, ConvergenceReport, HoloError, Result, C64};
use nalgebra::DMatrix;
use num_traits::{One, Zero};
use serde::Serialize;
use std::f64::consts::TAU;
use std::sync::Arc;

type P = CPoint<f64>;

/// `c z^alpha conj(z)^beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: C64,
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
}

impl Monomial {
    pub fn eval(&self, z: &P) -> C64 {
        let mut v = self.coeff;
        for (j, zj) in z.coords.iter().enumerate() {
            if self.alpha[j] > 0 {
                v *= zj.powu(self.alpha[j]);
            }
            if self.beta[j] > 0 {
                v *= zj.conj().powu(self.beta[j]);
            }
        }
        v
    }

    pub fn degree(&self) -> u32 {
        self.alpha.iter().chain(&self.beta).sum()
    }
}

/// Polynomial in `z` and `conj(z)` with complex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: C64) -> Self {
        Self { dim, terms: vec![Monomial { coeff: c, alpha: vec![0; dim], beta: vec![0; dim] }] }.simplified()
    }

    /// The coordinate `z_j` (or `conj(z_j)` when `bar`).
    pub fn var(dim: usize, j: usize, bar: bool) -> Self {
        let mut alpha = vec![0; dim];
        let mut beta = vec![0; dim];
        if bar {
            beta[j] = 1;
        } else {
            alpha[j] = 1;
        }
        Self { dim, terms: vec![Monomial { coeff: C64::one(), alpha, beta }] }
    }

    /// `|z_j|^{2p}`.
    pub fn modulus_power(dim: usize, j: usize, p: u32) -> Self {
        let mut alpha = vec![0; dim];
        alpha[j] = p;
        Self { dim, terms: vec![Monomial { coeff: C64::one(), alpha: alpha.clone(), beta: alpha }] }
    }

    pub fn eval(&self, z: &P) -> C64 {
        self.terms.iter().map(|t| t.eval(z)).sum()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Merges equal exponents and drops zero coefficients.
    pub fn simplified(mut self) -> Self {
        self.terms.sort_by(|a, b| (&a.alpha, &a.beta).cmp(&(&b.alpha, &b.beta)));
        let mut out: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for t in self.terms {
            match out.last_mut() {
                Some(last) if last.alpha == t.alpha && last.beta == t.beta => last.coeff += t.coeff,
                _ => out.push(t),
            }
        }
        out.retain(|t| t.coeff.norm() > 1e-15);
        Self { dim: self.dim, terms: out }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { dim: self.dim, terms }.simplified()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { dim: self.dim, terms: self.terms.iter().map(|t| Monomial { coeff: t.coeff * c, ..t.clone() }).collect() }
            .simplified()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(Monomial {
                    coeff: a.coeff * b.coeff,
                    alpha: a.alpha.iter().zip(&b.alpha).map(|(x, y)| x + y).collect(),
                    beta: a.beta.iter().zip(&b.beta).map(|(x, y)| x + y).collect(),
                });
            }
        }
        Self { dim: self.dim, terms }.simplified()
    }

    pub fn pow(&self, n: u32) -> Self {
        (0..n).fold(Self::constant(self.dim, C64::one()), |acc, _| acc.mul(self))
    }

    /// Complex conjugate polynomial.
    pub fn conj(&self) -> Self {
        Self {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|t| Monomial { coeff: t.coeff.conj(), alpha: t.beta.clone(), beta: t.alpha.clone() })
                .collect(),
        }
    }

    /// `(P + conj P) / 2`, a real-valued polynomial.
    pub fn real_part(&self) -> Self {
        self.add(&self.conj()).scale(C64::new(0.5, 0.0))
    }

    /// Wirtinger derivative in `z_k` (or `conj(z_k)` when `bar`).
    pub fn derivative(&self, k: usize, bar: bool) -> Self {
        let terms = self
            .terms
            .iter()
            .filter_map(|t| {
                let e = if bar { t.beta[k] } else { t.alpha[k] };
                if e == 0 {
                    return None;
                }
                let mut m = t.clone();
                m.coeff *= e as f64;
                if bar {
                    m.beta[k] -= 1;
                } else {
                    m.alpha[k] -= 1;
                }
                Some(m)
            })
            .collect();
        Self { dim: self.dim, terms }.simplified()
    }

    /// `P(M^{-1} zeta)` for an invertible `M`, i.e. the polynomial of the
    /// linear image of the zero set.
    pub fn linear_image(&self, m: &CMatrix) -> Result<Self> {
        let inv = m.clone().try_inverse().ok_or_else(|| HoloError::Singular("linear map not invertible".into()))?;
        let q = self.dim;
        let sub = |j: usize, bar: bool| {
            (0..q).fold(Self::zero(q), |acc, k| {
                let c = if bar { inv[(j, k)].conj() } else { inv[(j, k)] };
                acc.add(&Self::var(q, k, bar).scale(c))
            })
        };
        let subs: Vec<(Self, Self)> = (0..q).map(|j| (sub(j, false), sub(j, true))).collect();
        let mut out = Self::zero(q);
        for t in &self.terms {
            let mut acc = Self::constant(q, t.coeff);
            for j in 0..q {
                acc = acc.mul(&subs[j].0.pow(t.alpha[j])).mul(&subs[j].1.pow(t.beta[j]));
            }
            out = out.add(&acc);
        }
        Ok(out)
    }
}

/// Which catalog domain a [`DomainSpec`] describes.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Siegel,
    /// `{ |z1|^2 + |z2|^4 < 1 }`.
    Egg,
    /// `{ sum a_j |z_j|^2 < 1 }`.
    Ellipsoid { coefficients: Vec<f64> },
    Custom,
}

#[derive(Debug)]
struct Derivatives {
    rho: Polynomial,
    d: Vec<Polynomial>,
    dd: Vec<Vec<Polynomial>>,
    ddbar: Vec<Vec<Polynomial>>,
}

impl Derivatives {
    fn new(rho: Polynomial) -> Self {
        let q = rho.dim;
        let d: Vec<Polynomial> = (0..q).map(|k| rho.derivative(k, false)).collect();
        let dd = d.iter().map(|p| (0..q).map(|k| p.derivative(k, false)).collect()).collect();
        let ddbar = d.iter().map(|p| (0..q).map(|k| p.derivative(k, true)).collect()).collect();
        Self { rho, d, dd, ddbar }
    }
}

/// Affine ball containing the domain: `Omega ⊂ { |D (x - c)| < s }`.
#[derive(Clone, Debug, Serialize)]
pub struct ContainingBall {
    pub center: Vec<[f64; 2]>,
    pub diag: Vec<f64>,
    pub scale: f64,
}

impl ContainingBall {
    fn map(&self, x: &P) -> P {
        P::new(
            x.coords
                .iter()
                .enumerate()
                .map(|(j, v)| (v - C64::new(self.center[j][0], self.center[j][1])) * self.diag[j] / self.scale)
                .collect(),
        )
    }
}

/// A domain `{ rho < 0 }` of `C^q` with its defining function and bounding data.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dim: usize,
    /// Interior reference point.
    pub center: P,
    /// Bound on the norm of points of the domain (`inf` when unbounded).
    pub circumradius: f64,
    pub containing: Option<ContainingBall>,
    derivs: Arc<Derivatives>,
}

impl PartialEq for DomainSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.dim == other.dim && self.derivs.rho == other.derivs.rho
    }
}

fn sum_sq(q: usize, from: usize, coeffs: Option<&[f64]>) -> Polynomial {
    (from..q).fold(Polynomial::zero(q), |acc, j| {
        let a = coeffs.map_or(1.0, |c| c[j]);
        acc.add(&Polynomial::modulus_power(q, j, 1).scale(C64::new(a, 0.0)))
    })
}

impl DomainSpec {
    fn build(kind: DomainKind, rho: Polynomial, center: P, circumradius: f64, containing: Option<ContainingBall>) -> Self {
        let dim = rho.dim;
        Self { kind, dim, center, circumradius, containing, derivs: Arc::new(Derivatives::new(rho)) }
    }

    pub fn ball(q: usize) -> Self {
        let rho = sum_sq(q, 0, None).add(&Polynomial::constant(q, C64::new(-1.0, 0.0)));
        let cb = ContainingBall { center: vec![[0.0; 2]; q], diag: vec![1.0; q], scale: 1.0 };
        Self::build(DomainKind::Ball, rho, P::zeros(q), 1.0, Some(cb))
    }

    /// `{ Im z1 > |z'|^2 }`, with `rho = |z'|^2 - Im z1`.
    pub fn siegel(q: usize) -> Self {
        let im = Polynomial::var(q, 0, false)
            .scale(C64::new(0.0, 0.5))
            .add(&Polynomial::var(q, 0, true).scale(C64::new(0.0, -0.5)));
        let rho = sum_sq(q, 1, None).add(&im);
        let mut center = P::zeros(q);
        center[0] = C64::new(0.0, 1.0);
        Self::build(DomainKind::Siegel, rho, center, f64::INFINITY, None)
    }

    pub fn egg() -> Self {
        let rho = Polynomial::modulus_power(2, 0, 1)
            .add(&Polynomial::modulus_power(2, 1, 2))
            .add(&Polynomial::constant(2, C64::new(-1.0, 0.0)));
        let cb = ContainingBall { center: vec![[0.0; 2]; 2], diag: vec![1.0; 2], scale: 1.25f64.sqrt() };
        Self::build(DomainKind::Egg, rho, P::zeros(2), 1.25f64.sqrt(), Some(cb))
    }

    pub fn ellipsoid(coefficients: &[f64]) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(HoloError::Precondition("ellipsoid coefficients must be positive".into()));
        }
        let q = coefficients.len();
        let rho = sum_sq(q, 0, Some(coefficients)).add(&Polynomial::constant(q, C64::new(-1.0, 0.0)));
        let amin = coefficients.iter().cloned().fold(f64::INFINITY, f64::min);
        let cb = ContainingBall {
            center: vec![[0.0; 2]; q],
            diag: coefficients.iter().map(|a| a.sqrt()).collect(),
            scale: 1.0,
        };
        Ok(Self::build(
            DomainKind::Ellipsoid { coefficients: coefficients.to_vec() },
            rho,
            P::zeros(q),
            1.0 / amin.sqrt(),
            Some(cb),
        ))
    }

    /// Bounded convex domain `{ Re P < 0 }` with a known interior point.
    pub fn custom(poly: Polynomial, center: P, circumradius: Option<f64>) -> Result<Self> {
        let rho = poly.real_part();
        let q = rho.dim;
        if center.dim() != q {
            return Err(HoloError::Precondition("center dimension mismatch".into()));
        }
        if !(rho.eval(&center).re < 0.0) {
            return Err(HoloError::Precondition("custom domain center is not interior".into()));
        }
        let mut d = Self::build(DomainKind::Custom, rho, center.clone(), circumradius.unwrap_or(f64::INFINITY), None);
        if circumradius.is_none() {
            let far = fibonacci_directions(2048, q)
                .iter()
                .map(|u| (&center + &u.scale(d.ray_exit(&center, u))).norm())
                .fold(0.0, f64::max);
            if !far.is_finite() {
                return Err(HoloError::Precondition("custom domain appears unbounded".into()));
            }
            d.circumradius = far * 1.05 + 1e-9;
        }
        d.containing = Some(d.sampled_containing_ball()?);
        Ok(d)
    }

    /// Image of the domain under `z -> M z`.
    pub fn linear_image(&self, m: &CMatrix) -> Result<Self> {
        let poly = self.derivs.rho.linear_image(m)?;
        let norm = crate::numerics::singular_values(m)[0];
        Self::custom(poly, self.center.apply(m), Some(self.circumradius * norm * 1.000001))
    }

    pub fn name(&self) -> String {
        match &self.kind {
            DomainKind::Ball => format!("ball(q={})", self.dim),
            DomainKind::Siegel => format!("siegel(q={})", self.dim),
            DomainKind::Egg => "egg".into(),
            DomainKind::Ellipsoid { coefficients } => format!("ellipsoid({coefficients:?})"),
            DomainKind::Custom => format!("custom(q={})", self.dim),
        }
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.derivs.rho
    }

    pub fn is_bounded(&self) -> bool {
        self.circumradius.is_finite()
    }

    pub fn rho(&self, z: &P) -> f64 {
        match &self.kind {
            DomainKind::Ball => z.norm_sqr() - 1.0,
            DomainKind::Siegel => z.tail_norm_sqr() - z[0].im,
            DomainKind::Egg => z[0].norm_sqr() + z[1].norm_sqr().powi(2) - 1.0,
            DomainKind::Ellipsoid { coefficients } => {
                z.coords.iter().zip(coefficients).map(|(c, a)| a * c.norm_sqr()).sum::<f64>() - 1.0
            }
            DomainKind::Custom => self.derivs.rho.eval(z).re,
        }
    }

    pub fn contains(&self, z: &P) -> bool {
        z.dim() == self.dim && z.is_finite() && self.rho(z) < 0.0
    }

    /// First-order Euclidean distance to the boundary, `-rho / |grad rho|`;
    /// exact on the ball.
    pub fn interior_margin(&self, z: &P) -> f64 {
        if self.kind == DomainKind::Ball {
            return 1.0 - z.norm();
        }
        let g = 2.0 * self.nu(z).norm();
        if g > 0.0 {
            -self.rho(z) / g
        } else if self.contains(z) {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// `d rho / d z_k`.
    pub fn d_rho(&self, z: &P) -> P {
        P::new(self.derivs.d.iter().map(|p| p.eval(z)).collect())
    }

    /// `nu = d rho / d conj(z)`; the real gradient as a complex vector is `2 nu`.
    pub fn nu(&self, z: &P) -> P {
        P::new(self.d_rho(z).coords.iter().map(|c| c.conj()).collect())
    }

    /// Levi matrix `rho_{j kbar}`.
    pub fn levi(&self, z: &P) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |j, k| self.derivs.ddbar[j][k].eval(z))
    }

    /// Complex Hessian `rho_{jk}`.
    pub fn complex_hessian(&self, z: &P) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |j, k| self.derivs.dd[j][k].eval(z))
    }

    /// Real gradient in the coordinates `(x1, y1, x2, y2, ...)`.
    pub fn real_gradient(&self, z: &P) -> Vec<f64> {
        self.d_rho(z).coords.iter().flat_map(|c| [2.0 * c.re, -2.0 * c.im]).collect()
    }

    /// Real Hessian in the coordinates `(x1, y1, x2, y2, ...)`.
    pub fn real_hessian(&self, z: &P) -> DMatrix<f64> {
        let q = self.dim;
        let (hzz, hzb) = (self.complex_hessian(z), self.levi(z));
        let mut h = DMatrix::zeros(2 * q, 2 * q);
        for j in 0..q {
            for k in 0..q {
                let (a, b) = (hzz[(j, k)], hzb[(j, k)]);
                h[(2 * j, 2 * k)] = 2.0 * (a.re + b.re);
                h[(2 * j, 2 * k + 1)] = -2.0 * a.im + 2.0 * b.im;
                h[(2 * j + 1, 2 * k)] = -2.0 * a.im - 2.0 * b.im;
                h[(2 * j + 1, 2 * k + 1)] = -2.0 * a.re + 2.0 * b.re;
            }
        }
        h
    }

    /// Exit time `sup { t : x + t u in Omega }`, `inf` when unbounded.
    pub fn ray_exit(&self, x: &P, u: &P) -> f64 {
        if !(self.rho(x) < 0.0) {
            return 0.0;
        }
        let quad = |a: f64, b: f64, c: f64| -> f64 {
            // a t^2 + 2 b t + c = 0 with c < 0; positive root.
            if a <= 0.0 {
                return if b > 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
            }
            let disc = (b * b - a * c).max(0.0).sqrt();
            if b > 0.0 {
                -c / (b + disc)
            } else {
                (disc - b) / a
            }
        };
        match &self.kind {
            DomainKind::Ball => quad(u.norm_sqr(), x.inner(u).re, x.norm_sqr() - 1.0),
            DomainKind::Ellipsoid { coefficients } => {
                let (mut a, mut b, mut c) = (0.0, 0.0, -1.0);
                for j in 0..self.dim {
                    a += coefficients[j] * u[j].norm_sqr();
                    b += coefficients[j] * (x[j] * u[j].conj()).re;
                    c += coefficients[j] * x[j].norm_sqr();
                }
                quad(a, b, c)
            }
            DomainKind::Siegel => {
                let mut b = -u[0].im / 2.0;
                for j in 1..self.dim {
                    b += (x[j] * u[j].conj()).re;
                }
                quad(u.tail_norm_sqr(), b, self.rho(x))
            }
            _ => {
                let f = |t: f64| self.rho(&(x + &u.scale(t)));
                let un = u.norm();
                let mut hi = if self.circumradius.is_finite() {
                    (self.circumradius + x.norm()) / un
                } else {
                    1.0 / un
                };
                let mut grow = 0;
                while f(hi) < 0.0 {
                    hi *= 2.0;
                    grow += 1;
                    if grow > 60 {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        }
    }

    /// Newton projection onto `{ rho = 0 }` along the gradient.
    pub fn project_to_boundary(&self, z: &P) -> Result<P> {
        let mut x = z.clone();
        for _ in 0..100 {
            let r = self.rho(&x);
            let g = self.nu(&x).scale(2.0);
            let g2 = g.norm_sqr();
            if g2 < 1e-24 {
                return Err(HoloError::DegenerateBoundary);
            }
            if r.abs() < 1e-15 * (1.0 + x.norm_sqr()) {
                return Ok(x);
            }
            x = &x - &g.scale(r / g2);
        }
        if self.rho(&x).abs() / self.nu(&x).norm() < 1e-8 {
            Ok(x)
        } else {
            Err(HoloError::NonConvergent { what: "boundary projection".into(), report: None })
        }
    }

    /// Nearest boundary point and Euclidean distance to the boundary.
    pub fn nearest_boundary(&self, z: &P) -> Result<(P, f64)> {
        if !self.contains(z) {
            return Err(HoloError::OutOfDomain(format!("point outside {}", self.name())));
        }
        if self.kind == DomainKind::Ball {
            let n = z.norm();
            let u = if n > 0.0 { z.scale(1.0 / n) } else { P::basis(self.dim, 0) };
            return Ok((u, 1.0 - n));
        }
        let mut start = self.nu(z);
        let mut best = if start.norm() > 0.0 { self.ray_exit(z, &start.scale(1.0 / start.norm())) } else { f64::INFINITY };
        if best.is_finite() {
            start = start.scale(1.0 / start.norm());
        }
        for u in fibonacci_directions(128, self.dim) {
            let t = self.ray_exit(z, &u);
            if t < best {
                best = t;
                start = u;
            }
        }
        let (u, t) = sphere_search(|u| self.ray_exit(z, u), &start, 0.05, 1e-9);
        Ok((z + &u.scale(t), t))
    }

    pub fn boundary_distance(&self, z: &P) -> Result<f64> {
        Ok(self.nearest_boundary(z)?.1)
    }

    /// Support function `sup_{x in Omega} Re <x, u>` with a maximizing point.
    /// `None` when the supremum is infinite.
    pub fn support(&self, u: &P) -> Option<(f64, P)> {
        let n = u.norm();
        if n == 0.0 {
            return Some((0.0, self.center.clone()));
        }
        match &self.kind {
            DomainKind::Ball => Some((n, u.scale(1.0 / n))),
            DomainKind::Ellipsoid { coefficients } => {
                let s = u.coords.iter().zip(coefficients).map(|(c, a)| c.norm_sqr() / a).sum::<f64>().sqrt();
                let b = P::new(u.coords.iter().zip(coefficients).map(|(c, a)| c / (a * s)).collect());
                Some((s, b))
            }
            DomainKind::Egg => {
                let (a1, a2) = (u[0].norm(), u[1].norm());
                let (t, v) = golden_section_min(|t| -(a1 * (1.0 - t.powi(4)).max(0.0).sqrt() + a2 * t), 0.0, 1.0, 1e-12);
                let phase = |c: C64| if c.norm() > 0.0 { c / c.norm() } else { C64::one() };
                let b = P::new(vec![phase(u[0]) * (1.0 - t.powi(4)).max(0.0).sqrt(), phase(u[1]) * t]);
                Some((-v, b))
            }
            DomainKind::Siegel => None,
            DomainKind::Custom => {
                let c = &self.center;
                let point = |d: &P| c + &d.scale(self.ray_exit(c, d));
                let score = |d: &P| -point(d).inner(u).re;
                let mut start = u.scale(1.0 / n);
                let mut best = score(&start);
                for d in fibonacci_directions(64, self.dim) {
                    let s = score(&d);
                    if s < best {
                        best = s;
                        start = d;
                    }
                }
                let (d, v) = sphere_search(score, &start, 0.1, 1e-10);
                Some((-v, point(&d)))
            }
        }
    }

    fn sampled_containing_ball(&self) -> Result<ContainingBall> {
        let q = self.dim;
        let mut center = Vec::with_capacity(q);
        let mut diag = Vec::with_capacity(q);
        for j in 0..q {
            let mut e = P::zeros(q);
            let mut half = [0.0; 2];
            let mut span = 0.0f64;
            for (k, dir) in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)].into_iter().enumerate() {
                e[j] = dir;
                let plus = self.support(&e).map(|s| s.0).unwrap_or(f64::INFINITY);
                let minus = self.support(&(-&e)).map(|s| s.0).unwrap_or(f64::INFINITY);
                half[k] = (plus - minus) / 2.0;
                span = span.max((plus + minus) / 2.0);
            }
            if !span.is_finite() || span <= 0.0 {
                return Err(HoloError::Precondition("domain is not bounded".into()));
            }
            center.push(half);
            diag.push(1.0 / span);
        }
        let mut cb = ContainingBall { center, diag, scale: 1.0 };
        let far = fibonacci_directions(4096, q)
            .iter()
            .map(|u| cb.map(&(&self.center + &u.scale(self.ray_exit(&self.center, u)))).norm())
            .fold(0.0, f64::max);
        cb.scale = far * (1.0 + 1e-6);
        Ok(cb)
    }

    /// Approximately uniform interior samples.
    pub fn sample_interior(&self, sampler: &mut SeededSampler, shrink: f64) -> P {
        let u = sampler.sphere();
        let t = self.ray_exit(&self.center, &u).min(1e3);
        let s = sampler.uniform().powf(1.0 / (2.0 * self.dim as f64));
        &self.center + &u.scale(t * s * shrink)
    }

    /// Kobayashi distance: exact on the ball, the Siegel half-space and
    /// ellipsoids, sandwich midpoint otherwise.
    pub fn kobayashi(&self, z: &P, w: &P) -> Result<DistanceEstimate> {
        match &self.kind {
            DomainKind::Ball => Ok(DistanceEstimate { value: kobayashi_ball(z, w)?, gap: ball_roundoff(z, w) }),
            DomainKind::Siegel => Ok(DistanceEstimate { value: kobayashi_siegel(z, w)?, gap: siegel_roundoff(z, w) }),
            DomainKind::Ellipsoid { coefficients } => {
                let m = |x: &P| P::new(x.coords.iter().zip(coefficients).map(|(c, a)| c * a.sqrt()).collect());
                let (mz, mw) = (m(z), m(w));
                Ok(DistanceEstimate { value: kobayashi_ball(&mz, &mw)?, gap: ball_roundoff(&mz, &mw) })
            }
            _ => {
                let s = kobayashi_sandwich(self, z, w)?;
                Ok(DistanceEstimate { value: s.midpoint(), gap: s.gap() })
            }
        }
    }

    /// Horosphere function with pole `pole` and center `center`.
    pub fn horo_value(&self, pole: &P, center: &P, z: &P) -> Result<f64> {
        match self.kind {
            DomainKind::Ball => ball::horo_value(pole, center, z),
            _ => Ok(horo_value_general(self, pole, center, z, &HoroConfig::default())?.value),
        }
    }
}

/// A distance value with the width of its enclosing interval.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DistanceEstimate {
    pub value: f64,
    pub gap: f64,
}

impl DistanceEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, gap: 0.0 }
    }
}

/// Rounding bound of the closed-form ball distance: `1 - |z|^2` carries an
/// absolute error of a few ulps, which the logarithm turns into a relative one.
pub fn ball_roundoff(z: &P, w: &P) -> f64 {
    64.0 * f64::EPSILON * (1.0 / (1.0 - z.norm_sqr()) + 1.0 / (1.0 - w.norm_sqr()))
}

/// Rounding bound of the closed-form Siegel distance, driven by the
/// cancellation in `Im w1 - |w'|^2`.
pub fn siegel_roundoff(u: &P, w: &P) -> f64 {
    let term = |x: &P| (1.0 + x[0].norm() + x.tail_norm_sqr()) / ball::siegel_rho(x);
    64.0 * f64::EPSILON * (term(u) + term(w))
}

/// Outcome of the strong convexity test at a boundary point.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub strongly_convex: bool,
    pub min_eigenvalue: f64,
    pub point: Vec<[f64; 2]>,
}

/// Threshold below which a tangential eigenvalue counts as zero.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Restricts the real Hessian of `rho` to the real tangent space at the
/// Newton projection of `zeta`.
pub fn strong_convexity_check(domain: &DomainSpec, zeta: &P) -> Result<ConvexityReport> {
    let z = domain.project_to_boundary(zeta)?;
    let g = domain.real_gradient(&z);
    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if gn < 1e-12 {
        return Err(HoloError::DegenerateBoundary);
    }
    let n = g.len();
    let g: Vec<f64> = g.iter().map(|x| x / gn).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut v: Vec<f64> = (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
        for b in std::iter::once(&g).chain(basis.iter()) {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn > 1e-6 && basis.len() < n - 1 {
            basis.push(v.into_iter().map(|x| x / vn).collect());
        }
    }
    let b = DMatrix::from_fn(n, n - 1, |i, j| basis[j][i]);
    let h = domain.real_hessian(&z);
    let t = b.transpose() * h * &b;
    let t = (&t + t.transpose()) * 0.5;
    let min_eigenvalue = t.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ConvexityReport { strongly_convex: min_eigenvalue > EIGEN_FLOOR, min_eigenvalue, point: z.pairs() })
}

/// Orthonormal frame at a boundary point: outward unit normal first, then
/// the complex tangent directions, with the Levi form of `rho / |nu|` on the
/// complex tangent space.
#[derive(Clone, Debug)]
pub struct BoundaryFrame {
    pub zeta: P,
    pub normal: P,
    pub nu_norm: f64,
    /// Unitary with `U normal = e1`; rows are the conjugated frame vectors.
    pub unitary: CMatrix,
    pub levi_tangent: CMatrix,
    pub levi_sqrt: CMatrix,
}

/// Hermitian square root of a positive semidefinite matrix.
pub fn hermitian_sqrt(m: &CMatrix) -> CMatrix {
    if m.nrows() == 0 {
        return m.clone();
    }
    let e = m.clone().symmetric_eigen();
    let d = CMatrix::from_diagonal(&e.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0)));
    &e.eigenvectors * d * e.eigenvectors.adjoint()
}

pub fn boundary_frame(domain: &DomainSpec, zeta: &P) -> Result<BoundaryFrame> {
    let zeta = domain.project_to_boundary(zeta)?;
    let nu = domain.nu(&zeta);
    let nu_norm = nu.norm();
    if nu_norm < 1e-12 {
        return Err(HoloError::DegenerateBoundary);
    }
    let q = domain.dim;
    let normal = nu.scale(1.0 / nu_norm);
    let mut frame = vec![normal.clone()];
    for j in 0..q {
        let mut v = P::basis(q, j);
        for b in &frame {
            v = &v - &b.scale_c(v.inner(b));
        }
        if v.norm() > 1e-6 && frame.len() < q {
            let n = v.norm();
            frame.push(v.scale(1.0 / n));
        }
    }
    let unitary = CMatrix::from_fn(q, q, |a, j| frame[a][j].conj());
    let lam = domain.levi(&zeta);
    let levi_tangent = CMatrix::from_fn(q - 1, q - 1, |a, b| {
        let (ba, bb) = (&frame[a + 1], &frame[b + 1]);
        let mut s = C64::zero();
        for j in 0..q {
            for k in 0..q {
                s += ba[k].conj() * lam[(j, k)] * bb[j];
            }
        }
        s / nu_norm
    });
    let levi_tangent = (&levi_tangent + levi_tangent.adjoint()) * C64::new(0.5, 0.0);
    let levi_sqrt = hermitian_sqrt(&levi_tangent);
    Ok(BoundaryFrame { zeta, normal, nu_norm, unitary, levi_tangent, levi_sqrt })
}

impl BoundaryFrame {
    /// `blockdiag(1, H^{1/2}) U`, the linear part of the osculating map.
    pub fn osculating_linear(&self) -> CMatrix {
        let q = self.unitary.nrows();
        let mut d = CMatrix::identity(q, q);
        d.view_mut((1, 1), (q - 1, q - 1)).copy_from(&self.levi_sqrt);
        d * &self.unitary
    }

    /// `w -> e1 + blockdiag(1, H^{1/2}) U (w - zeta)`: sends `zeta` to `e1`
    /// matching the normal derivative and the Levi form of the unit ball.
    pub fn osculating_map(&self, w: &P) -> P {
        let m = self.osculating_linear();
        let mut out = (w - &self.zeta).apply(&m);
        out[0] += C64::one();
        out
    }
}

/// Half-plane distance between two points of `{ Re < 0 }`.
fn left_half_plane_distance(a: C64, b: C64) -> f64 {
    let den = (a + b.conj()).norm_sqr();
    let r2 = ((a - b).norm_sqr() / den).min(1.0);
    let s = 4.0 * a.re * b.re / den;
    let r = r2.sqrt();
    if r < 0.5 {
        2.0 * r.atanh()
    } else {
        ((1.0 + r).powi(2) / s).ln()
    }
}

/// Unit-disc distance of two complex numbers.
fn disc_distance(a: C64, b: C64) -> Result<f64> {
    kobayashi_ball(&P::new(vec![a]), &P::new(vec![b]))
}

/// Witness of the lower bound.
#[derive(Clone, Debug, Serialize)]
pub struct LowerWitness {
    /// `supporting-functional` or `containing-ball`.
    pub family: String,
    pub normal: Vec<[f64; 2]>,
    pub support_point: Vec<[f64; 2]>,
    /// Radius of the tangent disc containing the image of the functional.
    pub disc_radius: f64,
}

/// Witness of the upper bound: a round disc inside the complex line through
/// the two points, in the slice coordinate `z + s (w - z)/|w - z|`.
#[derive(Clone, Debug, Serialize)]
pub struct UpperWitness {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Two-sided enclosure of the Kobayashi distance.
#[derive(Clone, Debug, Serialize)]
pub struct SandwichBound {
    pub lower: f64,
    pub upper: f64,
    pub lower_witness: Option<LowerWitness>,
    pub upper_witness: Option<UpperWitness>,
    /// Set when no containing disc was found.
    pub flag: Option<String>,
}

impl SandwichBound {
    pub fn midpoint(&self) -> f64 {
        if self.upper.is_finite() {
            0.5 * (self.lower + self.upper)
        } else {
            self.lower
        }
    }

    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Number of supporting directions scanned by the lower bound.
pub const SANDWICH_DIRECTIONS: usize = 512;

/// Radius of the smallest disc `D(-r, r)` containing `<Omega - b, n>`.
fn tangent_disc_radius(domain: &DomainSpec, n: &P, bn: C64) -> Option<f64> {
    let h = |t: f64| {
        let rot = C64::from_polar(1.0, t);
        let s = domain.support(&n.scale_c(rot))?.0;
        Some((s - (rot.conj() * bn).re) / (1.0 - t.cos()))
    };
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut thetas: Vec<f64> = (1..48).map(|i| TAU * i as f64 / 48.0).collect();
    for e in [0.1, 0.03, 0.01, 0.003] {
        thetas.push(e);
        thetas.push(TAU - e);
    }
    for t in thetas {
        let v = h(t)?;
        if v > best.1 {
            best = (t, v);
        }
    }
    let w = TAU / 48.0;
    let (lo, hi) = ((best.0 - w).max(1e-3), (best.0 + w).min(TAU - 1e-3));
    let (_, v) = golden_section_min(|t| -h(t).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-7);
    Some(best.1.max(-v).max(1e-300))
}

fn functional_bound(domain: &DomainSpec, n: &P, z: &P, w: &P) -> Option<(f64, LowerWitness)> {
    let (_, b) = domain.support(n)?;
    let bn = b.inner(n);
    let r = tangent_disc_radius(domain, n, bn)?;
    let l = |x: &P| (x - &b).inner(n);
    let to_half = |zeta: C64| zeta / (zeta + 2.0 * r);
    let (a, c) = (to_half(l(z)), to_half(l(w)));
    if !(a.re < 0.0 && c.re < 0.0) {
        return None;
    }
    let d = left_half_plane_distance(a, c);
    let wit = LowerWitness { family: "supporting-functional".into(), normal: n.pairs(), support_point: b.pairs(), disc_radius: r };
    Some((d, wit))
}

fn lower_bound(domain: &DomainSpec, z: &P, w: &P) -> (f64, Option<LowerWitness>) {
    let mut best = (0.0, None);
    if let Some(cb) = &domain.containing {
        if let Ok(d) = kobayashi_ball(&cb.map(z), &cb.map(w)) {
            let wit = LowerWitness { family: "containing-ball".into(), normal: vec![], support_point: cb.center.clone(), disc_radius: cb.scale };
            best = (d, Some(wit));
        }
    }
    let q = domain.dim;
    let mut dirs = fibonacci_directions(SANDWICH_DIRECTIONS, q);
    dirs.extend((0..q).map(|j| P::basis(q, j)));
    let chord = w - z;
    dirs.push(chord.scale(1.0 / chord.norm()));
    let mut best_dir = None;
    let mut best_fn = f64::NEG_INFINITY;
    for n in &dirs {
        if let Some((d, wit)) = functional_bound(domain, n, z, w) {
            if d > best_fn {
                best_fn = d;
                best_dir = Some(n.clone());
            }
            if d > best.0 {
                best = (d, Some(wit));
            }
        }
    }
    if let Some(start) = best_dir {
        let (n, _) = sphere_search(
            |n| functional_bound(domain, n, z, w).map_or(f64::INFINITY, |v| -v.0),
            &start,
            0.02,
            1e-5,
        );
        if let Some((d, wit)) = functional_bound(domain, &n, z, w) {
            if d > best.0 {
                best = (d, Some(wit));
            }
        }
    }
    best
}

const INFEASIBLE: f64 = 1e12;

fn upper_bound(domain: &DomainSpec, z: &P, w: &P) -> (f64, Option<UpperWitness>) {
    let chord = w - z;
    let len = chord.norm();
    let v = chord.scale(1.0 / len);
    let at = |s: C64| z + &v.scale_c(s);
    let radius = |s: C64| -> f64 {
        let x = at(s);
        if !domain.contains(&x) {
            return 0.0;
        }
        let exit = |t: f64| domain.ray_exit(&x, &v.scale_c(C64::from_polar(1.0, t)));
        let mut best = (0.0, f64::INFINITY);
        for i in 0..32 {
            let t = TAU * i as f64 / 32.0;
            let e = exit(t);
            if e < best.1 {
                best = (t, e);
            }
        }
        let w = TAU / 32.0;
        let (_, e) = golden_section_min(exit, best.0 - w, best.0 + w, 1e-9);
        best.1.min(e)
    };
    let objective = |p: &[f64]| -> f64 {
        let c = C64::new(p[0], p[1]);
        let r = radius(c);
        if !(r > 0.0) || !r.is_finite() {
            return f64::INFINITY;
        }
        let (a, b) = ((C64::zero() - c) / r, (C64::new(len, 0.0) - c) / r);
        // Infeasible centers still rank by how far the endpoints stick out.
        let out = a.norm().max(b.norm());
        if out >= 1.0 - 1e-15 {
            return INFEASIBLE + out;
        }
        disc_distance(a, b).unwrap_or(INFEASIBLE + out)
    };
    let mut starts = vec![C64::new(0.5 * len, 0.0), (&domain.center - z).inner(&v)];
    if let Some(cb) = &domain.containing {
        let c = P::new(cb.center.iter().map(|p| C64::new(p[0], p[1])).collect());
        starts.push((&c - z).inner(&v));
    }
    let mut best = (f64::INFINITY, None);
    for s in starts {
        let r0 = radius(s);
        let step = if r0 > 0.0 && r0.is_finite() { 0.25 * r0 } else { 0.25 * len };
        let (p, val) = pattern_search(objective, &[s.re, s.im], step, 1e-11, 2000);
        if val < best.0 && val < INFEASIBLE {
            let c = C64::new(p[0], p[1]);
            best = (val, Some(UpperWitness { center: [p[0], p[1]], radius: radius(c) }));
        }
    }
    best
}

/// Lower and upper bounds for `k_Omega(z, w)`.
///
/// The lower bound is the best of supporting functionals composed with the
/// smallest tangent disc containing their image and of the containing ball;
/// the upper bound is the best round disc in the complex line through `z`
/// and `w`.
pub fn kobayashi_sandwich(domain: &DomainSpec, z: &P, w: &P) -> Result<SandwichBound> {
    for p in [z, w] {
        if !domain.contains(p) {
            return Err(HoloError::OutOfDomain(format!("point outside {}", domain.name())));
        }
    }
    if z.dist(w) == 0.0 {
        return Ok(SandwichBound { lower: 0.0, upper: 0.0, lower_witness: None, upper_witness: None, flag: None });
    }
    if domain.kind == DomainKind::Siegel {
        let d = kobayashi_siegel(z, w)?;
        return Ok(SandwichBound { lower: d, upper: d, lower_witness: None, upper_witness: None, flag: None });
    }
    let (lower, lower_witness) = lower_bound(domain, z, w);
    let (upper, upper_witness) = upper_bound(domain, z, w);
    let flag = (!upper.is_finite()).then(|| "no containing disc found in the slice".to_string());
    // Both bounds are exact up to rounding on the ball; keep them ordered.
    let upper = if upper < lower { lower } else { upper };
    Ok(SandwichBound { lower, upper, lower_witness, upper_witness, flag })
}

/// Parameters of the radial horosphere estimator.
#[derive(Clone, Debug)]
pub struct HoroConfig {
    pub max_steps: usize,
    pub window: usize,
    pub tol: f64,
}

impl Default for HoroConfig {
    fn default() -> Self {
        Self { max_steps: 24, window: 4, tol: 1e-5 }
    }
}

/// Horosphere value with its convergence evidence.
#[derive(Clone, Debug, Serialize)]
pub struct HoroEstimate {
    pub value: f64,
    /// Half-width of the enclosure of the limit of distance differences.
    pub log_uncertainty: f64,
    pub report: ConvergenceReport,
}

/// `exp(lim [k(z, w_j) - k(p, w_j)])` along `w_j -> zeta` on the segment
/// from the domain center, with sandwich midpoints as distances.
pub fn horo_value_general(domain: &DomainSpec, pole: &P, center: &P, z: &P, cfg: &HoroConfig) -> Result<HoroEstimate> {
    for p in [pole, z] {
        if !domain.contains(p) {
            return Err(HoloError::OutOfDomain("point outside the domain".into()));
        }
    }
    if domain.rho(center).abs() > 1e-8 * (1.0 + center.norm_sqr()) {
        return Err(HoloError::InvalidCenter { norm: center.norm() });
    }
    let inward = &domain.center - center;
    let mut values = Vec::with_capacity(cfg.max_steps);
    let mut gaps = Vec::with_capacity(cfg.max_steps);
    let mut last = None;
    for j in 1..=cfg.max_steps {
        let wj = center + &inward.scale(0.5f64.powi(j as i32));
        if !domain.contains(&wj) {
            break;
        }
        let (a, b) = if z.dist(pole) == 0.0 {
            (DistanceEstimate::exact(0.0), DistanceEstimate::exact(0.0))
        } else {
            let a = kobayashi_sandwich(domain, z, &wj)?;
            let b = kobayashi_sandwich(domain, pole, &wj)?;
            (DistanceEstimate { value: a.midpoint(), gap: a.gap() }, DistanceEstimate { value: b.midpoint(), gap: b.gap() })
        };
        values.push(a.value - b.value);
        gaps.push(0.5 * (a.gap + b.gap));
        if values.len() >= cfg.window {
            let unc = gaps[gaps.len() - cfg.window..].iter().cloned().fold(0.0, f64::max);
            let rep = detect_limit(&values, cfg.window, cfg.tol + 2.0 * unc)?;
            if rep.converged {
                return Ok(HoroEstimate { value: rep.limit.unwrap().exp(), log_uncertainty: unc, report: rep });
            }
            last = Some(rep);
        }
    }
    let report = match last {
        Some(r) => r,
        None => detect_limit(&values, values.len().max(2), cfg.tol).unwrap_or(ConvergenceReport {
            values: values.clone(),
            converged: false,
            limit: None,
            window: cfg.window,
            tol: cfg.tol,
        }),
    };
    Err(HoloError::NonConvergent { what: "horosphere radial limit".into(), report: Some(report) })
}

/// Affine-then-Möbius embedding `w -> phi_c(c + s L (w - z))` into `B^q`.
#[derive(Clone, Debug)]
pub struct SqueezeEmbedding {
    pub base: P,
    pub linear: CMatrix,
    pub offset: P,
    pub scale: f64,
}

impl SqueezeEmbedding {
    pub fn affine(&self, w: &P) -> P {
        &self.offset + &(w - &self.base).apply(&self.linear).scale(self.scale)
    }

    pub fn apply(&self, w: &P) -> P {
        ball::mobius(&self.offset, &self.affine(w))
    }
}

/// Sampled verification statistics of a squeezing certificate.
#[derive(Clone, Debug, Serialize)]
pub struct SqueezeWitness {
    pub boundary_samples: usize,
    pub interior_samples: usize,
    pub max_image_norm: f64,
    pub baseline: f64,
    pub method: String,
}

/// Lower bound for the squeezing function with its embedding.
#[derive(Clone, Debug)]
pub struct SqueezeCertificate {
    pub embedding: SqueezeEmbedding,
    pub inner_radius: f64,
    pub witness: SqueezeWitness,
}

/// Optimizer budget for [`squeeze_lower`].
#[derive(Clone, Debug)]
pub struct SqueezeConfig {
    pub iterations: usize,
    pub optimization_samples: usize,
    pub verification_samples: usize,
    pub seed: u64,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        Self { iterations: 200, optimization_samples: 512, verification_samples: 10_000, seed: 7 }
    }
}

/// Boundary points seen from `z`.
fn boundary_samples_from(domain: &DomainSpec, z: &P, dirs: &[P]) -> Vec<P> {
    dirs.iter()
        .filter_map(|u| {
            let t = domain.ray_exit(z, u);
            t.is_finite().then(|| z + &u.scale(t))
        })
        .collect()
}

/// Largest `s` with all `|c + s u_k| <= 1`, and the resulting inner radius.
fn squeeze_value(offset: &P, us: &[P]) -> Option<(f64, f64)> {
    let c2 = offset.norm_sqr();
    if !(c2 < 1.0) {
        return None;
    }
    let mut s = f64::INFINITY;
    for u in us {
        let a = u.norm_sqr();
        if a == 0.0 {
            return None;
        }
        let b = offset.inner(u).re;
        let disc = (b * b + a * (1.0 - c2)).sqrt();
        let root = if b > 0.0 { (1.0 - c2) / (b + disc) } else { (disc - b) / a };
        s = s.min(root);
    }
    let mut r2 = f64::INFINITY;
    for u in us {
        let x = offset + &u.scale(s);
        let den = (C64::one() - x.inner(offset)).norm_sqr();
        let v = 1.0 - (1.0 - c2) * (1.0 - x.norm_sqr()).max(0.0) / den;
        r2 = r2.min(v);
    }
    Some((s, r2.max(0.0).sqrt().min(1.0)))
}

fn pack(l: &CMatrix, c: &P) -> Vec<f64> {
    let mut v: Vec<f64> = l.iter().flat_map(|x| [x.re, x.im]).collect();
    v.extend(c.to_real_vec());
    v
}

fn unpack(v: &[f64], q: usize) -> (CMatrix, P) {
    let l = CMatrix::from_iterator(q, q, v[..2 * q * q].chunks(2).map(|c| C64::new(c[0], c[1])));
    (l, CPoint::from_real_vec(&v[2 * q * q..]))
}

/// Squeezing lower bound at `z` by local search over affine maps followed by
/// a ball automorphism, starting from the scaling embedding, the containing
/// ball, the osculating ball at the nearest boundary point and `warm`.
pub fn squeeze_lower(domain: &DomainSpec, z: &P, cfg: &SqueezeConfig, warm: Option<&SqueezeEmbedding>) -> Result<SqueezeCertificate> {
    if !domain.contains(z) {
        return Err(HoloError::OutOfDomain("squeeze base point outside the domain".into()));
    }
    if !domain.is_bounded() {
        return Err(HoloError::Precondition("squeezing needs a bounded domain".into()));
    }
    let q = domain.dim;
    let opt_pts = boundary_samples_from(domain, z, &fibonacci_directions(cfg.optimization_samples, q));
    let mut sampler = SeededSampler::new(cfg.seed, q);
    let ver_dirs: Vec<P> = (0..cfg.verification_samples).map(|_| sampler.sphere()).collect();
    let mut all_pts = opt_pts.clone();
    all_pts.extend(boundary_samples_from(domain, z, &ver_dirs));

    let eval = |l: &CMatrix, c: &P, pts: &[P]| -> Option<(f64, f64)> {
        let us: Vec<P> = pts.iter().map(|b| (b - z).apply(l)).collect();
        squeeze_value(c, &us)
    };
    let ident = CMatrix::identity(q, q);
    let baseline = eval(&ident, &P::zeros(q), &all_pts).map(|v| v.1).unwrap_or(0.0);

    let mut inits: Vec<(CMatrix, P, &str)> = vec![(ident.clone(), P::zeros(q), "scaling")];
    if let Some(cb) = &domain.containing {
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(q, cb.diag.iter().map(|&x| C64::new(x, 0.0))));
        inits.push((d, cb.map(z), "containing-ball"));
    }
    if let Ok((zeta, _)) = domain.nearest_boundary(z) {
        if let Ok(frame) = boundary_frame(domain, &zeta) {
            let c = frame.osculating_map(z);
            if c.norm() < 1.0 {
                inits.push((frame.osculating_linear(), c, "osculating-ball"));
            }
        }
    }
    if let Some(wm) = warm {
        inits.push((wm.linear.clone(), wm.affine(z), "warm-start"));
    }

    let mut best: Option<(f64, CMatrix, P, String)> = None;
    for (l0, c0, tag) in inits {
        let Some((_, r0)) = eval(&l0, &c0, &opt_pts) else { continue };
        let scale = l0.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-3);
        let step = 0.05 * scale.min(1.0) * (1.0 - c0.norm()).max(1e-6).min(1.0);
        let (v, _) = pattern_search(
            |v| {
                let (l, c) = unpack(v, q);
                eval(&l, &c, &opt_pts).map_or(f64::INFINITY, |x| -x.1)
            },
            &pack(&l0, &c0),
            step.max(1e-9),
            step * 1e-4,
            cfg.iterations,
        );
        let (l, c) = unpack(&v, q);
        for (l, c) in [(l, c), (l0, c0)] {
            if let Some((_, r)) = eval(&l, &c, &all_pts) {
                let _ = r0;
                if best.as_ref().map_or(true, |b| r > b.0) {
                    best = Some((r, l, c, tag.to_string()));
                }
            }
        }
    }
    let (r, linear, offset, method) = best.ok_or_else(|| HoloError::Precondition("no admissible embedding".into()))?;
    let (r, linear, offset, method) = if r >= baseline {
        (r, linear, offset, method)
    } else {
        (baseline, ident, P::zeros(q), "scaling".to_string())
    };
    let us: Vec<P> = all_pts.iter().map(|b| (b - z).apply(&linear)).collect();
    let (s, _) = squeeze_value(&offset, &us).expect("verified embedding");
    let embedding = SqueezeEmbedding { base: z.clone(), linear, offset, scale: s };
    let mut max_image_norm = 0.0f64;
    let interior: Vec<P> = (0..1000).map(|_| domain.sample_interior(&mut sampler, 1.0)).collect();
    for p in &interior {
        max_image_norm = max_image_norm.max(embedding.apply(p).norm());
    }
    if max_image_norm > 1.0 + 1e-9 {
        return Err(HoloError::InvariantViolation(format!("embedding image leaves the ball ({max_image_norm})")));
    }
    Ok(SqueezeCertificate {
        embedding,
        inner_radius: r,
        witness: SqueezeWitness {
            boundary_samples: all_pts.len(),
            interior_samples: interior.len(),
            max_image_norm,
            baseline,
            method,
        },
    })
}

/// One point of a squeezing trend.
#[derive(Clone, Debug, Serialize)]
pub struct TrendPoint {
    pub boundary_distance: f64,
    pub squeeze: f64,
}

/// Squeezing trend toward a boundary point.
#[derive(Clone, Debug, Serialize)]
pub struct SqueezeTrend {
    pub points: Vec<TrendPoint>,
    /// `weakly convex center` when the boundary point fails strong convexity.
    pub flag: Option<String>,
}

/// Evaluates [`squeeze_lower`] at `zeta + t_j (inward)` with `t_j` halving,
/// reusing each embedding as a warm start for the next point.
pub fn squeeze_trend(domain: &DomainSpec, zeta: &P, inward: &P, n_points: usize, cfg: &SqueezeConfig) -> Result<SqueezeTrend> {
    let zeta = domain.project_to_boundary(zeta)?;
    let conv = strong_convexity_check(domain, &zeta)?;
    let u = inward.scale(1.0 / inward.norm());
    let t0 = 0.5 * domain.ray_exit(&(&zeta + &u.scale(1e-9)), &u).min(1.0);
    let mut points = Vec::with_capacity(n_points);
    let mut warm: Option<SqueezeEmbedding> = None;
    for j in 0..n_points {
        let z = &zeta + &u.scale(t0 * 0.5f64.powi(j as i32));
        let cert = squeeze_lower(domain, &z, cfg, warm.as_ref())?;
        points.push(TrendPoint { boundary_distance: domain.boundary_distance(&z)?, squeeze: cert.inner_radius });
        warm = Some(cert.embedding);
    }
    let flag = (!conv.strongly_convex).then(|| "weakly convex center".to_string());
    Ok(SqueezeTrend { points, flag })
}
