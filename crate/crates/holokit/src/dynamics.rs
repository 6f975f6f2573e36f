//! Orbit analytics for holomorphic self-maps: iteration, forward steps,
//! divergence rate, boundary dilation, Denjoy-Wolff classification and
//! Julia's lemma checks.

use crate::ball::{
    self, cayley, cayley_inverse, horo_siegel_infinity, mobius, richardson_columns, siegel_recenter_inverse,
    siegel_rho, BallAutomorphism,
};
use crate::convex::{horo_value_general, DistanceEstimate, DomainKind, DomainSpec, HoroConfig, Polynomial};
use crate::numerics::{detect_limit, monotone_liminf, numerical_jacobian, LimitMode, SeededSampler, DEFAULT_STEP};
use crate::{CMatrix, ConvergenceReport, HoloError, Point, Result, C64};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

type P = Point;

pub type MapFn = Arc<dyn Fn(&P) -> P + Send + Sync>;
pub type JacFn = Arc<dyn Fn(&P) -> CMatrix + Send + Sync>;

/// Interior samples checked when a map is constructed.
pub const MEMBERSHIP_SAMPLES: usize = 1000;
/// Orbits are truncated once their boundary margin drops below this.
pub const EXIT_MARGIN: f64 = 1e-12;

/// A holomorphic map between two domains.
#[derive(Clone)]
pub struct HoloMap {
    pub name: String,
    pub domain: DomainSpec,
    pub codomain: DomainSpec,
    eval: MapFn,
    jac: Option<JacFn>,
    inverse: Option<MapFn>,
    pub is_automorphism: bool,
}

impl fmt::Debug for HoloMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HoloMap")
            .field("name", &self.name)
            .field("domain", &self.domain.name())
            .field("codomain", &self.codomain.name())
            .field("exact_jacobian", &self.jac.is_some())
            .field("is_automorphism", &self.is_automorphism)
            .finish()
    }
}

impl HoloMap {
    /// Wraps an evaluator after checking that [`MEMBERSHIP_SAMPLES`] seeded
    /// interior points land in the codomain.
    pub fn new<F>(name: impl Into<String>, domain: DomainSpec, codomain: DomainSpec, eval: F) -> Result<Self>
    where
        F: Fn(&P) -> P + Send + Sync + 'static,
    {
        let name = name.into();
        let eval: MapFn = Arc::new(eval);
        let mut s = SeededSampler::new(0x5eed, domain.dim);
        for i in 0..MEMBERSHIP_SAMPLES {
            let x = domain.sample_interior(&mut s, 0.95);
            let y = eval(&x);
            if !codomain.contains(&y) {
                return Err(HoloError::InvariantViolation(format!(
                    "{name}: membership sample {i} is mapped outside {}",
                    codomain.name()
                )));
            }
        }
        Ok(Self { name, domain, codomain, eval, jac: None, inverse: None, is_automorphism: false })
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&P) -> CMatrix + Send + Sync + 'static,
    {
        self.jac = Some(Arc::new(jac));
        self
    }

    /// Attaches an inverse and marks the map as an automorphism.
    pub fn with_inverse<F>(mut self, inv: F) -> Self
    where
        F: Fn(&P) -> P + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inv));
        self.is_automorphism = true;
        self
    }

    pub fn apply(&self, z: &P) -> P {
        (self.eval)(z)
    }

    pub fn apply_inverse(&self, w: &P) -> Option<P> {
        self.inverse.as_ref().map(|g| g(w))
    }

    pub fn evaluator(&self) -> MapFn {
        self.eval.clone()
    }

    pub fn has_exact_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// Exact Jacobian when supplied, central differences otherwise.
    pub fn jacobian(&self, z: &P) -> Result<CMatrix> {
        match &self.jac {
            Some(j) => Ok(j(z)),
            None => {
                let margin = self.domain.interior_margin(z);
                numerical_jacobian(|x| self.apply(x), z, DEFAULT_STEP.min(margin / 4.0), margin)
            }
        }
    }

    pub fn iterate_point(&self, z: &P, n: usize) -> P {
        (0..n).fold(z.clone(), |x, _| self.apply(&x))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &HoloMap) -> Result<HoloMap> {
        if inner.codomain != self.domain {
            return Err(HoloError::Precondition(format!(
                "cannot compose: {} maps into {}, {} starts from {}",
                inner.name,
                inner.codomain.name(),
                self.name,
                self.domain.name()
            )));
        }
        let (f, g) = (self.eval.clone(), inner.eval.clone());
        let mut out = HoloMap::new(format!("{}∘{}", self.name, inner.name), inner.domain.clone(), self.codomain.clone(), {
            let (f, g) = (f.clone(), g.clone());
            move |z: &P| f(&g(z))
        })?;
        if let (Some(jf), Some(jg)) = (&self.jac, &inner.jac) {
            let (jf, jg, g) = (jf.clone(), jg.clone(), g.clone());
            out = out.with_jacobian(move |z: &P| jf(&g(z)) * jg(z));
        }
        if let (Some(fi), Some(gi)) = (&self.inverse, &inner.inverse) {
            let (fi, gi) = (fi.clone(), gi.clone());
            out = out.with_inverse(move |w: &P| gi(&fi(w)));
        }
        Ok(out)
    }

    pub fn identity(domain: DomainSpec) -> Result<Self> {
        let q = domain.dim;
        Ok(HoloMap::new("identity", domain.clone(), domain, |z: &P| z.clone())?
            .with_jacobian(move |_| CMatrix::identity(q, q))
            .with_inverse(|w: &P| w.clone()))
    }

    /// `z -> c z`.
    pub fn scaling(domain: DomainSpec, c: C64) -> Result<Self> {
        let q = domain.dim;
        Ok(HoloMap::new(format!("scaling({c})"), domain.clone(), domain, move |z: &P| z.scale_c(c))?
            .with_jacobian(move |_| CMatrix::identity(q, q) * c))
    }

    pub fn ball_automorphism(aut: BallAutomorphism<f64>) -> Result<Self> {
        let q = aut.a.dim();
        let inv = aut.inverse();
        let fwd = aut.clone();
        Ok(HoloMap::new("ball-automorphism", DomainSpec::ball(q), DomainSpec::ball(q), move |z: &P| fwd.apply(z))?
            .with_inverse(move |w: &P| inv.apply(w)))
    }

    /// Hyperbolic automorphism of `B^q` translating along the `z1` axis:
    /// `((z1 + a)/(1 + a z1), sqrt(1 - a^2) z' / (1 + a z1))`. For `a > 0` the
    /// Denjoy-Wolff point is `e1` with dilation `(1 - a)/(1 + a)`.
    pub fn ball_translation(q: usize, a: f64) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return Err(HoloError::Precondition(format!("translation parameter {a} must lie in (-1, 1)")));
        }
        let make = move |a: f64| {
            move |z: &P| {
                let d = C64::new(1.0, 0.0) + z[0] * a;
                let s = (1.0 - a * a).sqrt();
                let mut w = z.scale_c(C64::new(s, 0.0) / d);
                w[0] = (z[0] + a) / d;
                w
            }
        };
        Ok(HoloMap::new(format!("ball-translation({a})"), DomainSpec::ball(q), DomainSpec::ball(q), make(a))?
            .with_inverse(make(-a)))
    }

    /// Affine map `(alpha z1 + shift, beta_j z_j)` of `H^q`, `q = 1 + beta.len()`.
    /// It is an automorphism when every `|beta_j|^2 = alpha`.
    pub fn siegel_affine(alpha: f64, shift: f64, beta: &[C64]) -> Result<Self> {
        if !(alpha > 0.0) || beta.iter().any(|b| b.norm_sqr() > alpha * (1.0 + 1e-12)) {
            return Err(HoloError::Precondition("need alpha > 0 and |beta_j|^2 <= alpha".into()));
        }
        let q = 1 + beta.len();
        let h = DomainSpec::siegel(q);
        let b = beta.to_vec();
        let name = format!("siegel-affine(alpha={alpha}, shift={shift}, beta={beta:?})");
        let bj = b.clone();
        let mut map = HoloMap::new(name, h.clone(), h, move |z: &P| {
            let mut w = z.clone();
            w[0] = z[0] * alpha + shift;
            for j in 1..z.dim() {
                w[j] = z[j] * bj[j - 1];
            }
            w
        })?;
        let bj = b.clone();
        map = map.with_jacobian(move |_| {
            let mut m = CMatrix::zeros(q, q);
            m[(0, 0)] = C64::new(alpha, 0.0);
            for j in 1..q {
                m[(j, j)] = bj[j - 1];
            }
            m
        });
        if b.iter().all(|x| (x.norm_sqr() - alpha).abs() <= 1e-12 * alpha) {
            map = map.with_inverse(move |w: &P| {
                let mut z = w.clone();
                z[0] = (w[0] - shift) / alpha;
                for j in 1..w.dim() {
                    z[j] = w[j] / b[j - 1];
                }
                z
            });
        }
        Ok(map)
    }

    /// Hyperbolic normal form `(z1 / lambda, e^{i t_j} z'_j / sqrt(lambda))`.
    pub fn siegel_hyperbolic(lambda: f64, angles: &[f64]) -> Result<Self> {
        let beta: Vec<C64> = angles.iter().map(|&t| C64::from_polar(1.0 / lambda.sqrt(), t)).collect();
        Self::siegel_affine(1.0 / lambda, 0.0, &beta)
    }

    /// Parabolic normal form `(z1 + sign, e^{i t_j} z'_j)`.
    pub fn siegel_parabolic(sign: f64, angles: &[f64]) -> Result<Self> {
        let beta: Vec<C64> = angles.iter().map(|&t| C64::from_polar(1.0, t)).collect();
        Self::siegel_affine(1.0, sign.signum(), &beta)
    }

    /// Parabolic normal form `(z1 - 2 z'_1 + i, z'_1 - i, e^{i t_j} z'_j)` on
    /// `H^q`, `q = 2 + angles.len()`.
    pub fn siegel_heisenberg(angles: &[f64]) -> Result<Self> {
        let q = 2 + angles.len();
        let h = DomainSpec::siegel(q);
        let rot: Vec<C64> = angles.iter().map(|&t| C64::from_polar(1.0, t)).collect();
        let i = C64::new(0.0, 1.0);
        let r = rot.clone();
        let map = HoloMap::new("siegel-heisenberg", h.clone(), h, move |z: &P| {
            let mut w = z.clone();
            w[0] = z[0] - z[1] * 2.0 + i;
            w[1] = z[1] - i;
            for j in 2..z.dim() {
                w[j] = z[j] * r[j - 2];
            }
            w
        })?;
        Ok(map.with_inverse(move |w: &P| {
            let mut z = w.clone();
            z[1] = w[1] + i;
            z[0] = w[0] + z[1] * 2.0 - i;
            for j in 2..w.dim() {
                z[j] = w[j] / rot[j - 2];
            }
            z
        }))
    }

    /// Holomorphic polynomial map with exact Jacobian.
    pub fn polynomial(domain: DomainSpec, codomain: DomainSpec, components: Vec<Polynomial>) -> Result<Self> {
        if components.len() != codomain.dim || components.iter().any(|p| p.dim != domain.dim) {
            return Err(HoloError::Precondition("polynomial component dimensions do not match".into()));
        }
        if components.iter().any(|p| p.terms.iter().any(|t| t.beta.iter().any(|&b| b > 0))) {
            return Err(HoloError::Precondition("polynomial map must not depend on conj(z)".into()));
        }
        let q = domain.dim;
        let derivs: Vec<Vec<Polynomial>> =
            components.iter().map(|p| (0..q).map(|k| p.derivative(k, false)).collect()).collect();
        let comps = components.clone();
        let map = HoloMap::new("polynomial", domain, codomain, move |z: &P| {
            P::new(comps.iter().map(|p| p.eval(z)).collect())
        })?;
        Ok(map.with_jacobian(move |z: &P| {
            CMatrix::from_fn(derivs.len(), q, |i, k| derivs[i][k].eval(z))
        }))
    }

    /// `C^{-1} ∘ g ∘ C` on `B^q` for a self-map `g` of `H^q`.
    pub fn cayley_conjugate(g: &HoloMap) -> Result<Self> {
        if g.domain.kind != DomainKind::Siegel || g.codomain.kind != DomainKind::Siegel {
            return Err(HoloError::Precondition("Cayley conjugation needs a self-map of the Siegel half-space".into()));
        }
        let q = g.domain.dim;
        let b = DomainSpec::ball(q);
        let ge = g.eval.clone();
        let nan = P::new(vec![C64::new(f64::NAN, 0.0); q]);
        let n2 = nan.clone();
        let mut out = HoloMap::new(format!("cayley({})", g.name), b.clone(), b, move |z: &P| {
            cayley(z).and_then(|w| cayley_inverse(&ge(&w))).unwrap_or_else(|_| nan.clone())
        })?;
        if let Some(gi) = &g.inverse {
            let gi = gi.clone();
            out = out.with_inverse(move |z: &P| cayley(z).and_then(|w| cayley_inverse(&gi(&w))).unwrap_or_else(|_| n2.clone()));
        }
        Ok(out)
    }

    /// Automorphism of the egg `{|z1|^2 + |z2|^4 < 1}`:
    /// `((z1 - a)/(1 - a z1), (1 - a^2)^{1/4} z2 / sqrt(1 - a z1))`.
    pub fn egg_automorphism(a: f64) -> Result<Self> {
        if !(a.abs() < 1.0) {
            return Err(HoloError::Precondition(format!("egg automorphism parameter {a} must lie in (-1, 1)")));
        }
        let make = move |a: f64| {
            move |z: &P| {
                let d = C64::new(1.0, 0.0) - z[0] * a;
                let mut w = z.clone();
                w[0] = (z[0] - a) / d;
                w[1] = z[1] * (1.0 - a * a).powf(0.25) / d.sqrt();
                w
            }
        };
        let egg = DomainSpec::egg();
        Ok(HoloMap::new(format!("egg-automorphism({a})"), egg.clone(), egg, make(a))?.with_inverse(make(-a)))
    }
}

/// A boundary point of a domain; `Infinity` only for the Siegel half-space.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryPoint {
    Finite(P),
    Infinity,
}

/// Whether the domain has an exact biholomorphic chart onto the ball.
pub fn has_ball_chart(domain: &DomainSpec) -> bool {
    matches!(domain.kind, DomainKind::Ball | DomainKind::Siegel | DomainKind::Ellipsoid { .. })
}

/// Exact chart onto `B^q`: identity on the ball, inverse Cayley transform on
/// the Siegel half-space, coordinate scaling on ellipsoids.
pub fn to_ball(domain: &DomainSpec, z: &P) -> Result<P> {
    match &domain.kind {
        DomainKind::Ball => Ok(z.clone()),
        DomainKind::Siegel => cayley_inverse(z),
        DomainKind::Ellipsoid { coefficients } => {
            Ok(P::new(z.coords.iter().zip(coefficients).map(|(c, a)| c * a.sqrt()).collect()))
        }
        _ => Err(HoloError::Precondition(format!("{} has no exact ball chart", domain.name()))),
    }
}

/// Inverse of [`to_ball`].
pub fn from_ball(domain: &DomainSpec, w: &P) -> Result<P> {
    match &domain.kind {
        DomainKind::Ball => Ok(w.clone()),
        DomainKind::Siegel => cayley(w),
        DomainKind::Ellipsoid { coefficients } => {
            Ok(P::new(w.coords.iter().zip(coefficients).map(|(c, a)| c / a.sqrt()).collect()))
        }
        _ => Err(HoloError::Precondition(format!("{} has no exact ball chart", domain.name()))),
    }
}

/// Image of a boundary point on the unit sphere under [`to_ball`].
pub fn boundary_to_ball(domain: &DomainSpec, zeta: &BoundaryPoint) -> Result<P> {
    match (&domain.kind, zeta) {
        (DomainKind::Siegel, BoundaryPoint::Infinity) => Ok(P::basis(domain.dim, 0)),
        (_, BoundaryPoint::Infinity) => Err(HoloError::Precondition("infinity is a boundary point only of H^q".into())),
        (_, BoundaryPoint::Finite(z)) => {
            let b = to_ball(domain, z)?;
            let n = b.norm();
            Ok(b.scale(1.0 / n))
        }
    }
}

/// Inverse of [`boundary_to_ball`]; sphere points within `1e-12` of `e1`
/// map to infinity on the Siegel half-space.
pub fn boundary_from_ball(domain: &DomainSpec, zeta: &P) -> Result<BoundaryPoint> {
    if domain.kind == DomainKind::Siegel && zeta.dist(&P::basis(domain.dim, 0)) < 1e-12 {
        return Ok(BoundaryPoint::Infinity);
    }
    Ok(BoundaryPoint::Finite(from_ball(domain, zeta)?))
}

/// Horosphere function `h_{zeta, pole}(z)` of the domain.
pub fn horo(domain: &DomainSpec, pole: &P, zeta: &BoundaryPoint, z: &P) -> Result<f64> {
    match (&domain.kind, zeta) {
        (DomainKind::Siegel, BoundaryPoint::Infinity) => horo_siegel_infinity(pole, z),
        (DomainKind::Ball, BoundaryPoint::Finite(c)) => ball::horo_value(pole, c, z),
        _ if has_ball_chart(domain) => {
            ball::horo_value(&to_ball(domain, pole)?, &boundary_to_ball(domain, zeta)?, &to_ball(domain, z)?)
        }
        (_, BoundaryPoint::Finite(c)) => Ok(horo_value_general(domain, pole, c, z, &HoroConfig::default())?.value),
        (_, BoundaryPoint::Infinity) => Err(HoloError::Precondition("infinity is a boundary point only of H^q".into())),
    }
}

/// Point at parameter `d in (0, 1]` on the approach ray from `pole` to
/// `zeta`: the geodesic ray `phi(1 - d)` where an exact ball chart exists,
/// the segment `zeta + d (pole - zeta)` otherwise.
pub fn approach_point(domain: &DomainSpec, pole: &P, zeta: &BoundaryPoint, d: f64) -> Result<P> {
    if domain.kind == DomainKind::Siegel && *zeta == BoundaryPoint::Infinity {
        let mut v = P::zeros(domain.dim);
        v[0] = C64::new(0.0, 1.0 / d);
        return Ok(siegel_recenter_inverse(pole, &v));
    }
    if has_ball_chart(domain) {
        let pb = to_ball(domain, pole)?;
        let zb = boundary_to_ball(domain, zeta)?;
        let x = if pb.norm_sqr() == 0.0 {
            zb.scale(1.0 - d)
        } else {
            let v = mobius(&pb, &zb);
            let v = v.scale(1.0 / v.norm());
            mobius(&pb, &v.scale(1.0 - d))
        };
        return from_ball(domain, &x);
    }
    match zeta {
        BoundaryPoint::Finite(c) => Ok(c + &(pole - c).scale(d)),
        BoundaryPoint::Infinity => Err(HoloError::Precondition("infinity is a boundary point only of H^q".into())),
    }
}

fn distance(domain: &DomainSpec, z: &P, w: &P) -> Result<DistanceEstimate> {
    domain.kobayashi(z, w)
}

/// Direction of an orbit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitDirection {
    Forward,
    Backward,
}

/// Horosphere values along an orbit.
#[derive(Clone, Debug, Serialize)]
pub struct HoroTrack {
    pub pole: P,
    pub center: BoundaryPoint,
    pub values: Vec<f64>,
}

/// A forward or backward orbit with per-index Kobayashi statistics.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitRecord {
    pub points: Vec<P>,
    pub direction: OrbitDirection,
    pub base: P,
    /// `k(points[n], base)`.
    pub distance_to_base: Vec<f64>,
    /// `k(points[n], points[n + 1])`.
    pub steps: Vec<f64>,
    /// Largest sandwich gap among the distances at each index.
    pub gaps: Vec<f64>,
    pub horo: Option<HoroTrack>,
    /// Koranyi function at the orbit points, for backward orbits built in a
    /// ball chart; empty otherwise.
    pub koranyi: Vec<f64>,
    /// The orbit left the numerical interior and was truncated.
    pub exited: bool,
    /// Tolerance of the orbit relation `f(points[n+1]) = points[n]` for
    /// backward orbits, `0` for forward ones.
    pub solver_tolerance: f64,
    pub notes: Vec<String>,
}

impl OrbitRecord {
    /// Computes the per-index statistics of a list of points.
    pub fn from_points(domain: &DomainSpec, points: Vec<P>, direction: OrbitDirection, exited: bool) -> Result<Self> {
        let base = points.first().cloned().ok_or(HoloError::NotEnoughData { needed: 1, got: 0 })?;
        let mut distance_to_base = Vec::with_capacity(points.len());
        let mut steps = Vec::with_capacity(points.len());
        let mut gaps = Vec::with_capacity(points.len());
        for (n, x) in points.iter().enumerate() {
            let d = distance(domain, &base, x)?;
            distance_to_base.push(d.value);
            let mut gap = d.gap;
            if let Some(y) = points.get(n + 1) {
                let s = distance(domain, x, y)?;
                steps.push(s.value);
                gap = gap.max(s.gap);
            }
            gaps.push(gap);
        }
        Ok(Self {
            points,
            direction,
            base,
            distance_to_base,
            steps,
            gaps,
            horo: None,
            koranyi: vec![],
            exited,
            solver_tolerance: 0.0,
            notes: vec![],
        })
    }

    /// Adds horosphere values at `(pole, center)`.
    pub fn with_horo(mut self, domain: &DomainSpec, pole: &P, center: &BoundaryPoint) -> Result<Self> {
        let values = self.points.iter().map(|x| horo(domain, pole, center, x)).collect::<Result<Vec<_>>>()?;
        self.horo = Some(HoroTrack { pole: pole.clone(), center: center.clone(), values });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Forward orbit points `x, f(x), ..., f^n(x)`, stopping early when the
/// boundary margin drops below [`EXIT_MARGIN`]. The flag reports truncation.
pub fn orbit_points(f: &HoloMap, x: &P, n: usize) -> Result<(Vec<P>, bool)> {
    if !f.domain.contains(x) {
        return Err(HoloError::OutOfDomain(format!("orbit start outside {}", f.domain.name())));
    }
    let mut pts = Vec::with_capacity(n + 1);
    pts.push(x.clone());
    for _ in 0..n {
        let y = f.apply(pts.last().unwrap());
        if !f.domain.contains(&y) || f.domain.interior_margin(&y) < EXIT_MARGIN || !in_ball_chart_range(&f.domain, &y) {
            return Ok((pts, true));
        }
        pts.push(y);
    }
    Ok((pts, false))
}

// Points of H^q whose ball image sits within the guard of the sphere are
// unusable for the exact metric even though their Siegel margin is large.
fn in_ball_chart_range(domain: &DomainSpec, y: &P) -> bool {
    if domain.kind != DomainKind::Siegel {
        return true;
    }
    let r = siegel_rho(y);
    let scale = (y[0] + C64::new(0.0, 1.0)).norm_sqr() / 4.0;
    r / scale > 1e-280
}

/// Forward orbit of length `n + 1` with its statistics.
pub fn iterate(f: &HoloMap, x: &P, n: usize) -> Result<OrbitRecord> {
    if n == 0 {
        return Err(HoloError::Precondition("iterate needs n >= 1".into()));
    }
    let (pts, exited) = orbit_points(f, x, n)?;
    let mut rec = OrbitRecord::from_points(&f.domain, pts, OrbitDirection::Forward, exited)?;
    if exited {
        rec.notes.push(format!("orbit left the numerical interior after {} steps", rec.len() - 1));
    }
    Ok(rec)
}

/// Parameters of the step sequences.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepConfig {
    /// Orbit length used for the sequence.
    pub n_max: usize,
    pub window: usize,
    pub tol: f64,
    /// Allowed violation of monotonicity.
    pub slack: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { n_max: 200, window: 8, tol: 1e-9, slack: 1e-9 }
    }
}

/// `k(points[n], points[n + m])` for every admissible `n`, with gaps.
pub fn step_sequence(domain: &DomainSpec, points: &[P], m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut vals = vec![];
    let mut gaps = vec![];
    for n in 0..points.len().saturating_sub(m) {
        let d = distance(domain, &points[n], &points[n + m])?;
        vals.push(d.value);
        gaps.push(d.gap);
    }
    Ok((vals, gaps))
}

/// Checks `values` for monotone non-increase (`increasing = false`) or
/// non-decrease within `slack` plus the local gaps.
pub fn check_monotone(values: &[f64], gaps: &[f64], increasing: bool, slack: f64) -> Result<()> {
    for n in 1..values.len() {
        let jump = if increasing { values[n - 1] - values[n] } else { values[n] - values[n - 1] };
        if jump > slack + gaps[n] + gaps[n - 1] {
            return Err(HoloError::MetricInconsistency(format!(
                "step sequence not monotone at index {n} (jump {jump:e})"
            )));
        }
    }
    Ok(())
}

/// Forward `m`-step `s_m(x) = lim_n k(f^n x, f^{n+m} x)`.
pub fn forward_step(f: &HoloMap, x: &P, m: usize, cfg: &StepConfig) -> Result<ConvergenceReport> {
    if m == 0 {
        return Err(HoloError::Precondition("forward step needs m >= 1".into()));
    }
    let (pts, _) = orbit_points(f, x, cfg.n_max + m)?;
    forward_step_from_points(&f.domain, &pts, m, cfg)
}

/// [`forward_step`] on precomputed orbit points.
pub fn forward_step_from_points(domain: &DomainSpec, pts: &[P], m: usize, cfg: &StepConfig) -> Result<ConvergenceReport> {
    let (mut vals, gaps) = step_sequence(domain, pts, m)?;
    check_monotone(&vals, &gaps, false, cfg.slack)?;
    // With an exact metric the gap is a rounding bound; past the first
    // index where it exceeds the tolerance the values carry no information.
    if has_ball_chart(domain) {
        if let Some(cut) = gaps.iter().position(|&g| g > cfg.tol) {
            vals.truncate(cut.max(cfg.window));
        }
    }
    detect_limit(&vals, cfg.window, cfg.tol)
}

/// Divergence rate estimate with its evidence.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceReport {
    /// `min_{m <= m_max} k(f^m x, x) / m`.
    pub rate: f64,
    pub argmin: usize,
    /// `k(f^m x, x) / m` for `m = 1..`.
    pub ratios: Vec<f64>,
    /// Limit test on the ratios (tolerance `1e-3`).
    pub tail: ConvergenceReport,
    /// `|c(x) - c(y)|` for a second base point, when requested.
    pub base_difference: Option<f64>,
    /// The orbit left the numerical interior before `m_max`.
    pub truncated: bool,
}

/// Ratios `k(points[m], points[0]) / m`.
fn rate_ratios(domain: &DomainSpec, pts: &[P]) -> Result<Vec<f64>> {
    (1..pts.len()).map(|m| Ok(distance(domain, &pts[m], &pts[0])?.value / m as f64)).collect()
}

fn min_ratio(ratios: &[f64]) -> (f64, usize) {
    ratios.iter().enumerate().fold((f64::INFINITY, 0), |acc, (i, &r)| if r < acc.0 { (r, i + 1) } else { acc })
}

/// Divergence rate `c(f) = inf_m k(f^m x, x) / m` over `m <= m_max`.
pub fn divergence_rate(f: &HoloMap, x: &P, m_max: usize, second_base: Option<&P>) -> Result<DivergenceReport> {
    if m_max < 8 {
        return Err(HoloError::Precondition(format!("divergence rate needs m_max >= 8, got {m_max}")));
    }
    let (pts, truncated) = orbit_points(f, x, m_max)?;
    let ratios = rate_ratios(&f.domain, &pts)?;
    let tail = detect_limit(&ratios, 8, 1e-3)?;
    let (rate, argmin) = min_ratio(&ratios);
    let base_difference = match second_base {
        Some(y) => {
            let (p2, _) = orbit_points(f, y, m_max)?;
            let r2 = rate_ratios(&f.domain, &p2)?;
            Some((min_ratio(&r2).0 - rate).abs())
        }
        None => None,
    };
    Ok(DivergenceReport { rate, argmin, ratios, tail, base_difference, truncated })
}

/// How the dilation is read off the approach ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DilationMethod {
    /// `liminf [k(p, z) - k(p, f(z))]` along the ray.
    Liminf,
    /// `lim k(z, f(z))` along the ray, signed by the liminf trace.
    GeodesicStep,
}

/// Both dilation estimates with their traces.
#[derive(Clone, Debug, Serialize)]
pub struct DilationReport {
    pub value: f64,
    pub method: DilationMethod,
    pub liminf: f64,
    pub geodesic_step: f64,
    /// `k(p, z_j) - k(p, f(z_j))` at `z_j` with ray parameter `2^-j`.
    pub differences: Vec<f64>,
    /// `k(z_j, f(z_j))`.
    pub steps: Vec<f64>,
    /// Largest sandwich gap met along the trace.
    pub gap: f64,
}

/// Number of halving levels sampled along the approach ray.
pub const DILATION_LEVELS: usize = 16;

/// Dilation `lambda_{zeta}` of `f` at a boundary point, from the pole `pole`.
pub fn dilation(f: &HoloMap, zeta: &BoundaryPoint, pole: &P, method: DilationMethod) -> Result<DilationReport> {
    let dom = &f.domain;
    let mut differences = vec![];
    let mut steps = vec![];
    let mut gap = 0.0f64;
    for j in 1..=DILATION_LEVELS {
        let d = 0.5f64.powi(j as i32);
        let z = approach_point(dom, pole, zeta, d)?;
        let fz = f.apply(&z);
        let usable = dom.contains(&z)
            && dom.contains(&fz)
            && dom.interior_margin(&z) > EXIT_MARGIN
            && dom.interior_margin(&fz) > EXIT_MARGIN;
        if !usable {
            break;
        }
        let (a, b, s) = match (distance(dom, pole, &z), distance(dom, pole, &fz), distance(dom, &z, &fz)) {
            (Ok(a), Ok(b), Ok(s)) => (a, b, s),
            _ => break,
        };
        differences.push(a.value - b.value);
        steps.push(s.value);
        gap = gap.max(a.gap).max(b.gap).max(s.gap);
    }
    if differences.len() < 6 {
        return Err(HoloError::NonConvergent {
            what: format!("dilation ray left the reliable region after {} levels", differences.len()),
            report: Some(ConvergenceReport { values: differences, converged: false, limit: None, window: 6, tol: 0.0 }),
        });
    }
    let col = richardson_columns(&differences);
    let liminf_log = monotone_liminf(&col, LimitMode::LiminfTail, 0.0)?;
    let step_col = richardson_columns(&steps);
    let step = monotone_liminf(&step_col, LimitMode::LiminfTail, 0.0)?.max(0.0);
    let sign = if *differences.last().unwrap() < 0.0 { -1.0 } else { 1.0 };
    let (liminf, geodesic_step) = (liminf_log.exp(), (sign * step).exp());
    let value = match method {
        DilationMethod::Liminf => liminf,
        DilationMethod::GeodesicStep => geodesic_step,
    };
    Ok(DilationReport { value, method, liminf, geodesic_step, differences, steps, gap })
}

/// Kind of a self-map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapType {
    Elliptic,
    Hyperbolic,
    ParabolicZeroStep,
    ParabolicNonzeroStep,
    Inconclusive,
}

/// Iteration budget and decision thresholds of [`classify`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifyBudget {
    pub iterations: usize,
    /// Largest `m` in the divergence rate (capped at 200 on domains without
    /// an exact metric).
    pub m_max: usize,
    /// Decision margin for `lambda = 1`.
    pub dilation_tol: f64,
    /// `s_1` above this counts as nonzero step.
    pub step_floor: f64,
}

impl Default for ClassifyBudget {
    fn default() -> Self {
        Self { iterations: 20000, m_max: 20000, dilation_tol: 1e-3, step_floor: 1e-6 }
    }
}

/// Orbit diameter threshold for interior convergence.
pub const ELLIPTIC_DIAMETER: f64 = 1e-10;
/// Trailing window used for fixed-point and cluster detection.
pub const CLUSTER_WINDOW: usize = 16;

/// Outcome of [`classify`].
#[derive(Clone, Debug, Serialize)]
pub struct ClassificationResult {
    pub map_type: MapType,
    /// Interior fixed point or boundary Denjoy-Wolff point.
    pub denjoy_wolff: Option<BoundaryPoint>,
    pub interior_fixed_point: bool,
    pub dilation: Option<DilationReport>,
    pub divergence: Option<DivergenceReport>,
    pub step: Option<ConvergenceReport>,
    /// `|log lambda + c(f)|`.
    pub rate_mismatch: Option<f64>,
    pub iterations: usize,
    pub notes: Vec<String>,
}

impl ClassificationResult {
    pub fn dilation_value(&self) -> Option<f64> {
        self.dilation.as_ref().map(|d| d.value)
    }

    pub fn rate(&self) -> Option<f64> {
        self.divergence.as_ref().map(|d| d.rate)
    }
}

fn diameter(pts: &[P]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max(pts[i].dist(&pts[j]));
        }
    }
    d
}

fn inconclusive(iterations: usize, notes: Vec<String>) -> ClassificationResult {
    ClassificationResult {
        map_type: MapType::Inconclusive,
        denjoy_wolff: None,
        interior_fixed_point: false,
        dilation: None,
        divergence: None,
        step: None,
        rate_mismatch: None,
        iterations,
        notes,
    }
}

/// Compactified coordinates used for cluster detection.
fn compactify(domain: &DomainSpec, x: &P) -> Result<P> {
    if has_ball_chart(domain) {
        to_ball(domain, x)
    } else {
        Ok(x.clone())
    }
}

/// Elliptic / hyperbolic / parabolic classification from the orbit of `x`.
pub fn classify(f: &HoloMap, x: &P, budget: &ClassifyBudget) -> Result<ClassificationResult> {
    let dom = &f.domain;
    if !dom.contains(x) {
        return Err(HoloError::OutOfDomain(format!("classification start outside {}", dom.name())));
    }
    let mut pts = vec![x.clone()];
    let mut exited = false;
    for _ in 0..budget.iterations {
        let y = f.apply(pts.last().unwrap());
        if !dom.contains(&y) || dom.interior_margin(&y) < EXIT_MARGIN || !in_ball_chart_range(dom, &y) {
            exited = true;
            break;
        }
        pts.push(y);
        if pts.len() >= CLUSTER_WINDOW && diameter(&pts[pts.len() - CLUSTER_WINDOW..]) < ELLIPTIC_DIAMETER {
            let fixed = pts.last().unwrap().clone();
            let step = forward_step_from_points(dom, &pts, 1, &StepConfig { window: 4, tol: 1e-9, ..Default::default() }).ok();
            return Ok(ClassificationResult {
                map_type: MapType::Elliptic,
                denjoy_wolff: Some(BoundaryPoint::Finite(fixed)),
                interior_fixed_point: true,
                dilation: None,
                divergence: None,
                step,
                rate_mismatch: None,
                iterations: pts.len() - 1,
                notes: vec![],
            });
        }
    }
    let iterations = pts.len() - 1;
    let mut notes = vec![];
    if exited {
        notes.push(format!("orbit left the numerical interior after {iterations} steps"));
    }
    if pts.len() < CLUSTER_WINDOW + 1 {
        notes.push("orbit too short for cluster detection".into());
        return Ok(inconclusive(iterations, notes));
    }

    // Boundary cluster point in compactified coordinates.
    let tail: Vec<P> = pts[pts.len() - CLUSTER_WINDOW..].iter().map(|p| compactify(dom, p)).collect::<Result<_>>()?;
    let last = tail.last().unwrap();
    let candidate = if has_ball_chart(dom) {
        last.scale(1.0 / last.norm())
    } else {
        dom.nearest_boundary(pts.last().unwrap())?.0
    };
    let errs: Vec<f64> = tail.iter().map(|p| p.dist(&candidate)).collect();
    let e_last = *errs.last().unwrap();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let zeta = if e_last < 1e-8 {
        candidate.clone()
    } else if decreasing && e_last < 1e-2 {
        notes.push(format!("slow boundary convergence: trailing distance {e_last:e} to the cluster point"));
        candidate.clone()
    } else {
        notes.push(format!("orbit neither Cauchy nor boundary-convergent (trailing distance {e_last:e})"));
        return Ok(inconclusive(iterations, notes));
    };
    let dw = if dom.kind == DomainKind::Siegel {
        let e1 = P::basis(dom.dim, 0);
        let to_e1: Vec<f64> = tail.iter().map(|p| p.dist(&e1)).collect();
        if to_e1.windows(2).all(|w| w[1] < w[0]) && *to_e1.last().unwrap() < 1e-2 {
            BoundaryPoint::Infinity
        } else {
            boundary_from_ball(dom, &zeta)?
        }
    } else if has_ball_chart(dom) {
        boundary_from_ball(dom, &zeta)?
    } else {
        BoundaryPoint::Finite(zeta)
    };

    let dil = dilation(f, &dw, x, DilationMethod::Liminf)?;
    let exact = has_ball_chart(dom);
    let m_max = if exact { budget.m_max } else { budget.m_max.min(200) };
    let m_max = m_max.min(pts.len() - 1);
    let ratios = rate_ratios(dom, &pts[..=m_max])?;
    let tail_rep = detect_limit(&ratios, 8.min(ratios.len()).max(2), 1e-3)?;
    let (rate, argmin) = min_ratio(&ratios);
    let divergence = DivergenceReport { rate, argmin, ratios, tail: tail_rep, base_difference: None, truncated: exited };
    let step_pts = &pts[..pts.len().min(201)];
    let step = match forward_step_from_points(dom, step_pts, 1, &StepConfig { window: 4, tol: 1e-6, ..Default::default() }) {
        Ok(r) => r,
        Err(e) => {
            notes.push(format!("forward step: {e}"));
            return Ok(inconclusive(iterations, notes));
        }
    };
    let s1 = step.values.last().cloned().unwrap_or(0.0);
    let lambda = dil.value;
    let margin = budget.dilation_tol + dil.gap;
    let map_type = if lambda < 1.0 - margin {
        MapType::Hyperbolic
    } else if (lambda - 1.0).abs() <= margin {
        if s1 > budget.step_floor {
            MapType::ParabolicNonzeroStep
        } else {
            MapType::ParabolicZeroStep
        }
    } else {
        notes.push(format!("dilation {lambda} > 1 at the cluster point"));
        MapType::Inconclusive
    };
    let mismatch = (lambda.ln() + rate).abs();
    if mismatch > 1e-3 {
        notes.push(format!("|log lambda + c| = {mismatch:e} exceeds 1e-3"));
    }
    Ok(ClassificationResult {
        map_type,
        denjoy_wolff: Some(dw),
        interior_fixed_point: false,
        dilation: Some(dil),
        divergence: Some(divergence),
        step: Some(step),
        rate_mismatch: Some(mismatch),
        iterations,
        notes,
    })
}

/// Outcome of the Julia's lemma check.
#[derive(Clone, Debug, Serialize)]
pub struct JuliaReport {
    pub lambda: f64,
    pub samples: usize,
    pub violations: usize,
    /// Largest `h(f(z)) / (lambda h(z))`.
    pub worst_ratio: f64,
    /// `(R, samples, worst ratio)` per radius.
    pub per_radius: Vec<(f64, usize, f64)>,
    pub witnesses: Vec<P>,
}

/// Relative slack of the Julia inequality.
pub const JULIA_SLACK: f64 = 1e-6;

/// Samples `z` in `E(pole, zeta, R)` for each `R` and checks
/// `h(f(z)) <= lambda h(z) (1 + 1e-6)`.
pub fn julia_check(
    f: &HoloMap,
    zeta: &BoundaryPoint,
    pole: &P,
    lambda: Option<f64>,
    r_values: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<JuliaReport> {
    let dom = &f.domain;
    if r_values.iter().any(|r| !(*r > 0.0)) {
        return Err(HoloError::Precondition("horosphere radii must be positive".into()));
    }
    let lambda = match lambda {
        Some(l) => l,
        None => dilation(f, zeta, pole, DilationMethod::Liminf)?.value,
    };
    let mut s = SeededSampler::new(seed, dom.dim);
    let mut rep = JuliaReport { lambda, samples: 0, violations: 0, worst_ratio: 0.0, per_radius: vec![], witnesses: vec![] };
    for &r in r_values {
        let pts = sample_horoball(dom, pole, zeta, r, n_samples, &mut s)?;
        let mut worst = 0.0f64;
        for z in &pts {
            let fz = f.apply(z);
            let ratio = horo(dom, pole, zeta, &fz)? / (lambda * horo(dom, pole, zeta, z)?);
            worst = worst.max(ratio);
            if ratio > 1.0 + JULIA_SLACK {
                rep.violations += 1;
                if rep.witnesses.len() < 10 {
                    rep.witnesses.push(z.clone());
                }
            }
        }
        rep.samples += pts.len();
        rep.worst_ratio = rep.worst_ratio.max(worst);
        rep.per_radius.push((r, pts.len(), worst));
    }
    Ok(rep)
}

/// Interior points of the horoball `E(pole, zeta, R)`.
///
/// With an exact ball chart the horoball is the Euclidean ball with center
/// `zeta / (1 + R')` and radius `R' / (1 + R')`, `R' = R h_0(pole)`, sampled
/// uniformly; otherwise interior samples are filtered.
pub fn sample_horoball(
    domain: &DomainSpec,
    pole: &P,
    zeta: &BoundaryPoint,
    r: f64,
    n: usize,
    sampler: &mut SeededSampler,
) -> Result<Vec<P>> {
    let mut out = Vec::with_capacity(n);
    if has_ball_chart(domain) {
        let pb = to_ball(domain, pole)?;
        let zb = boundary_to_ball(domain, zeta)?;
        let rr = r * ball::horo_value(&P::zeros(domain.dim), &zb, &pb)?;
        let (c, rad) = (zb.scale(1.0 / (1.0 + rr)), rr / (1.0 + rr));
        while out.len() < n {
            let w = &c + &sampler.ball(rad * (1.0 - 1e-9));
            if w.norm() < 1.0 - 1e-9 {
                let z = from_ball(domain, &w)?;
                if domain.contains(&z) {
                    out.push(z);
                }
            }
        }
        return Ok(out);
    }
    let mut tries = 0;
    while out.len() < n && tries < 200 * n {
        tries += 1;
        let z = domain.sample_interior(sampler, 0.999);
        if horo(domain, pole, zeta, &z)? < r {
            out.push(z);
        }
    }
    Ok(out)
}
