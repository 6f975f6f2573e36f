//! Fourth-order normal-form charts at strongly convex boundary points, the
//! projective push `T`, sampled certification of the horosphere inclusions
//! and localized comparison of Kobayashi distances.
//!
//! A chart `w(z)` is a polynomial map of degree at most 4 with `w(zeta) = 0`
//! such that the image of the boundary is the graph
//! `Im w1 = |w'|^2 - P4(Re w1, w', conj w') + O(|w|^5)`; on the ball the chart is
//! the Cayley-type map itself and `P4 = 0`.

use crate::ball::kobayashi_ball;
use crate::convex::{boundary_frame, strong_convexity_check, DomainKind, DomainSpec};
use crate::models_backward::BallChart;
use crate::numerics::SeededSampler;
use crate::series::{with_conjugates, Exponent, TruncatedSeries, Variables, TRUNCATION};
use crate::{CMatrix, CPoint, HoloError, Result, C64};
use nalgebra::{DMatrix, DVector};
use num_traits::One;
use serde::Serialize;
use std::sync::Arc;

type P = CPoint<f64>;
type Series = TruncatedSeries;

const I: C64 = C64::new(0.0, 1.0);
/// Coefficient tolerance of the normal-form shape.
pub const SHAPE_TOL: f64 = 1e-9;
/// Directions sampled for the quartic sandwich constants.
pub const DIRECTION_SAMPLES: usize = 10_000;
/// Safety margin applied to the sampled extremes of `P4`.
pub const SANDWICH_MARGIN: f64 = 0.1;
/// Pairs sampled by [`distance_comparison`].
pub const DISTANCE_PAIRS: usize = 1000;
/// Search ceiling for horosphere radii.
pub const RADIUS_CAP: f64 = 1e3;
/// Search ceiling for the neighborhood radius around `e1`.
pub const RHO_CAP: f64 = 2.0;
const NEWTON_TOL: f64 = 1e-12;
const BISECTION_STEPS: usize = 30;
const BISECTION_SAMPLES: usize = 20_000;
const WITNESSES: usize = 5;

/// `C~(z) = (i(1 - z1)/(1 + z1), z'/(1 + z1))`: sends `e1` to `0` and the ball
/// onto `{ Im w1 > |w'|^2 }`.
pub fn cayley_tilde(z: &P) -> Result<P> {
    let d = C64::one() + z[0];
    if d.norm() < 1e-14 {
        return Err(HoloError::Singular("z1 = -1 in the Cayley-type map".into()));
    }
    let mut out = z.clone();
    out[0] = I * (C64::one() - z[0]) / d;
    for j in 1..z.dim() {
        out[j] = z[j] / d;
    }
    Ok(out)
}

/// `C~^{-1}(w) = ((i - w1)/(i + w1), 2i w'/(i + w1))`.
pub fn cayley_tilde_inverse(w: &P) -> Result<P> {
    let d = I + w[0];
    if d.norm() < 1e-14 {
        return Err(HoloError::Singular("w1 = -i in the inverse Cayley-type map".into()));
    }
    let mut out = w.clone();
    out[0] = (I - w[0]) / d;
    for j in 1..w.dim() {
        out[j] = I * w[j] * 2.0 / d;
    }
    Ok(out)
}

/// `T(w) = (R w1/(R - i w1), R w'/(R - i w1))`, mapping the Siegel domain
/// onto `{ Im w1 > |w'|^2 + |w1|^2 / R }`.
pub fn push(r: f64, w: &P) -> Result<P> {
    let d = C64::new(r, 0.0) - I * w[0];
    if d.norm() < 1e-300 {
        return Err(HoloError::Singular("w1 = -iR in the push".into()));
    }
    Ok(w.scale_c(C64::new(r, 0.0) / d))
}

/// Inverse of [`push`]: `eta -> (R eta1/(R + i eta1), R eta'/(R + i eta1))`.
pub fn push_inverse(r: f64, eta: &P) -> Result<P> {
    let d = C64::new(r, 0.0) + I * eta[0];
    if d.norm() < 1e-300 {
        return Err(HoloError::Singular("eta1 = iR in the inverse push".into()));
    }
    Ok(eta.scale_c(C64::new(r, 0.0) / d))
}

fn monomials(n: usize, d: usize) -> Vec<Exponent> {
    if n == 0 {
        return if d == 0 { vec![vec![]] } else { vec![] };
    }
    (0..=d)
        .rev()
        .flat_map(|k| {
            monomials(n - 1, d - k).into_iter().map(move |mut rest| {
                rest.insert(0, k as u8);
                rest
            })
        })
        .collect()
}

/// Holomorphic monomials of degree `d` over a complex variable set with `q`
/// slots (conjugate exponents zero).
fn holo_monomials(q: usize, d: usize) -> Vec<Exponent> {
    monomials(q, d)
        .into_iter()
        .map(|mut e| {
            e.extend(std::iter::repeat_n(0, q));
            e
        })
        .collect()
}

/// `rho(zeta + delta)` as a series in `(delta, conj delta)`.
fn defining_series(domain: &DomainSpec, zeta: &P, dv: &Arc<Variables>) -> Series {
    let q = domain.dim;
    let mut out = Series::zero(dv);
    for m in &domain.polynomial().terms {
        let mut t = Series::constant(dv, m.coeff);
        for j in 0..q {
            if m.alpha[j] > 0 {
                let b = &Series::constant(dv, zeta[j]) + &Series::var(dv, j);
                t = &t * &b.pow(m.alpha[j]);
            }
            if m.beta[j] > 0 {
                let b = &Series::constant(dv, zeta[j].conj()) + &Series::var(dv, j + q);
                t = &t * &b.pow(m.beta[j]);
            }
        }
        out = &out + &t;
    }
    out
}

/// Taylor series of `C~^{-1}(w) - e1`.
fn cayley_inverse_series(wv: &Arc<Variables>, q: usize) -> Vec<Series> {
    let iw1 = Series::var(wv, 0).scale(I);
    let geo = (0..TRUNCATION as u32).fold(Series::zero(wv), |acc, k| &acc + &iw1.pow(k));
    let mut out = vec![(&Series::var(wv, 0) * &geo).scale(2.0 * I)];
    out.extend((1..q).map(|j| (&Series::var(wv, j) * &geo).scale_re(2.0)));
    out
}

fn linear_map(m: &CMatrix, xs: &[Series]) -> Vec<Series> {
    (0..m.nrows())
        .map(|j| xs.iter().enumerate().fold(Series::zero(xs[0].vars()), |acc, (k, x)| &acc + &x.scale(m[(j, k)])))
        .collect()
}

/// Series algebra shared by the construction steps.
struct Workspace {
    q: usize,
    rho: Series,
    wv: Arc<Variables>,
    gv: Arc<Variables>,
}

impl Workspace {
    /// `rho(zeta + Z(w))` without its (roundoff-sized) constant term.
    fn pullback(&self, z: &[Series]) -> Result<Series> {
        let s = self.rho.compose(&with_conjugates(z))?;
        let c = s.coefficient(&vec![0; 2 * self.q]);
        if c.norm() > 1e-9 {
            return Err(HoloError::ChartConstruction(format!("base point is off the boundary (rho = {:e})", c.re)));
        }
        Ok(&s - &Series::constant(&self.wv, c))
    }

    /// Solves `psi(u + iV, w') = 0` for `V(u, w', conj w')` through degree 4,
    /// after scaling `psi` so that its linear part is `-Im w1`. Returns the
    /// graph and the residual of the last fixed-point sweep.
    fn graph(&self, psi: &Series) -> Result<(Series, f64)> {
        let q = self.q;
        let lin = psi.linear_part();
        let c = -2.0 * I * lin[0];
        let tangential = (1..q).chain(q + 1..2 * q).map(|k| lin[k].norm()).fold(0.0, f64::max);
        if !(c.re > 0.0) || c.im.abs() > SHAPE_TOL * c.re || tangential > SHAPE_TOL * c.re {
            return Err(HoloError::ChartConstruction(format!(
                "linear part is not a positive multiple of -Im w1 (coefficient {c}, tangential {tangential:e})"
            )));
        }
        let psi = psi.scale_re(1.0 / c.re);
        let gv = &self.gv;
        let u = Series::var(gv, 0);
        let mut v = Series::zero(gv);
        let mut residual = f64::INFINITY;
        for _ in 0..=TRUNCATION + 1 {
            let iv = v.scale(I);
            let mut subs = vec![Series::zero(gv); 2 * q];
            subs[0] = &u + &iv;
            subs[q] = &u - &iv;
            for j in 1..q {
                subs[j] = Series::var(gv, j);
                subs[q + j] = Series::var(gv, j + q - 1);
            }
            let val = psi.compose(&subs)?;
            residual = val.max_abs();
            v = &v + &val;
        }
        Ok((v.real_part(), residual))
    }

    fn graph_of(&self, z: &[Series]) -> Result<(Series, f64)> {
        self.graph(&self.pullback(z)?)
    }
}

/// Series `(Re w1, w', conj w')` substitution into a complex variable set.
fn graph_in(f: &Series, target: &Arc<Variables>, q: usize) -> Result<Series> {
    let mut subs = vec![(&Series::var(target, 0) + &Series::var(target, q)).scale_re(0.5)];
    subs.extend((1..q).map(|j| Series::var(target, j)));
    subs.extend((1..q).map(|j| Series::var(target, q + j)));
    f.compose(&subs)
}

/// `-Im x1` over a complex variable set.
fn minus_im_first(v: &Arc<Variables>, q: usize) -> Series {
    (&Series::var(v, 0) - &Series::var(v, q)).scale(0.5 * I)
}

/// `|x'|^2` over a complex or graph variable set whose first slot is the
/// normal coordinate.
fn tangent_norm_sq(v: &Arc<Variables>, q: usize) -> Series {
    let m = v.len() - q;
    (1..q).fold(Series::zero(v), |acc, j| &acc + &(&Series::var(v, j) * &Series::var(v, j + m)))
}

/// Outcome of one normalization degree.
#[derive(Clone, Debug, Serialize)]
pub struct NormalizationStep {
    pub degree: usize,
    pub unknowns: usize,
    pub newton_steps: usize,
    pub residual: f64,
    /// Euclidean norm of the correction coefficients.
    pub correction_norm: f64,
}

/// Holomorphic corrections `w1 += sum a m(w)` (degree `d`) and
/// `w'_k += sum b m(w)` (degree `d - 1`; only `w1` when `d = 2`).
fn correction_basis(q: usize, d: usize) -> Vec<(usize, Exponent)> {
    let mut basis: Vec<(usize, Exponent)> = holo_monomials(q, d).into_iter().map(|e| (0, e)).collect();
    for k in 1..q {
        let monos = if d == 2 {
            let mut e = vec![0; 2 * q];
            e[0] = 1;
            vec![e]
        } else {
            holo_monomials(q, d - 1)
        };
        basis.extend(monos.into_iter().map(|e| (k, e)));
    }
    basis
}

fn correction_map(wv: &Arc<Variables>, q: usize, basis: &[(usize, Exponent)], x: &[f64]) -> Vec<Series> {
    let mut phi: Vec<Series> = (0..q).map(|t| Series::var(wv, t)).collect();
    for (k, (t, e)) in basis.iter().enumerate() {
        let m = Series::monomial(wv, e.clone(), C64::new(x[2 * k], x[2 * k + 1]));
        phi[*t] = &phi[*t] + &m;
    }
    phi
}

fn compose_all(z: &[Series], phi: &[Series]) -> Result<Vec<Series>> {
    let subs = with_conjugates(phi);
    z.iter().map(|s| s.compose(&subs)).collect()
}

/// Removes every degree-`d` monomial of the graph except the Hermitian
/// `|w'|^2` at `d = 2`, by Newton iteration on the correction coefficients
/// with minimal-norm steps.
fn normalize_degree(ws: &Workspace, z: Vec<Series>, d: usize) -> Result<(Vec<Series>, NormalizationStep)> {
    let q = ws.q;
    let basis = correction_basis(q, d);
    let monos = monomials(ws.gv.len(), d);
    let m = q - 1;
    let target = |e: &[u8]| -> f64 {
        if d == 2 && (1..q).any(|j| e[j] == 1 && e[j + m] == 1) {
            1.0
        } else {
            0.0
        }
    };
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let zx = compose_all(&z, &correction_map(&ws.wv, q, &basis, x))?;
        let (f, _) = ws.graph_of(&zx)?;
        Ok(monos
            .iter()
            .flat_map(|e| {
                let c = f.coefficient(e) - target(e);
                [c.re, c.im]
            })
            .collect())
    };
    let n = 2 * basis.len();
    let mut x = vec![0.0; n];
    let mut r = residual(&x)?;
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut steps = 0;
    while norm(&r) > NEWTON_TOL && steps < 8 {
        let mut jac = DMatrix::zeros(r.len(), n);
        for k in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += 1.0;
            xm[k] -= 1.0;
            let (rp, rm) = (residual(&xp)?, residual(&xm)?);
            for i in 0..r.len() {
                jac[(i, k)] = 0.5 * (rp[i] - rm[i]);
            }
        }
        let dx = jac
            .svd(true, true)
            .solve(&DVector::from_column_slice(&r), 1e-12)
            .map_err(|e| HoloError::ChartConstruction(e.to_string()))?;
        x.iter_mut().zip(dx.iter()).for_each(|(a, b)| *a -= b);
        r = residual(&x)?;
        steps += 1;
    }
    let res = norm(&r);
    if res > SHAPE_TOL {
        let offending: Vec<String> = monos
            .iter()
            .enumerate()
            .filter(|(i, _)| r[2 * i].abs().max(r[2 * i + 1].abs()) > SHAPE_TOL)
            .map(|(i, e)| format!("{e:?}: {:.3e}{:+.3e}i", r[2 * i], r[2 * i + 1]))
            .collect();
        return Err(HoloError::ChartConstruction(format!(
            "degree-{d} terms not removable within {SHAPE_TOL:e}: {}",
            offending.join(", ")
        )));
    }
    let z = compose_all(&z, &correction_map(&ws.wv, q, &basis, &x))?;
    let correction_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((z, NormalizationStep { degree: d, unknowns: n, newton_steps: steps, residual: res, correction_norm }))
}

/// Compositional inverse through degree 4 of a holomorphic map with
/// invertible linear part.
fn invert_series(z: &[Series], target: &Arc<Variables>) -> Result<Vec<Series>> {
    let q = z.len();
    let l = CMatrix::from_fn(q, q, |j, k| z[j].coeff_of(&[(k, 1)]));
    let linv = l.try_inverse().ok_or(HoloError::NonInvertibleSubstitution)?;
    let delta: Vec<Series> = (0..q).map(|k| Series::var(target, k)).collect();
    let mut w = linear_map(&linv, &delta);
    for _ in 0..TRUNCATION {
        let subs = with_conjugates(&w);
        let zw: Vec<Series> = z.iter().map(|s| s.compose(&subs)).collect::<Result<_>>()?;
        let corr: Vec<Series> = delta.iter().zip(&zw).map(|(a, b)| a - b).collect();
        let step = linear_map(&linv, &corr);
        w = w.iter().zip(&step).map(|(a, b)| a + b).collect();
    }
    Ok(w)
}

fn condition_number(m: &CMatrix) -> f64 {
    let sv = m.singular_values();
    let (mx, mn) = sv.iter().fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    mx / mn
}

fn eval_at(s: &Series, x: &P) -> C64 {
    let vals: Vec<C64> = x.coords.iter().copied().chain(x.coords.iter().map(|c| c.conj())).collect();
    s.eval(&vals)
}

/// Sampled sandwich `C N <= P4 <= (D/2) N` with `N = |Re w1|^4 + |w'|^4`.
#[derive(Clone, Debug, Serialize)]
pub struct SandwichCheck {
    pub samples: usize,
    pub violations: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Diagnostics collected while building a chart.
#[derive(Clone, Debug, Serialize)]
pub struct ChartStats {
    pub steps: Vec<NormalizationStep>,
    /// Residual of the graph solve for the final chart.
    pub graph_residual: f64,
    /// Monomial contributions dropped by truncation.
    pub discarded: usize,
    pub direction_samples: usize,
}

/// Fourth-order normal-form chart at a boundary point.
#[derive(Clone, Debug, Serialize)]
pub struct NormalFormChart {
    #[serde(skip)]
    pub domain: DomainSpec,
    pub domain_name: String,
    pub base_point: P,
    /// The chart is the exact Cayley-type biholomorphism (ball only).
    pub exact: bool,
    /// `w(zeta + delta)` as series in `(delta, conj delta)`.
    pub forward: Vec<Series>,
    /// Truncated inverse `delta(w)`.
    pub inverse: Vec<Series>,
    #[serde(skip)]
    jacobian: Vec<Vec<Series>>,
    #[serde(skip)]
    frame_unitary: CMatrix,
    /// Condition number of the linear part of `w`.
    pub condition: f64,
    /// Boundary graph `Im w1 = F(Re w1, w', conj w')` through degree 4.
    pub graph: Series,
    /// Quartic `P4` with `F = |w'|^2 - P4`.
    pub p4: Series,
    /// Largest coefficient deviation of `F` from `|w'|^2` in degrees 2 and 3.
    pub shape_error: f64,
    /// Lower sandwich constant `C`.
    pub c_lower: f64,
    /// Upper sandwich constant `D`.
    pub d_upper: f64,
    /// Sampled `sup |Im w1 - F| / |w|^5` on the true boundary near `zeta`.
    pub remainder: f64,
    /// Radius in `|z - zeta|` on which the Jacobian stays within half of
    /// its inverse norm of the value at `zeta` (injectivity neighborhood).
    pub validity_radius: f64,
    pub stats: ChartStats,
}

impl NormalFormChart {
    pub fn dim(&self) -> usize {
        self.base_point.dim()
    }

    /// Variables `(w, conj w)` of the chart image.
    pub fn chart_vars(&self) -> Arc<Variables> {
        self.inverse[0].vars().clone()
    }

    /// `w(z)`.
    pub fn to_chart(&self, z: &P) -> Result<P> {
        if self.exact {
            return cayley_tilde(&z.apply(&self.frame_unitary));
        }
        let d = z - &self.base_point;
        Ok(P::new(self.forward.iter().map(|s| eval_at(s, &d)).collect()))
    }

    /// Solves `w(z) = w` by Newton's method from the truncated inverse.
    pub fn from_chart(&self, w: &P) -> Result<P> {
        if self.exact {
            return Ok(cayley_tilde_inverse(w)?.apply(&self.frame_unitary.adjoint()));
        }
        let q = self.dim();
        let mut d = P::new(self.inverse.iter().map(|s| eval_at(s, w)).collect());
        let tol = 1e-15 * (1.0 + w.norm());
        for _ in 0..40 {
            let r = &P::new(self.forward.iter().map(|s| eval_at(s, &d)).collect()) - w;
            if r.norm() <= tol {
                if d.norm() > self.validity_radius {
                    break;
                }
                return Ok(&self.base_point + &d);
            }
            let j = CMatrix::from_fn(q, q, |a, b| eval_at(&self.jacobian[a][b], &d));
            let step = j.lu().solve(&r.to_vector()).ok_or_else(|| HoloError::Singular("chart Jacobian".into()))?;
            d = &d - &P::from_vector(&step);
            if !d.is_finite() || d.norm() > 4.0 * self.validity_radius.min(1e6) {
                break;
            }
        }
        Err(HoloError::OutOfDomain("point outside the chart neighborhood".into()))
    }

    /// `-Im w1 + F(Re w1, w', conj w')`, the defining function of the image
    /// near `0` in the chart variables.
    pub fn defining_series(&self) -> Result<Series> {
        let wv = self.chart_vars();
        Ok(&minus_im_first(&wv, self.dim()) + &graph_in(&self.graph, &wv, self.dim())?)
    }

    /// `P4(u, w')` at a point of `R x C^{q-1}`.
    pub fn p4_at(&self, u: f64, wp: &[C64]) -> f64 {
        let mut vals = vec![C64::new(u, 0.0)];
        vals.extend_from_slice(wp);
        vals.extend(wp.iter().map(|c| c.conj()));
        self.p4.eval(&vals).re
    }

    /// Checks the quartic sandwich on `n` seeded directions of the unit
    /// sphere of `R x C^{q-1}`.
    pub fn sandwich_check(&self, n: usize, seed: u64) -> SandwichCheck {
        let (ratios, violations) = sandwich_ratios(self, n, seed, Some((self.c_lower, self.d_upper)));
        SandwichCheck {
            samples: n,
            violations,
            min_ratio: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            max_ratio: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn sandwich_ratios(chart: &NormalFormChart, n: usize, seed: u64, bounds: Option<(f64, f64)>) -> (Vec<f64>, usize) {
    let q = chart.dim();
    let mut sampler = SeededSampler::new(seed, 2 * q - 1);
    let mut ratios = Vec::with_capacity(n);
    let mut violations = 0;
    for _ in 0..n {
        let x: Vec<f64> = (0..2 * q - 1).map(|_| sampler.normal()).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = x[0] / norm;
        let wp: Vec<C64> = (1..q).map(|j| C64::new(x[2 * j - 1], x[2 * j]) / norm).collect();
        let t2: f64 = wp.iter().map(|c| c.norm_sqr()).sum();
        let big_n = u.powi(4) + t2 * t2;
        let p = chart.p4_at(u, &wp);
        if let Some((c, d)) = bounds {
            let slack = 1e-12 * (1.0 + p.abs());
            if p < c * big_n - slack || p > 0.5 * d * big_n + slack {
                violations += 1;
            }
        }
        ratios.push(p / big_n);
    }
    (ratios, violations)
}

/// Builds the normal-form chart at `zeta` (projected to the boundary).
///
/// The chart starts from the osculating affine map followed by the Taylor
/// polynomial of the Cayley-type map, then removes the pluriharmonic and
/// mixed quadratic terms and every cubic term of the boundary graph with
/// holomorphic shears.
pub fn fefferman_chart(domain: &DomainSpec, zeta: &P) -> Result<NormalFormChart> {
    let conv = strong_convexity_check(domain, zeta)?;
    if !conv.strongly_convex {
        return Err(HoloError::Precondition(format!(
            "boundary of {} is not strongly convex at the base point (min eigenvalue {:e})",
            domain.name(),
            conv.min_eigenvalue
        )));
    }
    let frame = boundary_frame(domain, zeta)?;
    let q = domain.dim;
    let zeta = frame.zeta.clone();
    let dv = Variables::complex(q, "d");
    let wv = Variables::complex(q, "w");
    let ws = Workspace { q, rho: defining_series(domain, &zeta, &dv), wv: wv.clone(), gv: Variables::graph(q) };

    let a = frame.osculating_linear();
    let ainv = a.clone().try_inverse().ok_or(HoloError::NonInvertibleSubstitution)?;
    let mut z = linear_map(&ainv, &cayley_inverse_series(&wv, q));
    let mut steps = Vec::new();
    for d in 2..=3 {
        let (nz, step) = normalize_degree(&ws, z, d)?;
        z = nz;
        steps.push(step);
    }
    let (graph, graph_residual) = ws.graph_of(&z)?;
    let hermitian = tangent_norm_sq(&ws.gv, q);
    let shape_error = (&graph.homogeneous(2) - &hermitian).max_abs().max(graph.homogeneous(3).max_abs());
    let mut p4 = -&graph.homogeneous(4);
    let exact = domain.kind == DomainKind::Ball;
    if exact && p4.max_abs() <= 1e-12 {
        p4 = Series::zero(&ws.gv);
    }
    let forward = invert_series(&z, &dv)?;
    let jacobian = forward.iter().map(|s| (0..q).map(|k| s.derivative(k)).collect()).collect();
    let linear = CMatrix::from_fn(q, q, |j, k| forward[j].coeff_of(&[(k, 1)]));
    let discarded = forward.iter().chain(&z).map(|s| s.discarded()).sum::<usize>() + graph.discarded();

    let mut chart = NormalFormChart {
        domain: domain.clone(),
        domain_name: domain.name(),
        base_point: zeta,
        exact,
        forward,
        inverse: z,
        jacobian,
        frame_unitary: frame.unitary.clone(),
        condition: condition_number(&linear),
        graph,
        p4,
        shape_error,
        c_lower: 0.0,
        d_upper: 0.0,
        remainder: 0.0,
        validity_radius: f64::INFINITY,
        stats: ChartStats { steps, graph_residual, discarded, direction_samples: DIRECTION_SAMPLES },
    };
    if !exact {
        chart.validity_radius = validity_radius(&chart, &linear);
    }
    let (ratios, _) = sandwich_ratios(&chart, DIRECTION_SAMPLES, 0xFEFF, None);
    if chart.p4.max_abs() > 0.0 {
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        chart.c_lower = lo - SANDWICH_MARGIN * lo.abs();
        chart.d_upper = 2.0 * (hi + SANDWICH_MARGIN * hi.abs());
    }
    chart.remainder = remainder_estimate(&chart, 0.02, 32)?;
    Ok(chart)
}

/// Largest radius (on a geometric grid) where the sampled Jacobian stays
/// within `1 / (2 |J(0)^{-1}|)` of `J(0)`.
fn validity_radius(chart: &NormalFormChart, j0: &CMatrix) -> f64 {
    let q = chart.dim();
    let bound = 0.5 / j0.clone().try_inverse().map_or(f64::INFINITY, |m| m.norm());
    let mut sampler = SeededSampler::new(0x7a11d, q);
    let dirs: Vec<P> = (0..64).map(|_| sampler.sphere()).collect();
    let mut r = 1.0;
    while r > 1e-6 {
        let ok = dirs.iter().all(|u| {
            let d = u.scale(r);
            let j = CMatrix::from_fn(q, q, |a, b| eval_at(&chart.jacobian[a][b], &d));
            (j - j0).norm() <= bound
        });
        if ok {
            return r;
        }
        r *= 0.8;
    }
    r
}

/// Compares the true boundary (located along `Im w1` by bisection) with
/// the quartic graph on a sphere of radius `r` in `(Re w1, w')`.
fn remainder_estimate(chart: &NormalFormChart, r: f64, n: usize) -> Result<f64> {
    let q = chart.dim();
    let gv = chart.graph.vars().clone();
    let mut sampler = SeededSampler::new(0x5e11, 2 * q - 1);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let x: Vec<f64> = (0..2 * q - 1).map(|_| sampler.normal()).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = r * x[0] / norm;
        let wp: Vec<C64> = (1..q).map(|j| C64::new(x[2 * j - 1], x[2 * j]) * (r / norm)).collect();
        let mut vals = vec![C64::new(u, 0.0)];
        vals.extend_from_slice(&wp);
        vals.extend(wp.iter().map(|c| c.conj()));
        debug_assert_eq!(vals.len(), gv.len());
        let f = chart.graph.eval(&vals).re;
        let rho_at = |v: f64| -> Option<f64> {
            let mut w = vec![C64::new(u, v)];
            w.extend_from_slice(&wp);
            chart.from_chart(&P::new(w)).ok().map(|z| chart.domain.rho(&z))
        };
        let (mut lo, mut hi) = (f - r * r, f + r * r);
        match (rho_at(lo), rho_at(hi)) {
            (Some(a), Some(b)) if a > 0.0 && b < 0.0 => {}
            _ => return Ok(f64::INFINITY),
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            match rho_at(mid) {
                Some(v) if v > 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => return Ok(f64::INFINITY),
            }
        }
        worst = worst.max((0.5 * (lo + hi) - f).abs() / r.powi(5));
    }
    Ok(worst)
}

/// A normal-form chart followed by the optional push `T_R` and the inverse
/// Cayley-type map, landing at `e1` in ball coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct LocalizedChart {
    pub chart: NormalFormChart,
    pub push: Option<f64>,
    /// Defining series of the image near `0` in `eta = T(w)`, normalized by
    /// `|R + i eta1|^2 / R^2` (present when pushed).
    pub series: Option<Series>,
    /// Largest coefficient deviation of `series` from
    /// `-Im eta1 + |eta'|^2 + |eta1|^2 / R - P4(Re eta1, eta')`.
    pub series_error: f64,
}

impl LocalizedChart {
    /// The chart without the push: `C~^{-1} o w`.
    pub fn unpushed(chart: &NormalFormChart) -> Self {
        Self { chart: chart.clone(), push: None, series: None, series_error: 0.0 }
    }

    /// Whether the composed map is a biholomorphism onto `B^q`.
    pub fn is_exact(&self) -> bool {
        self.chart.exact && self.push.is_none()
    }

    pub fn to_ball(&self, z: &P) -> Result<P> {
        let w = self.chart.to_chart(z)?;
        let eta = match self.push {
            Some(r) => push(r, &w)?,
            None => w,
        };
        cayley_tilde_inverse(&eta)
    }

    pub fn from_ball(&self, x: &P) -> Result<P> {
        let eta = cayley_tilde(x)?;
        let w = match self.push {
            Some(r) => push_inverse(r, &eta)?,
            None => eta,
        };
        self.chart.from_chart(&w)
    }

    /// Membership of a ball-coordinate point in the image of the domain;
    /// `None` when the chart cannot be inverted there.
    pub fn contains(&self, x: &P) -> Option<bool> {
        self.from_ball(x).ok().map(|z| self.chart.domain.contains(&z))
    }

    /// The composed chart in the form used by backward-orbit construction.
    pub fn ball_chart(&self) -> BallChart {
        let (a, b) = (self.clone(), self.clone());
        let name = match self.push {
            Some(r) => format!("normal-form({}, R={r})", self.chart.domain_name),
            None => format!("normal-form({})", self.chart.domain_name),
        };
        BallChart::new(name, self.is_exact(), move |z| a.to_ball(z), move |x| b.from_ball(x))
    }
}

/// Composes the chart with the push `T_R`, `0 < R < 1/D`, and checks the
/// pushed defining series coefficientwise.
pub fn localized_chart(chart: &NormalFormChart, r: f64) -> Result<LocalizedChart> {
    let upper = if chart.d_upper > 0.0 { 1.0 / chart.d_upper } else { f64::INFINITY };
    if !(r > 0.0 && r < upper && r.is_finite()) {
        return Err(HoloError::InvalidRadius { radius: r, upper });
    }
    let q = chart.dim();
    let ev = Variables::complex(q, "eta");
    let psi = chart.defining_series()?;
    let eta1 = Series::var(&ev, 0);
    let t = eta1.scale(-I / r);
    let geo = (0..TRUNCATION as u32).fold(Series::zero(&ev), |acc, k| &acc + &t.pow(k));
    let tinv: Vec<Series> = (0..q).map(|j| &Series::var(&ev, j) * &geo).collect();
    let s0 = psi.compose(&with_conjugates(&tinv))?;
    let one = Series::constant(&ev, C64::one());
    let mult = &(&one + &eta1.scale(I / r)) * &(&one - &Series::var(&ev, q).scale(I / r));
    let series = &mult * &s0;
    let eta1_sq = (&eta1 * &Series::var(&ev, q)).scale_re(1.0 / r);
    let expected = &(&(&minus_im_first(&ev, q) + &tangent_norm_sq(&ev, q)) + &eta1_sq) - &graph_in(&chart.p4, &ev, q)?;
    let series_error = series.distance(&expected);
    Ok(LocalizedChart { chart: chart.clone(), push: Some(r), series: Some(series), series_error })
}

/// Largest `|d/d(Im x1)|` coefficient among the terms of degree at least 2
/// of a series over a complex variable set.
pub fn im_dependence(s: &Series, q: usize) -> f64 {
    let hi = s.from_degree(2);
    (&hi.derivative(0) - &hi.derivative(q)).max_abs()
}

/// Deterministic boundary-biased samples: unit direction and radial
/// fraction in `(0, 1)`.
fn biased_samples(q: usize, n: usize, seed: u64) -> Vec<(P, f64)> {
    let mut s = SeededSampler::new(seed, q);
    (0..n).map(|_| (s.sphere(), s.beta(2.0 * q as f64, 0.5))).collect()
}

/// Point of the horoball `E(0, e1, R)`, the Euclidean ball of center
/// `e1/(1+R)` and radius `R/(1+R)`.
fn horo_point(q: usize, r: f64, dir: &P, s: f64) -> P {
    let mut x = dir.scale(s * r / (1.0 + r));
    x[0] += C64::new(1.0 / (1.0 + r), 0.0);
    debug_assert_eq!(x.dim(), q);
    x
}

fn near_point(rho: f64, dir: &P, s: f64) -> P {
    let mut x = dir.scale(s * rho);
    x[0] += C64::one();
    x
}

/// Sampled certificate of `E(0,e1,R) ⊂ phi(Omega)` and
/// `phi(Omega) ∩ B(e1, rho) ⊂ B^q`.
#[derive(Clone, Debug, Serialize)]
pub struct InclusionReport {
    pub radius: f64,
    pub rho: f64,
    pub samples: usize,
    pub horo_violations: usize,
    pub horo_witnesses: Vec<P>,
    /// Samples of `B(e1, rho)` that lie in the image of the domain.
    pub local_checked: usize,
    pub local_violations: usize,
    pub local_witnesses: Vec<P>,
    /// Largest radius with zero violations found by bisection.
    pub certified_radius: f64,
    pub certified_rho: f64,
}

fn horo_failures(chart: &LocalizedChart, r: f64, samples: &[(P, f64)], limit: usize) -> (usize, Vec<P>) {
    let q = chart.chart.dim();
    let mut count = 0;
    let mut wit = Vec::new();
    for (d, s) in samples {
        let x = horo_point(q, r, d, *s);
        if chart.contains(&x) != Some(true) {
            count += 1;
            if wit.len() < limit {
                wit.push(x);
            }
        }
    }
    (count, wit)
}

fn local_failures(chart: &LocalizedChart, rho: f64, samples: &[(P, f64)], limit: usize) -> (usize, usize, Vec<P>) {
    let (mut checked, mut count) = (0, 0);
    let mut wit = Vec::new();
    for (d, s) in samples {
        let x = near_point(rho, d, *s);
        if chart.contains(&x) == Some(true) {
            checked += 1;
            if x.norm() >= 1.0 {
                count += 1;
                if wit.len() < limit {
                    wit.push(x);
                }
            }
        }
    }
    (checked, count, wit)
}

/// Largest value in `(0, cap]` passing `ok`, by doubling or halving from
/// `start` and then geometric bisection. Returns `0` if nothing passes.
fn bisect_largest(start: f64, cap: f64, ok: impl Fn(f64) -> bool) -> f64 {
    let (mut lo, mut hi);
    if ok(start) {
        lo = start;
        loop {
            if lo >= cap {
                return cap;
            }
            let next = (2.0 * lo).min(cap);
            if !ok(next) {
                hi = next;
                break;
            }
            lo = next;
        }
    } else {
        hi = start;
        lo = start;
        let mut found = false;
        for _ in 0..40 {
            lo *= 0.5;
            if ok(lo) {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return 0.0;
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Samples the horoball `E(0,e1,R)` and the ball `B(e1, rho)`
/// (boundary-biased), counts inclusion violations and bisects the largest
/// admissible radii. The certified values are rechecked on all samples.
pub fn verify_inclusions(chart: &LocalizedChart, r: f64, rho: f64, n_samples: usize) -> Result<InclusionReport> {
    if !(r > 0.0 && rho > 0.0 && n_samples > 0) {
        return Err(HoloError::Precondition("radii and sample count must be positive".into()));
    }
    let q = chart.chart.dim();
    let horo = biased_samples(q, n_samples, 0x4e11);
    let near = biased_samples(q, n_samples, 0xb0a1);
    let nb = n_samples.min(BISECTION_SAMPLES);
    let mut certified_radius = bisect_largest(r, RADIUS_CAP, |t| horo_failures(chart, t, &horo[..nb], 0).0 == 0);
    for _ in 0..20 {
        if certified_radius == 0.0 || horo_failures(chart, certified_radius, &horo, 0).0 == 0 {
            break;
        }
        certified_radius *= 0.9;
    }
    let mut certified_rho = bisect_largest(rho, RHO_CAP, |t| local_failures(chart, t, &near[..nb], 0).1 == 0);
    for _ in 0..20 {
        if certified_rho == 0.0 || local_failures(chart, certified_rho, &near, 0).1 == 0 {
            break;
        }
        certified_rho *= 0.9;
    }
    let (horo_violations, horo_witnesses) = horo_failures(chart, r, &horo, WITNESSES);
    let (local_checked, local_violations, local_witnesses) = local_failures(chart, rho, &near, WITNESSES);
    Ok(InclusionReport {
        radius: r,
        rho,
        samples: n_samples,
        horo_violations,
        horo_witnesses,
        local_checked,
        local_violations,
        local_witnesses,
        certified_radius,
        certified_rho,
    })
}

/// Result of the localized distance comparison.
#[derive(Clone, Debug, Serialize)]
pub struct DistanceComparison {
    pub epsilon: f64,
    /// Certified `R_eps`.
    pub radius: f64,
    /// The search reached [`RADIUS_CAP`] without a violation.
    pub unbounded: bool,
    pub pairs: usize,
    pub violations: usize,
    /// Largest `|k_Omega - k_B| + gap` over the pairs at `radius`.
    pub max_deviation: f64,
    pub max_gap: f64,
    /// Distribution of `eps - (|k_Omega - k_B| + gap)` at `radius`.
    pub margin_min: f64,
    pub margin_median: f64,
    pub margin_max: f64,
}

/// Deviations `|k_Omega - k_B| + gap` for pairs of `E(0,e1,R)`; `None` for
/// pairs that leave the chart or the domain.
fn pair_deviations(domain: &DomainSpec, chart: &LocalizedChart, r: f64, pairs: &[((P, f64), (P, f64))], eps: f64) -> Result<Vec<Option<(f64, f64)>>> {
    let q = chart.chart.dim();
    let mut out = Vec::with_capacity(pairs.len());
    for ((d1, s1), (d2, s2)) in pairs {
        let (x, y) = (horo_point(q, r, d1, *s1), horo_point(q, r, d2, *s2));
        let mapped = chart.from_ball(&x).and_then(|a| Ok((a, chart.from_ball(&y)?)));
        let Ok((zx, zy)) = mapped else {
            out.push(None);
            continue;
        };
        if !domain.contains(&zx) || !domain.contains(&zy) {
            out.push(None);
            continue;
        }
        let k = domain.kobayashi(&zx, &zy)?;
        if k.gap > 0.5 * eps {
            return Err(HoloError::InsufficientPrecision { gap: k.gap, eps });
        }
        let kb = kobayashi_ball(&x, &y)?;
        out.push(Some(((k.value - kb).abs() + k.gap, k.gap)));
    }
    Ok(out)
}

/// Bisects `R_eps` such that seeded pairs in `E(0,e1,R_eps)` satisfy
/// `k_B - eps <= k_Omega <= k_B + eps`, the enclosure gap of `k_Omega`
/// counted against `eps`.
pub fn distance_comparison(domain: &DomainSpec, chart: &LocalizedChart, epsilon: f64) -> Result<DistanceComparison> {
    if !(epsilon > 0.0) {
        return Err(HoloError::Precondition("epsilon must be positive".into()));
    }
    let q = chart.chart.dim();
    let a = biased_samples(q, DISTANCE_PAIRS, 0xd157);
    let b = biased_samples(q, DISTANCE_PAIRS, 0xd158);
    let pairs: Vec<_> = a.into_iter().zip(b).collect();
    let bad = |devs: &[Option<(f64, f64)>]| devs.iter().filter(|d| d.is_none_or(|(v, _)| v > epsilon)).count();
    // Surface precision failures before the search swallows them.
    pair_deviations(domain, chart, 1e-3, &pairs, epsilon)?;
    let radius = bisect_largest(1e-2, RADIUS_CAP, |t| {
        pair_deviations(domain, chart, t, &pairs, epsilon).map(|d| bad(&d) == 0).unwrap_or(false)
    });
    if radius == 0.0 {
        return Err(HoloError::NonConvergent { what: "no admissible radius for the distance comparison".into(), report: None });
    }
    let devs = pair_deviations(domain, chart, radius, &pairs, epsilon)?;
    let mut margins: Vec<f64> = devs.iter().flatten().map(|(v, _)| epsilon - v).collect();
    margins.sort_by(f64::total_cmp);
    let max_gap = devs.iter().flatten().map(|(_, g)| *g).fold(0.0, f64::max);
    Ok(DistanceComparison {
        epsilon,
        radius,
        unbounded: radius >= RADIUS_CAP,
        pairs: pairs.len(),
        violations: bad(&devs),
        max_deviation: epsilon - margins.first().copied().unwrap_or(epsilon),
        max_gap,
        margin_min: margins.first().copied().unwrap_or(f64::NAN),
        margin_median: margins.get(margins.len() / 2).copied().unwrap_or(f64::NAN),
        margin_max: margins.last().copied().unwrap_or(f64::NAN),
    })
}
