//! Forward canonical models by rescaled iterates.
//!
//! Stage `(m, n)` is `G_m^* ψ_m ∘ f^{m-n}`, where `ψ_m` is a chart of the
//! domain onto `B^q` sending `f^m(base)` to the origin and `G_m` is the
//! unitary polar factor of the Jacobian of `ψ_m ∘ f^m` at `base`. The
//! intertwining map `h` is the pointwise limit of stage `(m, 0)`.

use crate::ball::{cayley, cayley_inverse, kobayashi_ball, mobius, siegel_recenter, siegel_recenter_inverse, BallAutomorphism, Unitary};
use crate::convex::{squeeze_lower, DomainKind, DomainSpec, SqueezeConfig, SqueezeEmbedding};
use crate::dynamics::{classify, divergence_rate, forward_step, ClassifyBudget, HoloMap, MapType, StepConfig};
use crate::numerics::{gap_rank, numerical_jacobian, pattern_search, polar_unitary, singular_values, SeededSampler};
use crate::{CMatrix, ConvergenceReport, HoloError, Point, Result, C64};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

type P = Point;

/// Chart of a domain onto `B^q` sending a chosen center to the origin.
#[derive(Clone, Debug)]
pub enum RescalingChart {
    /// `phi_c`.
    Ball { center: P },
    /// Heisenberg recentering at `center` followed by the inverse Cayley
    /// transform.
    Siegel { center: P },
    /// Coordinate scaling onto the ball, then `phi_c`.
    Ellipsoid { scale: Vec<f64>, center: P },
    /// Squeezing embedding; only an inner ball of the given radius is
    /// guaranteed to lie in the image.
    Squeeze { embedding: SqueezeEmbedding, inner_radius: f64 },
}

impl RescalingChart {
    /// Chart centered at `y`. General convex domains go through the
    /// squeezing embedding and are rejected below `floor`.
    pub fn at(domain: &DomainSpec, y: &P, squeeze: &SqueezeConfig, floor: f64, warm: Option<&SqueezeEmbedding>) -> Result<Self> {
        if !domain.contains(y) {
            return Err(HoloError::OutOfDomain("chart center outside the domain".into()));
        }
        Ok(match &domain.kind {
            DomainKind::Ball => Self::Ball { center: y.clone() },
            DomainKind::Siegel => Self::Siegel { center: y.clone() },
            DomainKind::Ellipsoid { coefficients } => {
                let scale: Vec<f64> = coefficients.iter().map(|a| a.sqrt()).collect();
                let center = scale_point(y, &scale);
                Self::Ellipsoid { scale, center }
            }
            _ => {
                let cert = squeeze_lower(domain, y, squeeze, warm)?;
                if cert.inner_radius < floor {
                    return Err(HoloError::InsufficientSqueezing { radius: cert.inner_radius, floor });
                }
                Self::Squeeze { embedding: cert.embedding, inner_radius: cert.inner_radius }
            }
        })
    }

    pub fn apply(&self, w: &P) -> P {
        match self {
            Self::Ball { center } => mobius(center, w),
            Self::Siegel { center } => {
                cayley_inverse(&siegel_recenter(center, w)).unwrap_or_else(|_| nan_point(w.dim()))
            }
            Self::Ellipsoid { scale, center } => mobius(center, &scale_point(w, scale)),
            Self::Squeeze { embedding, .. } => embedding.apply(w),
        }
    }

    pub fn inverse(&self, v: &P) -> Result<P> {
        match self {
            Self::Ball { center } => Ok(mobius(center, v)),
            Self::Siegel { center } => Ok(siegel_recenter_inverse(center, &cayley(v)?)),
            Self::Ellipsoid { scale, center } => {
                let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
                Ok(scale_point(&mobius(center, v), &inv))
            }
            Self::Squeeze { embedding, .. } => {
                let x = mobius(&embedding.offset, v);
                let l = embedding.linear.clone().try_inverse().ok_or_else(|| HoloError::Singular("squeezing embedding".into()))?;
                Ok(&embedding.base + &(&x - &embedding.offset).scale(1.0 / embedding.scale).apply(&l))
            }
        }
    }

    /// Radius of the ball around the origin known to lie in the image.
    pub fn inner_radius(&self) -> f64 {
        match self {
            Self::Squeeze { inner_radius, .. } => *inner_radius,
            _ => 1.0,
        }
    }
}

fn scale_point(z: &P, s: &[f64]) -> P {
    P::new(z.coords.iter().zip(s).map(|(c, a)| c * *a).collect())
}

fn nan_point(q: usize) -> P {
    P::new(vec![C64::new(f64::NAN, 0.0); q])
}

/// One rescaled stage `G^* ψ_m ∘ f^{m-n}`.
#[derive(Clone, Debug)]
pub struct RescaledStage {
    pub m: usize,
    pub n: usize,
    pub base: P,
    pub chart: RescalingChart,
    /// `G^*`.
    pub gauge: CMatrix,
    /// Jacobian of `G^* ψ_m ∘ f^m` at `base`.
    pub jacobian: CMatrix,
    f: HoloMap,
}

impl RescaledStage {
    pub fn eval(&self, x: &P) -> P {
        self.chart.apply(&self.f.iterate_point(x, self.m - self.n)).apply(&self.gauge)
    }

    /// The same chart and gauge applied after `m - n` iterates.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n > self.m {
            return Err(HoloError::Precondition(format!("stage index n = {n} exceeds m = {}", self.m)));
        }
        Ok(Self { n, ..self.clone() })
    }

    /// `(G^* ψ_m)^{-1}` on the ball.
    pub fn chart_inverse(&self, v: &P) -> Result<P> {
        self.chart.inverse(&v.apply(&self.gauge.adjoint()))
    }
}

/// Options shared by the rescaling constructions.
#[derive(Clone, Debug)]
pub struct RescalingOptions {
    pub gauge: bool,
    pub squeeze: SqueezeConfig,
    pub squeeze_floor: f64,
}

impl Default for RescalingOptions {
    fn default() -> Self {
        Self { gauge: true, squeeze: SqueezeConfig::default(), squeeze_floor: 0.5 }
    }
}

/// Finite-difference step for Jacobians at `x`.
pub(crate) fn jacobian_step(domain: &DomainSpec, x: &P) -> (f64, f64) {
    let margin = domain.interior_margin(x).max(0.0);
    let h = 1e-6 * margin.min(1.0).max(1e-6);
    (h, margin.max(2.0 * h) + h)
}

/// Stage `(m, n)` for the orbit of `base`.
pub fn rescaled_stage(f: &HoloMap, base: &P, m: usize, n: usize, opts: &RescalingOptions) -> Result<RescaledStage> {
    rescaled_stage_warm(f, base, m, n, opts, None)
}

fn rescaled_stage_warm(
    f: &HoloMap,
    base: &P,
    m: usize,
    n: usize,
    opts: &RescalingOptions,
    warm: Option<&SqueezeEmbedding>,
) -> Result<RescaledStage> {
    if n > m {
        return Err(HoloError::Precondition(format!("need n <= m, got n = {n}, m = {m}")));
    }
    let mut y = base.clone();
    for j in 0..m {
        y = f.apply(&y);
        if !f.domain.contains(&y) || f.domain.interior_margin(&y) < crate::dynamics::EXIT_MARGIN {
            return Err(HoloError::NonConvergent { what: format!("orbit left the interior at step {}", j + 1), report: None });
        }
    }
    let chart = RescalingChart::at(&f.domain, &y, &opts.squeeze, opts.squeeze_floor, warm)?;
    let (h, margin) = jacobian_step(&f.domain, base);
    let raw = numerical_jacobian(|x| chart.apply(&f.iterate_point(x, m)), base, h, margin)?;
    let q = f.codomain.dim;
    let gauge = if opts.gauge { polar_unitary(&raw).adjoint() } else { CMatrix::identity(q, q) };
    let jacobian = &gauge * raw;
    Ok(RescaledStage { m, n, base: base.clone(), chart, gauge, jacobian, f: f.clone() })
}

/// Seeded sample grid around `base`: points at Kobayashi radii cycling
/// through `radii` in the chart centered at `base`.
pub fn sample_grid(domain: &DomainSpec, base: &P, n: usize, radii: &[f64], seed: u64, opts: &RescalingOptions) -> Result<Vec<P>> {
    let chart = RescalingChart::at(domain, base, &opts.squeeze, opts.squeeze_floor, None)?;
    let inner = chart.inner_radius();
    let mut s = SeededSampler::new(seed, domain.dim);
    (0..n)
        .map(|i| {
            let r = radii[i % radii.len()];
            let mut v = s.ball_at_distance(r);
            if v.norm() >= inner {
                v = v.scale(0.9 * inner / v.norm());
            }
            chart.inverse(&v)
        })
        .collect()
}

/// Kind of a model automorphism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelType {
    Hyperbolic,
    Parabolic,
    Elliptic,
}

/// Siegel normal form of a model automorphism.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum NormalForm {
    /// `(z1 / lambda, e^{i t_j} z'_j / sqrt(lambda))`.
    Hyperbolic { lambda: f64, angles: Vec<f64> },
    /// `(z1 + sign, e^{i t_j} z'_j)`.
    Parabolic { sign: f64, angles: Vec<f64> },
    /// `(z1 - 2 z'_1 + i, z'_1 - i, e^{i t_j} z'_j)`.
    Heisenberg { angles: Vec<f64> },
    Elliptic,
}

impl NormalForm {
    pub fn tag(&self) -> &'static str {
        match self {
            NormalForm::Hyperbolic { .. } => "lomo1",
            NormalForm::Parabolic { sign, .. } if *sign > 0.0 => "lomo2+",
            NormalForm::Parabolic { .. } => "lomo2-",
            NormalForm::Heisenberg { .. } => "lomo3",
            NormalForm::Elliptic => "elliptic",
        }
    }

    /// Divergence rate of the normal form: `-log lambda` for hyperbolic forms
    /// with `lambda < 1`, zero otherwise.
    pub fn divergence_rate(&self) -> f64 {
        match self {
            NormalForm::Hyperbolic { lambda, .. } => lambda.ln().abs(),
            _ => 0.0,
        }
    }

    /// The normal form as a self-map of `H^k`.
    pub fn to_map(&self, k: usize) -> Result<HoloMap> {
        match self {
            NormalForm::Hyperbolic { lambda, angles } => HoloMap::siegel_hyperbolic(*lambda, angles),
            NormalForm::Parabolic { sign, angles } => HoloMap::siegel_parabolic(*sign, angles),
            NormalForm::Heisenberg { angles } => HoloMap::siegel_heisenberg(angles),
            NormalForm::Elliptic => HoloMap::identity(DomainSpec::siegel(k.max(1))),
        }
    }
}

/// Unitary `U` with `U x = e1` for a unit vector `x`.
pub fn unitary_to_e1(x: &P) -> CMatrix {
    let k = x.dim();
    let mut m = CMatrix::identity(k, k);
    for i in 0..k {
        m[(i, 0)] = x[i];
    }
    // Q^* x = r11 e1 with |r11| = 1.
    let qr = m.qr();
    let r11 = qr.r()[(0, 0)];
    qr.q().adjoint() * (C64::new(1.0, 0.0) / r11)
}

/// Point of the geodesic joining the boundary points `xi` and `eta` closest
/// to their Euclidean chord center; `phi_c` sends them to antipodes.
pub fn geodesic_midpoint(xi: &P, eta: &P) -> P {
    let d = xi - eta;
    let v = d.scale(1.0 / d.norm());
    let o = eta - &v.scale_c(eta.inner(&v));
    let r = (1.0 - o.norm_sqr()).max(0.0).sqrt();
    let a = (xi - &o).inner(&v) / r;
    let b = (eta - &o).inner(&v) / r;
    let half = 0.5 * (a / b).arg().abs();
    let dist = half.cos() / (1.0 + half.sin());
    let bis = a + b;
    let zeta = if bis.norm() < 1e-15 { C64::new(0.0, 0.0) } else { bis / bis.norm() * dist };
    &o + &v.scale_c(zeta * r)
}

/// Siegel coordinates adapted to a model automorphism: `Psi = C ∘ U ∘ phi_c`.
#[derive(Clone, Debug)]
pub struct SiegelFrame {
    pub center: P,
    pub unitary: CMatrix,
}

impl SiegelFrame {
    /// Frame sending `xi` to infinity and, when given, `eta` to the origin.
    pub fn new(xi: &P, eta: Option<&P>) -> Self {
        let k = xi.dim();
        let center = match eta {
            Some(eta) => geodesic_midpoint(xi, eta),
            None => P::zeros(k),
        };
        let xi1 = if center.norm_sqr() == 0.0 { xi.clone() } else { mobius(&center, xi) };
        let xi1 = xi1.scale(1.0 / xi1.norm());
        Self { center, unitary: unitary_to_e1(&xi1) }
    }

    fn phi(&self, z: &P) -> P {
        if self.center.norm_sqr() == 0.0 {
            z.clone()
        } else {
            mobius(&self.center, z)
        }
    }

    pub fn to_siegel(&self, z: &P) -> Result<P> {
        cayley(&self.phi(z).apply(&self.unitary))
    }

    pub fn from_siegel(&self, w: &P) -> Result<P> {
        Ok(self.phi(&cayley_inverse(w)?.apply(&self.unitary.adjoint())))
    }

    /// `Psi ∘ tau ∘ Psi^{-1}`.
    pub fn conjugate(&self, tau: &BallAutomorphism<f64>, w: &P) -> Result<P> {
        self.to_siegel(&tau.apply(&self.from_siegel(w)?))
    }
}

fn angles_of(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return vec![];
    }
    let (_, t) = m.clone().schur().unpack();
    let mut a: Vec<f64> = (0..t.nrows()).map(|i| t[(i, i)].arg()).collect();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    a
}

/// Normal form of a ball automorphism with its type.
#[derive(Clone, Debug, Serialize)]
pub struct NormalFormFit {
    pub model_type: ModelType,
    pub form: NormalForm,
    /// Attracting (or unique) boundary fixed point in ball coordinates.
    pub attracting: Option<P>,
    pub repelling: Option<P>,
    /// Translation part `b = T(i, 0)'` of a parabolic form.
    pub heisenberg_shift: Vec<[f64; 2]>,
    pub translation: f64,
}

/// Tolerance for deciding `b = 0` in parabolic normal forms.
pub const NORMAL_FORM_TOL: f64 = 1e-6;
/// Margin for deciding `lambda = 1`. Fixed points of a parabolic with a
/// three-dimensional Jordan block are only accurate to about `eps^{1/3}`.
pub const NORMAL_FORM_DILATION_TOL: f64 = 1e-3;

/// Reads the Siegel normal form of `tau`, with the attracting point sent
/// to infinity (`repelling_at_infinity = false`) or the repelling point
/// (`true`).
pub fn normal_form(tau: &BallAutomorphism<f64>, repelling_at_infinity: bool) -> Result<NormalFormFit> {
    let k = tau.a.dim();
    // Jordan blocks of parabolic maps can leave spurious sphere points.
    let fixed: Vec<P> = tau.boundary_fixed_points().into_iter().filter(|z| tau.apply(z).dist(z) < 1e-5).collect();
    let mut dil: Vec<(P, f64)> = fixed.into_iter().filter_map(|z| tau.dilation_at(&z).ok().map(|d| (z, d))).collect();
    dil.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let orbit_escapes = {
        let mut z = P::zeros(k);
        for _ in 0..2000 {
            z = tau.apply(&z);
        }
        z.norm() > 1.0 - 1e-3
    };
    let e1 = P::basis(k, 0);
    let i_pt = |x: f64| {
        let mut w = P::zeros(k);
        w[0] = C64::new(0.0, x);
        w
    };
    if let (Some(first), Some(last)) = (dil.first(), dil.last()) {
        if first.1 < 1.0 - NORMAL_FORM_DILATION_TOL && last.1 > 1.0 + NORMAL_FORM_DILATION_TOL {
            let (att, rep) = (first.0.clone(), last.0.clone());
            let (xi, eta) = if repelling_at_infinity { (&rep, &att) } else { (&att, &rep) };
            let frame = SiegelFrame::new(xi, Some(eta));
            let t0 = frame.conjugate(tau, &i_pt(1.0))?;
            let lambda = 1.0 / t0[0].im;
            let eps = 1e-6;
            let mut rot = CMatrix::zeros(k - 1, k - 1);
            for l in 1..k {
                let mut w = i_pt(1.0);
                w[l] = C64::new(eps, 0.0);
                let tw = frame.conjugate(tau, &w)?;
                for j in 1..k {
                    rot[(j - 1, l - 1)] = (tw[j] - t0[j]) / eps * lambda.sqrt();
                }
            }
            return Ok(NormalFormFit {
                model_type: ModelType::Hyperbolic,
                form: NormalForm::Hyperbolic { lambda, angles: angles_of(&rot) },
                attracting: Some(att),
                repelling: Some(rep),
                heisenberg_shift: vec![],
                translation: 0.0,
            });
        }
    }
    if orbit_escapes {
        let xi = dil
            .iter()
            .min_by(|a, b| (a.1 - 1.0).abs().partial_cmp(&(b.1 - 1.0).abs()).unwrap())
            .map(|d| d.0.clone())
            .unwrap_or(e1);
        let frame = SiegelFrame::new(&xi, None);
        let t0 = frame.conjugate(tau, &i_pt(1.0))?;
        let shift: Vec<C64> = (1..k).map(|j| t0[j]).collect();
        let bnorm = shift.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let t = t0[0].re;
        let eps = 1e-6;
        let mut rot = CMatrix::zeros(k - 1, k - 1);
        for l in 1..k {
            let mut w = i_pt(1.0);
            w[l] = C64::new(eps, 0.0);
            let tw = frame.conjugate(tau, &w)?;
            for j in 1..k {
                rot[(j - 1, l - 1)] = (tw[j] - t0[j]) / eps;
            }
        }
        let angles = angles_of(&rot);
        let form = if bnorm > NORMAL_FORM_TOL {
            NormalForm::Heisenberg { angles: angles.into_iter().skip(1).collect() }
        } else {
            NormalForm::Parabolic { sign: if t >= 0.0 { 1.0 } else { -1.0 }, angles }
        };
        return Ok(NormalFormFit {
            model_type: ModelType::Parabolic,
            form,
            attracting: Some(xi),
            repelling: None,
            heisenberg_shift: shift.iter().map(|c| [c.re, c.im]).collect(),
            translation: t,
        });
    }
    Ok(NormalFormFit {
        model_type: ModelType::Elliptic,
        form: NormalForm::Elliptic,
        attracting: None,
        repelling: None,
        heisenberg_shift: vec![],
        translation: 0.0,
    })
}

/// Least-squares automorphism of `B^k` with `tau(u_i) ≈ v_i`, given the
/// image `b` of the origin: Procrustes for the unitary part, then an
/// optional compass search on the center minimizing the mean squared
/// Kobayashi mismatch.
pub fn fit_automorphism(pairs: &[(P, P)], b: &P, refine: bool) -> Result<(BallAutomorphism<f64>, f64)> {
    let k = b.dim();
    if k == 0 {
        return Ok((BallAutomorphism::identity(0), 0.0));
    }
    let solve = |b: &P| -> Option<BallAutomorphism<f64>> {
        if !(b.norm() < 1.0) {
            return None;
        }
        let mut m = CMatrix::zeros(k, k);
        for (u, v) in pairs {
            let w = if b.norm_sqr() == 0.0 { v.clone() } else { mobius(b, v) };
            m += w.to_vector() * u.to_vector().adjoint();
        }
        let v = polar_unitary(&m);
        let a = if b.norm_sqr() == 0.0 { P::zeros(k) } else { P::from_vector(&(v.adjoint() * b.to_vector())) };
        Some(BallAutomorphism { a, u: Unitary::from_matrix(&v) })
    };
    let cost = |t: &BallAutomorphism<f64>| -> f64 {
        let s: f64 = pairs.iter().map(|(u, v)| kobayashi_ball(&t.apply(u), v).unwrap_or(1e6).powi(2)).sum();
        s / pairs.len().max(1) as f64
    };
    let mut tau = solve(b).ok_or_else(|| HoloError::OutOfDomain("model image of f(base) left the ball".into()))?;
    if refine {
        let (x, fx) = pattern_search(
            |x| solve(&P::from_real_vec(x)).map(|t| cost(&t)).unwrap_or(f64::INFINITY),
            &b.to_real_vec(),
            1e-3,
            1e-12,
            400,
        );
        if fx < cost(&tau) {
            tau = solve(&P::from_real_vec(&x)).unwrap();
        }
    }
    let residual = pairs.iter().map(|(u, v)| kobayashi_ball(&tau.apply(u), v).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    Ok((tau, residual))
}

pub(crate) fn serialize_matrix<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
    rows.serialize(s)
}

pub(crate) fn serialize_aut<S: Serializer>(t: &BallAutomorphism<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Aut {
        center: Vec<[f64; 2]>,
        #[serde(serialize_with = "serialize_matrix")]
        unitary: CMatrix,
    }
    Aut { center: t.a.pairs(), unitary: t.u.to_matrix() }.serialize(s)
}

/// Configuration of [`extract_forward_model`].
#[derive(Clone, Debug)]
pub struct ForwardConfig {
    pub m_max: usize,
    /// Pointwise Cauchy tolerance on consecutive stages.
    pub cauchy_tol: f64,
    /// Consecutive stages that must pass the Cauchy test.
    pub cauchy_window: usize,
    pub samples: usize,
    pub radii: Vec<f64>,
    pub seed: u64,
    pub rank_rel: f64,
    pub rank_gap: f64,
    pub refine: bool,
    /// Run [`classify`] first and reject elliptic and zero-step maps.
    pub check_type: bool,
    pub rescaling: RescalingOptions,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            m_max: 60,
            cauchy_tol: 1e-8,
            cauchy_window: 3,
            samples: 64,
            radii: vec![0.5, 1.0, 2.0],
            seed: 17,
            rank_rel: 1e-5,
            rank_gap: 10.0,
            refine: true,
            check_type: true,
            rescaling: RescalingOptions::default(),
        }
    }
}

/// Extracted model `(B^k, h, tau)` with its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct ModelEstimate {
    pub k: usize,
    pub model_type: ModelType,
    pub dilation: f64,
    pub angles: Vec<f64>,
    pub normal_form: NormalForm,
    pub tag: String,
    #[serde(serialize_with = "serialize_aut")]
    pub tau: BallAutomorphism<f64>,
    /// Projection onto the model slice (`k x q`).
    #[serde(serialize_with = "serialize_matrix")]
    pub frame: CMatrix,
    pub base: P,
    /// `(x, h(x))` on the sample grid.
    pub intertwiner: Vec<(P, P)>,
    /// `max k_{B^k}(tau(h x), h(f x))`.
    pub residual: f64,
    pub metric_agreement: f64,
    /// Metric agreement at each stage, final `h`.
    pub agreement_trace: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// Stage at which `h` was read.
    pub stage: usize,
    pub cauchy: ConvergenceReport,
    /// Squeezing-chart path: tolerances are widened by `1 - inner radius`.
    pub experimental: bool,
    pub tolerance_widening: f64,
    pub notes: Vec<String>,
    #[serde(skip)]
    final_stage: Option<RescaledStage>,
}

impl ModelEstimate {
    /// Model coordinates `W_k^* h(x)` of a point of the domain.
    pub fn model_coords(&self, x: &P) -> Result<P> {
        let st = self.final_stage.as_ref().ok_or_else(|| HoloError::Precondition("estimate carries no stage".into()))?;
        Ok(st.eval(x).apply(&self.frame))
    }

    pub fn stage(&self) -> Option<&RescaledStage> {
        self.final_stage.as_ref()
    }
}

fn max_dist(a: &[P], b: &[P]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dist(y)).fold(0.0, f64::max)
}

/// Forward model by the rescaling construction.
pub fn extract_forward_model(f: &HoloMap, base: &P, cfg: &ForwardConfig) -> Result<ModelEstimate> {
    if f.domain != f.codomain {
        return Err(HoloError::Precondition("model extraction needs a self-map".into()));
    }
    let mut notes = vec![];
    if cfg.check_type {
        let cl = classify(f, base, &ClassifyBudget::default())?;
        match cl.map_type {
            MapType::Hyperbolic | MapType::ParabolicNonzeroStep => {}
            t => return Err(HoloError::Precondition(format!("model extraction needs a hyperbolic or nonzero-step map, got {t:?}"))),
        }
    }
    let dom = &f.domain;
    let grid = sample_grid(dom, base, cfg.samples, &cfg.radii, cfg.seed, &cfg.rescaling)?;
    let mut pts = vec![base.clone(), f.apply(base)];
    for x in &grid {
        pts.push(x.clone());
        pts.push(f.apply(x));
    }

    let mut prev: Option<Vec<P>> = None;
    let mut diffs = vec![];
    let mut streak = 0;
    let mut warm: Option<SqueezeEmbedding> = None;
    let mut found: Option<(RescaledStage, Vec<P>)> = None;
    let mut widening = 0.0f64;
    for m in 1..=cfg.m_max {
        let stage = match rescaled_stage_warm(f, base, m, 0, &cfg.rescaling, warm.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                notes.push(format!("stage {m}: {e}"));
                break;
            }
        };
        if let RescalingChart::Squeeze { embedding, inner_radius } = &stage.chart {
            warm = Some(embedding.clone());
            widening = widening.max(1.0 - inner_radius);
        }
        let vals: Vec<P> = pts.par_iter().map(|x| stage.eval(x)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            notes.push(format!("stage {m}: non-finite values"));
            break;
        }
        if let Some(p) = &prev {
            let d = max_dist(p, &vals);
            diffs.push(d);
            streak = if d <= cfg.cauchy_tol + widening { streak + 1 } else { 0 };
            if streak >= cfg.cauchy_window {
                found = Some((stage, vals));
                break;
            }
        }
        prev = Some(vals);
    }
    let cauchy = ConvergenceReport {
        values: diffs.clone(),
        converged: found.is_some(),
        limit: found.as_ref().map(|_| 0.0),
        window: cfg.cauchy_window,
        tol: cfg.cauchy_tol + widening,
    };
    let (stage, vals) = match found {
        Some(x) => x,
        None => {
            return Err(HoloError::NonConvergent {
                what: format!("rescaled stages not pointwise Cauchy within m_max = {}: {}", cfg.m_max, notes.join("; ")),
                report: Some(cauchy),
            })
        }
    };

    let sv = singular_values(&stage.jacobian);
    let k = gap_rank(&sv, cfg.rank_rel, cfg.rank_gap).map_err(|candidates| HoloError::AmbiguousDimension { candidates })?;
    let svd = stage.jacobian.clone().svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut frame = CMatrix::zeros(k, dom.dim);
    for (r, &c) in order.iter().take(k).enumerate() {
        for j in 0..dom.dim {
            frame[(r, j)] = u[(j, c)].conj();
        }
    }
    let coords: Vec<P> = vals.iter().map(|v| v.apply(&frame)).collect();
    let b = coords[1].clone();
    let pairs: Vec<(P, P)> = (0..pts.len() / 2).map(|i| (coords[2 * i].clone(), coords[2 * i + 1].clone())).collect();
    let (tau, residual) = fit_automorphism(&pairs, &b, cfg.refine)?;
    let nf = normal_form(&tau, false)?;
    let dilation = match &nf.form {
        NormalForm::Hyperbolic { lambda, .. } => *lambda,
        _ => 1.0,
    };
    let angles = match &nf.form {
        NormalForm::Hyperbolic { angles, .. } | NormalForm::Parabolic { angles, .. } | NormalForm::Heisenberg { angles } => angles.clone(),
        NormalForm::Elliptic => vec![],
    };

    // Pullback metric agreement with the final h on pairs (base, x_i) and (x_i, x_{i+1}).
    let model_pts: Vec<&P> = std::iter::once(&coords[0]).chain(coords.iter().skip(2).step_by(2)).collect();
    let dom_pts: Vec<&P> = std::iter::once(base).chain(grid.iter()).collect();
    let mut idx_pairs: Vec<(usize, usize)> = (1..dom_pts.len()).map(|i| (0, i)).collect();
    idx_pairs.extend((1..dom_pts.len() - 1).map(|i| (i, i + 1)));
    let model_d: Vec<f64> = idx_pairs.iter().map(|&(i, j)| kobayashi_ball(model_pts[i], model_pts[j])).collect::<Result<_>>()?;
    let exact = !matches!(stage.chart, RescalingChart::Squeeze { .. });
    let trace_stages: Vec<usize> = if exact { (1..=stage.m).collect() } else { vec![stage.m] };
    let mut agreement_trace = vec![];
    for &m in &trace_stages {
        let it: Vec<P> = dom_pts.par_iter().map(|x| f.iterate_point(x, m)).collect();
        let worst = idx_pairs
            .par_iter()
            .zip(model_d.par_iter())
            .map(|(&(i, j), md)| dom.kobayashi(&it[i], &it[j]).map(|d| (d.value - md).abs()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        agreement_trace.push(worst);
    }
    let metric_agreement = *agreement_trace.last().unwrap();
    let intertwiner = std::iter::once(base.clone()).chain(grid.iter().cloned()).zip(model_pts.iter().map(|p| (*p).clone())).collect();
    if widening > 0.0 {
        notes.push(format!("squeezing charts: tolerances widened by {widening:.3e}"));
    }
    Ok(ModelEstimate {
        k,
        model_type: nf.model_type,
        dilation,
        angles,
        tag: nf.form.tag().to_string(),
        normal_form: nf.form,
        tau,
        frame,
        base: base.clone(),
        intertwiner,
        residual,
        metric_agreement,
        agreement_trace,
        singular_values: sv,
        stage: stage.m,
        cauchy,
        experimental: !exact,
        tolerance_widening: widening,
        notes,
        final_stage: Some(stage),
    })
}

/// Comparison of the model's step data with the map's.
#[derive(Clone, Debug, Serialize)]
pub struct StepCheckReport {
    /// Closed-form divergence rate of the normal form.
    pub c_tau: f64,
    pub c_f: f64,
    pub rate_difference: f64,
    /// `(m, s_m(base), k_{B^k}(h(base), tau^m h(base)))`.
    pub steps: Vec<(usize, f64, f64)>,
    pub max_step_difference: f64,
}

/// Compares `c(tau)` with `c(f)` and `s_m(base)` with the model steps.
pub fn model_step_check(f: &HoloMap, est: &ModelEstimate, m_max: usize, rate_m_max: usize) -> Result<StepCheckReport> {
    let c_tau = est.normal_form.divergence_rate();
    let c_f = divergence_rate(f, &est.base, rate_m_max, None)?.rate;
    let u0 = est.model_coords(&est.base)?;
    let mut steps = vec![];
    let mut worst = 0.0f64;
    let mut t = u0.clone();
    for m in 1..=m_max {
        t = est.tau.apply(&t);
        let model = kobayashi_ball(&u0, &t)?;
        let s = forward_step(f, &est.base, m, &StepConfig { n_max: 60, window: 4, tol: 1e-6, slack: 1e-9 })?;
        let s = s.limit.unwrap_or(*s.values.last().unwrap());
        worst = worst.max((s - model).abs());
        steps.push((m, s, model));
    }
    Ok(StepCheckReport { c_tau, c_f, rate_difference: (c_tau - c_f).abs(), steps, max_step_difference: worst })
}

/// Idempotence defect of the limit retract `alpha = G_M^* ψ_M f^{M-n} ψ_n^{-1} G_n`.
#[derive(Clone, Debug, Serialize)]
pub struct RetractReport {
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    /// `max |alpha(alpha(w)) - alpha(w)|`.
    pub max_defect: f64,
}

pub fn retract_idempotence(f: &HoloMap, base: &P, n: usize, m: usize, samples: usize, seed: u64, opts: &RescalingOptions) -> Result<RetractReport> {
    if n > m {
        return Err(HoloError::Precondition("need n <= m".into()));
    }
    let outer = rescaled_stage(f, base, m, n, opts)?;
    let inner = rescaled_stage(f, base, n, n, opts)?;
    let r = 0.5 * inner.chart.inner_radius();
    let alpha = |w: &P| -> Result<P> { Ok(outer.eval(&inner.chart_inverse(w)?)) };
    let mut s = SeededSampler::new(seed, f.domain.dim);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let w = s.ball(r);
        let a = alpha(&w)?;
        if a.norm() >= inner.chart.inner_radius() {
            continue;
        }
        worst = worst.max(alpha(&a)?.dist(&a));
    }
    Ok(RetractReport { n, m, samples, max_defect: worst })
}
