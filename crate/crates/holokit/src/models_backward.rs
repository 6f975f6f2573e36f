//! Backward orbits at boundary repelling fixed points and their pre-models.
//!
//! The orbit is built by a stopping-time process in a ball chart sending the
//! repelling point to `e1`: seeds on the geodesic ray from `z_n` toward
//! `e1` are iterated forward until they first leave the horoball
//! `E(z_n, e1, 1)`, and the reversed trails of those iterates converge to a
//! backward orbit as the seeds approach `e1`.

use crate::ball::{horo_value, kobayashi_ball, koranyi_value, mobius};
use crate::convex::DomainSpec;
use crate::dynamics::{
    boundary_to_ball, check_monotone, dilation, from_ball, has_ball_chart, step_sequence, to_ball, BoundaryPoint, DilationMethod,
    HoloMap, OrbitDirection, OrbitRecord, StepConfig,
};
use crate::models_forward::{
    fit_automorphism, normal_form, serialize_aut, serialize_matrix, unitary_to_e1, ModelType, NormalForm, RescalingChart,
    RescalingOptions,
};
use crate::numerics::{detect_limit, gap_rank, polar_unitary, singular_values, SeededSampler};
use crate::{CMatrix, ConvergenceReport, HoloError, Point, Result, C64};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

type P = Point;

/// Smallest seed parameter: `k(0, T0) = 1`.
pub const T0: f64 = (E - 1.0) / (E + 1.0);
/// Hysteresis on the exit test `h >= 1`.
pub const EXIT_HYSTERESIS: f64 = 1e-12;
/// Largest tolerated `|f(x_{n+1}) - x_n|` on a returned orbit.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

pub type ChartFn = Arc<dyn Fn(&P) -> Result<P> + Send + Sync>;

/// Coordinates near a boundary point in which the point is `e1` and the
/// domain is compared with `B^q`.
#[derive(Clone)]
pub struct BallChart {
    pub name: String,
    /// Whether the chart is a biholomorphism onto `B^q`.
    pub exact: bool,
    to: ChartFn,
    from: ChartFn,
}

impl fmt::Debug for BallChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BallChart").field("name", &self.name).field("exact", &self.exact).finish()
    }
}

impl BallChart {
    pub fn new<F, G>(name: impl Into<String>, exact: bool, to: F, from: G) -> Self
    where
        F: Fn(&P) -> Result<P> + Send + Sync + 'static,
        G: Fn(&P) -> Result<P> + Send + Sync + 'static,
    {
        Self { name: name.into(), exact, to: Arc::new(to), from: Arc::new(from) }
    }

    /// The exact ball chart of the domain followed by a unitary sending the
    /// image of `zeta` to `e1`.
    pub fn exact(domain: &DomainSpec, zeta: &BoundaryPoint) -> Result<Self> {
        if !has_ball_chart(domain) {
            return Err(HoloError::Precondition(format!(
                "{} has no exact ball chart; supply a normal-form chart",
                domain.name()
            )));
        }
        let u = unitary_to_e1(&boundary_to_ball(domain, zeta)?);
        let ua = u.adjoint();
        let (d1, d2) = (domain.clone(), domain.clone());
        Ok(Self::new(
            format!("{}-ball", domain.name()),
            true,
            move |z| Ok(to_ball(&d1, z)?.apply(&u)),
            move |w| from_ball(&d2, &w.apply(&ua)),
        ))
    }

    pub fn to_ball(&self, z: &P) -> Result<P> {
        (self.to)(z)
    }

    pub fn from_ball(&self, w: &P) -> Result<P> {
        (self.from)(w)
    }
}

/// Parameters of the stopping-time construction.
#[derive(Clone, Debug)]
pub struct BackwardConfig {
    pub zeta: BoundaryPoint,
    /// Dilation at `zeta`; estimated by [`dilation`] when absent.
    pub lambda: Option<f64>,
    /// Initial horosphere radius `R_0`.
    pub r0: f64,
    /// Comparison tolerances `eps_n`; one radius `R_n = R_0 2^{-n}` is tried
    /// per entry.
    pub epsilon_seq: Vec<f64>,
    /// Increasing seed parameters in `(T0, 1)`.
    pub t_seq: Vec<f64>,
    pub max_iter: usize,
    /// The returned orbit has `trail_length + 1` points.
    pub trail_length: usize,
    /// Overrides the center `z_n` (domain coordinates).
    pub seed_point: Option<P>,
    pub cauchy_tol: f64,
    /// Consecutive trails that must agree.
    pub cauchy_count: usize,
    /// Allowed `|s_1 - log lambda|` at the end of the orbit.
    pub step_tol: f64,
    /// Resolution of the stopping-time jumps in the arc-length parameter.
    pub bisect_tol: f64,
    /// Required on domains without an exact ball chart.
    pub chart: Option<BallChart>,
}

impl BackwardConfig {
    pub fn new(zeta: BoundaryPoint) -> Self {
        Self {
            zeta,
            lambda: None,
            r0: 1.0,
            epsilon_seq: (0..8).map(|n| 0.5f64.powi(n + 2)).collect(),
            t_seq: default_t_seq(),
            max_iter: 10_000,
            trail_length: 10,
            seed_point: None,
            cauchy_tol: 1e-7,
            cauchy_count: 3,
            step_tol: 1e-3,
            bisect_tol: 1e-12,
            chart: None,
        }
    }
}

/// Seeds at arc length `1.25, 1.5, ..., 22` from `z_n`. Farther seeds carry
/// a rounding error of order `eps e^s` in the chart.
pub fn default_t_seq() -> Vec<f64> {
    (5..=88).map(|j| (0.125 * j as f64).tanh()).collect()
}

/// A discontinuity of the stopping time along the seed ray.
#[derive(Clone, Debug, Serialize)]
pub struct StoppingJump {
    /// Arc length of the seed from `z_n`, left of the jump.
    pub s: f64,
    /// Exit time of that seed.
    pub m: usize,
}

/// Full record of a construction run.
#[derive(Clone, Debug, Serialize)]
pub struct BackwardRun {
    pub orbit: OrbitRecord,
    pub n: usize,
    pub lambda: f64,
    pub lambda_source: String,
    pub radius: f64,
    pub inner_radius: f64,
    pub epsilon: f64,
    /// `z_n` in chart coordinates.
    pub center: P,
    pub jumps: Vec<StoppingJump>,
    /// Sup-norm distance between consecutive trails.
    pub trail_diffs: Vec<f64>,
    /// `(sigma_n x_{n,k}, sigma_n y_{n,k})` at the jumps, normalized so that
    /// `z_n` is the origin and the boundary point is `e1`.
    pub pairs: Vec<(P, P)>,
}

struct Ray<'a> {
    f: &'a HoloMap,
    chart: &'a BallChart,
    center: P,
    dir: P,
    e1: P,
    max_iter: usize,
}

impl Ray<'_> {
    fn seed(&self, s: f64) -> Result<P> {
        self.chart.from_ball(&mobius(&self.center, &self.dir.scale((s / 2.0).tanh())))
    }

    /// Horosphere value in the chart; `None` once the point is numerically
    /// on the sphere.
    fn horo(&self, x: &P) -> Option<f64> {
        match self.chart.to_ball(x) {
            Ok(w) if w.is_finite() && w.norm_sqr() < 1.0 => horo_value(&self.center, &self.e1, &w).ok(),
            _ => Some(f64::INFINITY),
        }
    }

    /// First `m >= 1` with `f^m(seed)` outside `E(z_n, e1, 1)`.
    fn exit_time(&self, s: f64) -> Result<usize> {
        let mut x = self.seed(s)?;
        for m in 1..=self.max_iter {
            x = self.f.apply(&x);
            // The horoball meets the boundary only at zeta, so an iterate
            // reaching the boundary before leaving it is trapped.
            let h = if x.is_finite() && self.f.domain.contains(&x) { self.horo(&x) } else { None };
            match h {
                None => return Err(HoloError::TrappedOrbit { max_iter: self.max_iter }),
                Some(h) if h >= 1.0 + EXIT_HYSTERESIS => return Ok(m),
                _ => {}
            }
        }
        Err(HoloError::TrappedOrbit { max_iter: self.max_iter })
    }

    fn iterates(&self, s: f64, m: usize) -> Result<Vec<P>> {
        let mut pts = vec![self.seed(s)?];
        for _ in 0..m {
            pts.push(self.f.apply(pts.last().unwrap()));
        }
        Ok(pts)
    }
}

fn validate(cfg: &BackwardConfig) -> Result<()> {
    let bad = |m: &str| Err(HoloError::Precondition(m.into()));
    if !(cfg.r0 > 0.0) {
        return bad("R0 must be positive");
    }
    if cfg.epsilon_seq.is_empty() || cfg.epsilon_seq.windows(2).any(|w| w[1] > w[0]) {
        return bad("epsilon_seq must be non-empty and decreasing");
    }
    if cfg.t_seq.len() < 2 || cfg.t_seq.windows(2).any(|w| w[1] <= w[0]) || cfg.t_seq[0] <= T0 || *cfg.t_seq.last().unwrap() >= 1.0 {
        return bad("t_seq must increase inside (t0, 1)");
    }
    if cfg.trail_length < 1 || cfg.cauchy_count < 2 {
        return bad("need trail_length >= 1 and cauchy_count >= 2");
    }
    if let Some(l) = cfg.lambda {
        if !(l > 1.0) {
            return bad("lambda must exceed 1");
        }
    }
    Ok(())
}

/// Runs the stopping-time construction.
pub fn backward_run(f: &HoloMap, cfg: &BackwardConfig) -> Result<BackwardRun> {
    validate(cfg)?;
    if f.domain != f.codomain {
        return Err(HoloError::Precondition("backward orbits need a self-map".into()));
    }
    let dom = &f.domain;
    let q = dom.dim;
    let chart = match &cfg.chart {
        Some(c) => c.clone(),
        None => BallChart::exact(dom, &cfg.zeta)?,
    };
    let (lambda, lambda_source) = match cfg.lambda {
        Some(l) => (l, "user".to_string()),
        None => {
            let d = dilation(f, &cfg.zeta, &dom.center, DilationMethod::GeodesicStep)?;
            (d.value, "dilation (geodesic step)".to_string())
        }
    };
    if !(lambda > 1.0) {
        return Err(HoloError::Precondition(format!("dilation {lambda} <= 1: the point is not repelling")));
    }
    let e1 = P::basis(q, 0);
    let origin = P::zeros(q);
    let s_seq: Vec<f64> = cfg.t_seq.iter().map(|t| 2.0 * t.atanh()).collect();
    let mut notes = vec![];
    let mut last_diffs = vec![];

    for (n, &eps) in cfg.epsilon_seq.iter().enumerate() {
        let radius = cfg.r0 * 0.5f64.powi(n as i32);
        let inner = radius / (lambda * E);
        let center = match &cfg.seed_point {
            Some(p) => chart.to_ball(p)?,
            None => {
                let h = inner / 2.0;
                e1.scale((1.0 - h) / (1.0 + h))
            }
        };
        if !(center.norm_sqr() < 1.0) || horo_value(&origin, &e1, &center)? >= inner {
            notes.push(format!("n = {n}: center outside E(0, e1, r_n = {inner:.3e})"));
            continue;
        }
        let ray = Ray { f, chart: &chart, dir: mobius(&center, &e1), center: center.clone(), e1: e1.clone(), max_iter: cfg.max_iter };
        let ms: Vec<usize> = s_seq.par_iter().map(|&s| ray.exit_time(s)).collect::<Result<_>>()?;
        let brackets: Vec<(f64, f64, usize)> =
            (0..ms.len() - 1).filter(|&k| ms[k + 1] != ms[k]).map(|k| (s_seq[k], s_seq[k + 1], ms[k])).collect();
        // Left end of each jump: the exit point sits on the horosphere.
        let located: Vec<(f64, usize)> = brackets
            .par_iter()
            .map(|&(mut lo, mut hi, m)| {
                while hi - lo > cfg.bisect_tol {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if ray.exit_time(mid)? == m {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok((lo, m))
            })
            .collect::<Result<_>>()?;
        let sigma_u = unitary_to_e1(&ray.dir);
        let sigma = |x: &P| -> Result<P> { Ok(mobius(&center, &chart.to_ball(x)?).apply(&sigma_u)) };

        let mut jumps = vec![];
        let mut trails: Vec<Vec<P>> = vec![];
        let mut pairs = vec![];
        let mut diffs = vec![];
        let mut streak = 0;
        let mut accepted = None;
        for &(s, m) in &located {
            jumps.push(StoppingJump { s, m });
            if m < cfg.trail_length {
                continue;
            }
            let pts = ray.iterates(s, m)?;
            pairs.push((sigma(&pts[m - 1])?, sigma(&pts[m])?));
            let trail: Vec<P> = (0..=cfg.trail_length).map(|nu| pts[m - nu].clone()).collect();
            if let Some(prev) = trails.last() {
                let d = prev.iter().zip(&trail).map(|(a, b)| a.dist(b)).fold(0.0, f64::max);
                diffs.push(d);
                streak = if d <= cfg.cauchy_tol { streak + 1 } else { 0 };
            }
            trails.push(trail);
            if streak + 1 >= cfg.cauchy_count {
                accepted = Some(trails.len() - 1);
                break;
            }
        }
        let Some(j) = accepted else {
            notes.push(format!("n = {n}: trails not Cauchy over {} usable jumps", trails.len()));
            last_diffs = diffs;
            continue;
        };
        let points = trails.swap_remove(j);
        let solver_tolerance = points.windows(2).map(|w| f.apply(&w[1]).dist(&w[0])).fold(0.0, f64::max);
        if !(solver_tolerance <= COMPATIBILITY_TOL) {
            return Err(HoloError::InvariantViolation(format!("backward orbit relation off by {solver_tolerance:e}")));
        }
        let mut orbit = OrbitRecord::from_points(dom, points, OrbitDirection::Backward, false)?;
        if has_ball_chart(dom) {
            orbit = orbit.with_horo(dom, &dom.center, &cfg.zeta)?;
        }
        orbit.koranyi =
            orbit.points.iter().map(|x| koranyi_value(&origin, &e1, &chart.to_ball(x)?)).collect::<Result<_>>()?;
        orbit.solver_tolerance = solver_tolerance;
        let last = *orbit.steps.last().unwrap();
        if (last - lambda.ln()).abs() > cfg.step_tol {
            return Err(HoloError::InvariantViolation(format!(
                "final step {last} differs from log lambda = {} by more than {}",
                lambda.ln(),
                cfg.step_tol
            )));
        }
        notes.push(format!("n = {n}: accepted after {} usable jumps, R_n = {radius:.3e}", j + 1));
        notes.push(format!("lambda = {lambda} ({lambda_source})"));
        orbit.notes = notes;
        return Ok(BackwardRun {
            orbit,
            n,
            lambda,
            lambda_source,
            radius,
            inner_radius: inner,
            epsilon: eps,
            center,
            jumps,
            trail_diffs: diffs,
            pairs,
        });
    }
    Err(HoloError::NonConvergent {
        what: format!("no backward orbit: {}", notes.join("; ")),
        report: Some(ConvergenceReport {
            values: last_diffs,
            converged: false,
            limit: None,
            window: cfg.cauchy_count,
            tol: cfg.cauchy_tol,
        }),
    })
}

/// Backward orbit with step `log lambda` converging to `cfg.zeta`.
pub fn backward_orbit(f: &HoloMap, cfg: &BackwardConfig) -> Result<OrbitRecord> {
    Ok(backward_run(f, cfg)?.orbit)
}

/// Backward `m`-step: the limit of the non-decreasing `k(x_n, x_{n+m})`.
pub fn backward_step(domain: &DomainSpec, orbit: &OrbitRecord, m: usize, cfg: &StepConfig) -> Result<ConvergenceReport> {
    if m == 0 {
        return Err(HoloError::Precondition("backward step needs m >= 1".into()));
    }
    if orbit.len() <= m + cfg.window {
        return Err(HoloError::NotEnoughData { needed: m + cfg.window + 1, got: orbit.len() });
    }
    let (vals, gaps) = step_sequence(domain, &orbit.points, m)?;
    check_monotone(&vals, &gaps, true, cfg.slack)?;
    detect_limit(&vals, cfg.window, cfg.tol)
}

/// Settings of [`extract_pre_model`].
#[derive(Clone, Debug)]
pub struct PreModelConfig {
    pub zeta: BoundaryPoint,
    pub chart: Option<BallChart>,
    pub samples: usize,
    /// Kobayashi radii of the sample grid around the origin.
    pub radii: Vec<f64>,
    pub seed: u64,
    /// Sup-norm tolerance between consecutive stages.
    pub cauchy_tol: f64,
    pub cauchy_window: usize,
    pub rank_rel: f64,
    pub rank_gap: f64,
    pub refine: bool,
    /// Base step of the Richardson-extrapolated Jacobian at the origin.
    pub jacobian_step: f64,
    pub step_window: usize,
    /// Tolerance on `c(tau)` against the backward step rates.
    pub rate_tol: f64,
    /// Points of the radial ray used for the K-limit check.
    pub ray_points: usize,
    pub rescaling: RescalingOptions,
}

impl PreModelConfig {
    pub fn new(zeta: BoundaryPoint) -> Self {
        Self {
            zeta,
            chart: None,
            samples: 48,
            radii: vec![0.25, 0.5, 1.0],
            seed: 23,
            cauchy_tol: 1e-6,
            cauchy_window: 2,
            rank_rel: 1e-5,
            rank_gap: 10.0,
            refine: true,
            jacobian_step: 1e-2,
            step_window: 3,
            rate_tol: 1e-3,
            ray_points: 4,
            rescaling: RescalingOptions::default(),
        }
    }
}

/// Behavior of `l` along the radial ray toward the repelling point of tau.
#[derive(Clone, Debug, Serialize)]
pub struct KLimitReport {
    /// Koranyi function in chart coordinates, pole at the chart image of
    /// the orbit's first point.
    pub koranyi: Vec<f64>,
    /// Euclidean distance to `e1` in chart coordinates.
    pub distances: Vec<f64>,
    pub bound: f64,
    /// Distances strictly decrease and all values are finite.
    pub approaches: bool,
}

/// Pre-model `(B^k, l, tau)` with `f ∘ l = l ∘ tau` and its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct PreModelEstimate {
    pub k: usize,
    pub model_type: ModelType,
    /// Dilation `lambda > 1` of tau at its repelling point.
    pub dilation: f64,
    pub angles: Vec<f64>,
    pub normal_form: NormalForm,
    pub tag: String,
    #[serde(serialize_with = "serialize_aut")]
    pub tau: BallAutomorphism,
    /// Projection onto the model slice (`k x q`).
    #[serde(serialize_with = "serialize_matrix")]
    pub frame: CMatrix,
    /// `max |f(l(u)) - l(tau(u))|` on the model samples.
    pub residual: f64,
    /// Kobayashi misfit of the automorphism fit.
    pub fit_residual: f64,
    pub singular_values: Vec<f64>,
    pub stage: usize,
    pub cauchy: ConvergenceReport,
    /// `log lambda`.
    pub c_tau: f64,
    /// Backward steps `s_m`, `m = 1, 2, ...`.
    pub steps: Vec<f64>,
    pub rate_limit: f64,
    pub rate_inf: f64,
    /// `max(|c - lim s_m/m|, |c - inf s_m/m|)`.
    pub rate_agreement: f64,
    pub k_limit: KLimitReport,
    pub orbit: OrbitRecord,
    /// `l(u)` on the model samples: points with backward orbits toward zeta.
    pub stable_samples: Vec<P>,
    pub notes: Vec<String>,
}

type BallAutomorphism = crate::ball::BallAutomorphism<f64>;

struct BackStage {
    m: usize,
    chart: RescalingChart,
    /// `W^*`: the stage is `f^m ∘ psi^{-1} ∘ W^*`.
    gauge: CMatrix,
    /// Jacobian of the gauged stage at the origin.
    jacobian: CMatrix,
}

impl BackStage {
    fn build(f: &HoloMap, x: &P, m: usize, h: f64, opts: &RescalingOptions) -> Result<Self> {
        let chart = RescalingChart::at(&f.domain, x, &opts.squeeze, opts.squeeze_floor, None)?;
        let q = x.dim();
        let raw = |w: &P| -> Result<P> { Ok(f.iterate_point(&chart.inverse(w)?, m)) };
        let central = |h: f64| -> Result<CMatrix> {
            let mut j = CMatrix::zeros(q, q);
            for c in 0..q {
                let e = P::basis(q, c).scale(h);
                let d = (&raw(&e)? - &raw(&e.scale(-1.0))?).scale(0.5 / h);
                for r in 0..q {
                    j[(r, c)] = d[r];
                }
            }
            Ok(j)
        };
        let jac = (central(h / 2.0)? * C64::new(4.0, 0.0) - central(h)?) / C64::new(3.0, 0.0);
        if jac.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(HoloError::Singular(format!("stage {m} Jacobian")));
        }
        let gauge = if opts.gauge { polar_unitary(&jac).adjoint() } else { CMatrix::identity(q, q) };
        let jacobian = &jac * &gauge;
        Ok(Self { m, chart, gauge, jacobian })
    }

    fn eval(&self, f: &HoloMap, w: &P) -> Result<P> {
        Ok(f.iterate_point(&self.chart.inverse(&w.apply(&self.gauge))?, self.m))
    }
}

/// Pre-model of `f` at the limit point of a backward orbit.
pub fn extract_pre_model(f: &HoloMap, orbit: &OrbitRecord, cfg: &PreModelConfig) -> Result<PreModelEstimate> {
    if orbit.direction != OrbitDirection::Backward {
        return Err(HoloError::Precondition("pre-models need a backward orbit".into()));
    }
    let dom = &f.domain;
    let q = dom.dim;
    let top = orbit.len() - 1;
    if top < cfg.cauchy_window + 1 || orbit.len() <= cfg.step_window + 1 {
        return Err(HoloError::NotEnoughData { needed: cfg.cauchy_window.max(cfg.step_window) + 2, got: orbit.len() });
    }
    if !orbit.steps.iter().all(|s| s.is_finite()) {
        return Err(HoloError::Precondition("orbit step is not bounded".into()));
    }
    let chart = match &cfg.chart {
        Some(c) => c.clone(),
        None => BallChart::exact(dom, &cfg.zeta)?,
    };
    let mut notes = vec![];

    let stages: Vec<BackStage> = (top - cfg.cauchy_window..=top)
        .into_par_iter()
        .map(|m| BackStage::build(f, &orbit.points[m], m, cfg.jacobian_step, &cfg.rescaling))
        .collect::<Result<_>>()?;
    let last = stages.last().unwrap();
    let inner = stages.iter().map(|s| s.chart.inner_radius()).fold(1.0, f64::min);

    let mut sampler = SeededSampler::new(cfg.seed, q);
    let per = (cfg.samples / cfg.radii.len().max(1)).max(1);
    let grid: Vec<P> = cfg.radii.iter().flat_map(|&d| (0..per).map(|_| sampler.ball_at_distance(d)).collect::<Vec<_>>()).collect();
    if grid.iter().any(|w| w.norm() >= inner) {
        return Err(HoloError::OutOfDomain("sample grid exceeds the chart's inner ball".into()));
    }
    let values: Vec<Vec<P>> =
        stages.iter().map(|st| grid.par_iter().map(|w| st.eval(f, w)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    if values.iter().flatten().any(|x| !x.is_finite() || !dom.contains(x)) {
        return Err(HoloError::OutOfDomain("a stage left the domain on the sample grid".into()));
    }
    let diffs: Vec<f64> =
        values.windows(2).map(|v| v[0].iter().zip(&v[1]).map(|(a, b)| a.dist(b)).fold(0.0, f64::max)).collect();
    let cauchy = ConvergenceReport {
        converged: diffs.iter().all(|&d| d <= cfg.cauchy_tol),
        limit: None,
        window: cfg.cauchy_window,
        tol: cfg.cauchy_tol,
        values: diffs,
    };
    if !cauchy.converged {
        return Err(HoloError::NonConvergent { what: "pre-model stages not pointwise Cauchy".into(), report: Some(cauchy) });
    }

    let sv = singular_values(&last.jacobian);
    let k = gap_rank(&sv, cfg.rank_rel, cfg.rank_gap).map_err(|candidates| HoloError::AmbiguousDimension { candidates })?;
    if k == 0 {
        return Err(HoloError::Singular("pre-model stage has zero derivative".into()));
    }
    let svd = last.jacobian.clone().svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let embed = CMatrix::from_fn(q, k, |r, c| u[(r, order[c])]);
    let frame = embed.adjoint();
    let ell = |x: &P| -> Result<P> { last.eval(f, &x.apply(&embed)) };

    // tau = W_M psi_M psi_{M-1}^{-1} W_{M-1}^*, read on the model slice.
    let prev = &stages[stages.len() - 2];
    let tau_slice = |x: &P| -> Result<P> {
        let y = prev.chart.inverse(&x.apply(&embed).apply(&prev.gauge))?;
        Ok(last.chart.apply(&y).apply(&last.gauge.adjoint()).apply(&frame))
    };
    let mut ms = SeededSampler::new(cfg.seed ^ 0x9e37, k);
    let model: Vec<P> = std::iter::once(P::zeros(k))
        .chain(cfg.radii.iter().flat_map(|&d| (0..per).map(|_| ms.ball_at_distance(d)).collect::<Vec<_>>()))
        .collect();
    let pairs: Vec<(P, P)> = model.iter().map(|x| Ok((x.clone(), tau_slice(x)?))).collect::<Result<_>>()?;
    let (tau, fit_residual) = fit_automorphism(&pairs, &pairs[0].1, cfg.refine)?;
    let nf = normal_form(&tau, true)?;
    let (dilation, angles) = match &nf.form {
        NormalForm::Hyperbolic { lambda, angles } => (*lambda, angles.clone()),
        other => {
            notes.push(format!("tau is not hyperbolic: {}", other.tag()));
            (1.0, vec![])
        }
    };

    let residual = model
        .par_iter()
        .map(|x| Ok(f.apply(&ell(x)?).dist(&ell(&tau.apply(x))?)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let stable_samples: Vec<P> = model.iter().map(&ell).collect::<Result<_>>()?;

    let step_cfg = StepConfig { n_max: orbit.len(), window: cfg.step_window, tol: 1e-6, slack: 1e-9 };
    let steps: Vec<f64> = (1..orbit.len() - cfg.step_window)
        .map(|m| {
            let r = backward_step(dom, orbit, m, &step_cfg)?;
            Ok(r.limit.unwrap_or(*r.values.last().unwrap()))
        })
        .collect::<Result<_>>()?;
    let rates: Vec<f64> = steps.iter().enumerate().map(|(i, s)| s / (i + 1) as f64).collect();
    let rate_limit = *rates.last().unwrap();
    let rate_inf = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let c_tau = nf.form.divergence_rate();
    let rate_agreement = (c_tau - rate_limit).abs().max((c_tau - rate_inf).abs());
    if rate_agreement > cfg.rate_tol {
        notes.push(format!("c(tau) = {c_tau} vs step rates {rate_limit} / {rate_inf}"));
    }

    let e1 = P::basis(q, 0);
    let pole = chart.to_ball(&orbit.points[0])?;
    let mut koranyi = vec![];
    let mut distances = vec![];
    if let (Some(eta), true) = (&nf.repelling, dilation > 1.0) {
        for j in 1..=cfg.ray_points {
            let w = chart.to_ball(&ell(&eta.scale((0.5 * j as f64 * dilation.ln()).tanh()))?)?;
            koranyi.push(koranyi_value(&pole, &e1, &w).unwrap_or(f64::INFINITY));
            distances.push(w.dist(&e1));
        }
    }
    let approaches = !distances.is_empty()
        && koranyi.iter().all(|v| v.is_finite())
        && distances.windows(2).all(|d| d[1] < d[0]);
    let bound = koranyi.iter().cloned().fold(0.0, f64::max);

    Ok(PreModelEstimate {
        k,
        model_type: nf.model_type,
        dilation,
        angles,
        tag: nf.form.tag().to_string(),
        normal_form: nf.form,
        tau,
        frame,
        residual,
        fit_residual,
        singular_values: sv,
        stage: last.m,
        cauchy,
        c_tau,
        steps,
        rate_limit,
        rate_inf,
        rate_agreement,
        k_limit: KLimitReport { koranyi, distances, bound, approaches },
        orbit: orbit.clone(),
        stable_samples,
        notes,
    })
}

/// Comparison of two backward orbits.
#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    /// `k(x_m, y_m)` over the common range.
    pub distances: Vec<f64>,
    pub common_length: usize,
    pub sup: f64,
    /// The non-decreasing sequence has a flat tail.
    pub bounded: bool,
    pub same_class: bool,
    pub warnings: Vec<String>,
}

/// Settings of [`uniqueness_check`].
#[derive(Clone, Debug)]
pub struct UniquenessConfig {
    /// Largest Euclidean distance between the last points, and largest
    /// boundary margin of each last point.
    pub limit_tol: f64,
    pub window: usize,
    /// Allowed spread of the tail.
    pub tail_tol: f64,
    pub slack: f64,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        Self { limit_tol: 1e-2, window: 3, tail_tol: 1e-6, slack: 1e-9 }
    }
}

/// Decides whether two backward orbits toward the same boundary point stay
/// at bounded distance.
pub fn uniqueness_check(domain: &DomainSpec, a: &OrbitRecord, b: &OrbitRecord, cfg: &UniquenessConfig) -> Result<UniquenessReport> {
    if a.is_empty() || b.is_empty() {
        return Err(HoloError::NotEnoughData { needed: 1, got: 0 });
    }
    let (la, lb) = (a.points.last().unwrap(), b.points.last().unwrap());
    let margins = (domain.interior_margin(la), domain.interior_margin(lb));
    if margins.0 > cfg.limit_tol || margins.1 > cfg.limit_tol || la.dist(lb) > cfg.limit_tol {
        return Err(HoloError::Precondition(format!(
            "orbits do not approach a common boundary point (margins {:.3e}, {:.3e}; gap {:.3e})",
            margins.0,
            margins.1,
            la.dist(lb)
        )));
    }
    let mut warnings = vec![];
    let n = a.len().min(b.len());
    if a.len() != b.len() {
        warnings.push(format!("unequal lengths {} and {}; compared over {n}", a.len(), b.len()));
    }
    let mut distances = vec![];
    let mut gaps = vec![];
    for m in 0..n {
        let d = domain.kobayashi(&a.points[m], &b.points[m])?;
        distances.push(d.value);
        gaps.push(d.gap);
    }
    check_monotone(&distances, &gaps, true, cfg.slack)?;
    let sup = distances.iter().cloned().fold(0.0, f64::max);
    let bounded = n >= cfg.window && detect_limit(&distances, cfg.window, cfg.tail_tol)?.converged;
    if n < cfg.window {
        warnings.push("too short to judge the tail".into());
    }
    Ok(UniquenessReport { distances, common_length: n, sup, bounded, same_class: bounded, warnings })
}

/// Outcome of [`rescaled_compactness_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompactnessStatus {
    Compact,
    BoundaryDrift,
    PreconditionViolated,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompactnessReport {
    pub status: CompactnessStatus,
    pub max_norm_x: f64,
    pub max_norm_y: f64,
    /// Limits of `k(0, x_n) - k(0, y_n)` and `k(x_n, y_n)`.
    pub limit_difference: Option<f64>,
    pub limit_distance: Option<f64>,
    pub notes: Vec<String>,
}

/// Settings of [`rescaled_compactness_experiment`].
#[derive(Clone, Debug)]
pub struct CompactnessConfig {
    pub window: usize,
    pub tol: f64,
    /// Boundary distance below which a point counts as drifting.
    pub drift_floor: f64,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        Self { window: 3, tol: 1e-6, drift_floor: 1e-6 }
    }
}

/// Checks that pairs `x_n in E(0, zeta, R)`, `y_n` outside it, with
/// `k(0, x_n) - k(0, y_n)` and `k(x_n, y_n)` tending to a common `L > 0`,
/// stay in a compact subset of `B^q`.
pub fn rescaled_compactness_experiment(
    x_seq: &[P],
    y_seq: &[P],
    zeta: &P,
    r: f64,
    cfg: &CompactnessConfig,
) -> Result<CompactnessReport> {
    if x_seq.len() != y_seq.len() || x_seq.is_empty() {
        return Err(HoloError::Precondition("sequences must be non-empty and of equal length".into()));
    }
    let q = zeta.dim();
    let origin = P::zeros(q);
    let max_norm_x = x_seq.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let max_norm_y = y_seq.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut report = CompactnessReport {
        status: CompactnessStatus::PreconditionViolated,
        max_norm_x,
        max_norm_y,
        limit_difference: None,
        limit_distance: None,
        notes: vec![],
    };
    for (n, (x, y)) in x_seq.iter().zip(y_seq).enumerate() {
        let inside = horo_value(&origin, zeta, x).map(|h| h < r).unwrap_or(false);
        let outside = horo_value(&origin, zeta, y).map(|h| h >= r).unwrap_or(false);
        if !inside || !outside {
            report.notes.push(format!("pair {n} violates the horosphere separation"));
            return Ok(report);
        }
    }
    let mut diff = vec![];
    let mut dist = vec![];
    for (x, y) in x_seq.iter().zip(y_seq) {
        diff.push(kobayashi_ball(&origin, x)? - kobayashi_ball(&origin, y)?);
        dist.push(kobayashi_ball(x, y)?);
    }
    report.status = CompactnessStatus::Inconclusive;
    if diff.len() < cfg.window {
        report.notes.push("too few pairs to establish the limits".into());
        return Ok(report);
    }
    let (a, b) = (detect_limit(&diff, cfg.window, cfg.tol)?, detect_limit(&dist, cfg.window, cfg.tol)?);
    report.limit_difference = a.limit;
    report.limit_distance = b.limit;
    match (a.limit, b.limit) {
        (Some(la), Some(lb)) if (la - lb).abs() <= cfg.tol && lb > cfg.tol => {}
        _ => {
            report.notes.push("limit conditions not established".into());
            return Ok(report);
        }
    }
    let margin = x_seq.iter().chain(y_seq).map(|p| 1.0 - p.norm()).fold(f64::INFINITY, f64::min);
    report.status = if margin < cfg.drift_floor { CompactnessStatus::BoundaryDrift } else { CompactnessStatus::Compact };
    Ok(report)
}
