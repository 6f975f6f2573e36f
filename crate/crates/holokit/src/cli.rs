//! Config-driven experiment runner behind the `holokit` binary.
//!
//! A TOML config with `[domain]`, `[map]`, `[run]` and `[tolerances]`
//! tables names one verb; [`run`] dispatches it and returns a [`Report`]
//! serialized as JSON under the schema tag [`SCHEMA_TAG`]. Re-running an
//! identical config reproduces the report except for its `timestamp` field.
//!
//! ```toml
//! [domain]
//! kind = "ball"
//! dim = 1
//!
//! [map]
//! kind = "ball-translation"
//! a = 0.5
//!
//! [run]
//! verb = "classify"
//! seed = 7
//! output = "classify.json"
//!
//! [tolerances]
//! dilation_tol = 1e-3
//! ```

use crate::ball::{gromov_suite, SLIM_SAMPLES};
use crate::convex::{squeeze_lower, squeeze_trend, DomainSpec, SqueezeConfig};
use crate::dynamics::{
    classify, dilation, divergence_rate, has_ball_chart, julia_check, BoundaryPoint, ClassifyBudget, DilationMethod,
    HoloMap,
};
use crate::localization::{distance_comparison, fefferman_chart, localized_chart, verify_inclusions, LocalizedChart};
use crate::models_backward::{backward_run, extract_pre_model, BackwardConfig, BallChart, PreModelConfig};
use crate::models_forward::{extract_forward_model, ForwardConfig};
use crate::{HoloError, Point, Result, C64, NORMALIZATION};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Versioned schema tag of every report.
pub const SCHEMA_TAG: &str = "holokit-report-v1";

/// A point of `C^q` as `[re, im]` pairs.
pub type PointDecl = Vec<[f64; 2]>;

fn point(p: &PointDecl) -> Point {
    Point::new(p.iter().map(|c| C64::new(c[0], c[1])).collect())
}

/// Full experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainDecl,
    #[serde(default)]
    pub map: Option<MapDecl>,
    pub run: RunDecl,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainDecl {
    Ball { dim: usize },
    Siegel { dim: usize },
    Egg,
    Ellipsoid { coefficients: Vec<f64> },
}

impl DomainDecl {
    pub fn build(&self) -> Result<DomainSpec> {
        match self {
            DomainDecl::Ball { dim } | DomainDecl::Siegel { dim } if *dim == 0 => {
                Err(HoloError::schema("domain.dim", "dimension must be at least 1"))
            }
            DomainDecl::Ball { dim } => Ok(DomainSpec::ball(*dim)),
            DomainDecl::Siegel { dim } => Ok(DomainSpec::siegel(*dim)),
            DomainDecl::Egg => Ok(DomainSpec::egg()),
            DomainDecl::Ellipsoid { coefficients } => DomainSpec::ellipsoid(coefficients)
                .map_err(|e| HoloError::schema("domain.coefficients", e.to_string())),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapDecl {
    Identity,
    /// `z -> c z` on a cone-like domain.
    Scaling { c: [f64; 2] },
    /// The ball automorphism moving `0` to `a e1`.
    BallTranslation { a: f64 },
    /// `(alpha z1 + shift, beta_j z_{j+1})` on the Siegel half-space.
    SiegelAffine {
        alpha: f64,
        #[serde(default)]
        shift: f64,
        #[serde(default)]
        beta: Vec<[f64; 2]>,
    },
    SiegelHyperbolic {
        lambda: f64,
        #[serde(default)]
        angles: Vec<f64>,
    },
    SiegelParabolic {
        sign: f64,
        #[serde(default)]
        angles: Vec<f64>,
    },
    EggAutomorphism { a: f64 },
    /// A Siegel map transported to the ball.
    CayleyConjugate { inner: Box<MapDecl> },
}

impl MapDecl {
    pub fn build(&self, domain: &DomainSpec) -> Result<HoloMap> {
        let bad = |e: HoloError| HoloError::schema("map", e.to_string());
        let f = match self {
            MapDecl::Identity => HoloMap::identity(domain.clone()),
            MapDecl::Scaling { c } => HoloMap::scaling(domain.clone(), C64::new(c[0], c[1])),
            MapDecl::BallTranslation { a } => HoloMap::ball_translation(domain.dim, *a),
            MapDecl::SiegelAffine { alpha, shift, beta } => {
                let beta: Vec<C64> = beta.iter().map(|b| C64::new(b[0], b[1])).collect();
                HoloMap::siegel_affine(*alpha, *shift, &beta)
            }
            MapDecl::SiegelHyperbolic { lambda, angles } => HoloMap::siegel_hyperbolic(*lambda, angles),
            MapDecl::SiegelParabolic { sign, angles } => HoloMap::siegel_parabolic(*sign, angles),
            MapDecl::EggAutomorphism { a } => HoloMap::egg_automorphism(*a),
            MapDecl::CayleyConjugate { inner } => {
                let g = inner.build(&DomainSpec::siegel(domain.dim))?;
                HoloMap::cayley_conjugate(&g)
            }
        }
        .map_err(bad)?;
        if f.domain != *domain {
            return Err(HoloError::schema(
                "map.kind",
                format!("map acts on {} but the declared domain is {}", f.domain.name(), domain.name()),
            ));
        }
        Ok(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Kobayashi,
    Squeeze,
    Classify,
    Dilation,
    DivergenceRate,
    Julia,
    ModelForward,
    BackwardOrbit,
    PreModel,
    Gromov,
    Localize,
    CompareDistance,
}

fn default_seed() -> u64 {
    7
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDecl {
    pub verb: Verb,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Report path; the binary prints to stdout when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Optional CSV for orbit tables and trends.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

/// A boundary point: `"infinity"` or a point.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundaryDecl {
    Named(String),
    Finite(PointDecl),
}

/// Verb parameters. Each verb reads the fields it needs; absent fields take
/// the defaults of the underlying operation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub x: Option<PointDecl>,
    pub y: Option<PointDecl>,
    pub zeta: Option<BoundaryDecl>,
    pub pole: Option<PointDecl>,
    pub inward: Option<PointDecl>,
    pub seed_point: Option<PointDecl>,
    pub lambda: Option<f64>,
    pub m_max: Option<usize>,
    pub iterations: Option<usize>,
    pub method: Option<DilationMethod>,
    pub radii: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub n_points: Option<usize>,
    pub trail_length: Option<usize>,
    pub push_radius: Option<f64>,
    pub horo_radius: Option<f64>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub triangles: Option<usize>,
    pub samples_per_side: Option<usize>,
    pub amplitude: Option<f64>,
}

/// Decision tolerances shared by the verbs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Margin for deciding `lambda = 1`.
    pub dilation_tol: f64,
    /// First step above this counts as nonzero.
    pub step_floor: f64,
    /// Allowed `|s_1 - log lambda|` at the end of a backward orbit.
    pub step_tol: f64,
    /// Cauchy tolerance of backward trails.
    pub cauchy_tol: f64,
    /// Allowed `|c(tau) - c(f)|`.
    pub rate_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { dilation_tol: 1e-3, step_floor: 1e-6, step_tol: 1e-3, cauchy_tol: 1e-7, rate_tol: 1e-3 }
    }
}

/// A numeric claim with the tolerance it is held to and the evidence it
/// rests on.
#[derive(Clone, Debug, Serialize)]
pub struct Claim {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub evidence: String,
}

fn claim(name: &str, value: f64, tolerance: f64, evidence: impl Into<String>) -> Claim {
    Claim { name: name.into(), value, tolerance, evidence: evidence.into() }
}

/// Plot-ready numeric table.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timestamp {
    pub unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

/// Outcome of one experiment.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub normalization: &'static str,
    pub status: &'static str,
    pub config: ExperimentConfig,
    pub domain: String,
    pub map: Option<String>,
    pub claims: Vec<Claim>,
    pub result: Value,
    pub table: Option<Table>,
    pub error: Option<ErrorInfo>,
    /// The only field that changes between identical runs.
    pub timestamp: Timestamp,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, |e| e.exit_code)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }

    /// The JSON report with the timestamp removed, for reproducibility checks.
    pub fn without_timestamp(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report values serialize");
        if let Value::Object(m) = &mut v {
            m.remove("timestamp");
        }
        v
    }
}

/// Parses and validates a TOML config. Errors name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: toml::Value = toml::from_str(text).map_err(|e| HoloError::schema("<document>", e.message()))?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let mut field = e.path().to_string();
        let message = e.inner().to_string();
        if let Some(missing) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
            field = if field == "." { missing.to_string() } else { format!("{field}.{missing}") };
        }
        // Tagged enums report their own table; point at the tag.
        if (field == "domain" || field.starts_with("map")) && message.contains("variant") {
            field.push_str(".kind");
        }
        HoloError::schema(&field, message)
    })?;
    cfg.domain.build()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HoloError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

struct Outcome {
    claims: Vec<Claim>,
    result: Value,
    table: Option<Table>,
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report values serialize")
}

fn boundary(decl: &Option<BoundaryDecl>, domain: &DomainSpec) -> Result<BoundaryPoint> {
    match decl {
        None => Err(HoloError::schema("run.params.zeta", "this verb needs a boundary point")),
        Some(BoundaryDecl::Named(s)) if s == "infinity" => Ok(BoundaryPoint::Infinity),
        Some(BoundaryDecl::Named(s)) => Err(HoloError::schema("run.params.zeta", format!("unknown boundary point `{s}`"))),
        Some(BoundaryDecl::Finite(p)) => {
            let z = point(p);
            check_dim("run.params.zeta", &z, domain)?;
            Ok(BoundaryPoint::Finite(z))
        }
    }
}

fn finite(zeta: &BoundaryPoint) -> Result<Point> {
    match zeta {
        BoundaryPoint::Finite(z) => Ok(z.clone()),
        BoundaryPoint::Infinity => Err(HoloError::schema("run.params.zeta", "a finite boundary point is required")),
    }
}

fn check_dim(field: &str, z: &Point, domain: &DomainSpec) -> Result<()> {
    if z.dim() != domain.dim {
        return Err(HoloError::schema(field, format!("expected {} coordinates, got {}", domain.dim, z.dim())));
    }
    Ok(())
}

fn point_or(field: &str, decl: &Option<PointDecl>, default: &Point, domain: &DomainSpec) -> Result<Point> {
    let z = decl.as_ref().map_or_else(|| default.clone(), point);
    check_dim(field, &z, domain)?;
    Ok(z)
}

fn require_map<'a>(f: &'a Option<HoloMap>, verb: Verb) -> Result<&'a HoloMap> {
    f.as_ref().ok_or_else(|| HoloError::schema("map", format!("verb {verb:?} needs a [map] table")))
}

/// Exact chart when available, otherwise the localized normal-form chart.
fn ball_chart(domain: &DomainSpec, zeta: &BoundaryPoint, push_radius: Option<f64>) -> Result<Option<BallChart>> {
    if has_ball_chart(domain) {
        return Ok(None);
    }
    let chart = fefferman_chart(domain, &finite(zeta)?)?;
    let local = localized_chart(&chart, push_radius.unwrap_or(1.0))?;
    Ok(Some(local.ball_chart()))
}

fn orbit_table(points: &[Point], steps: &[f64], distance_to_base: &[f64], koranyi: &[f64]) -> Table {
    let q = points.first().map_or(0, Point::dim);
    let mut headers = vec!["index".to_string()];
    for j in 1..=q {
        headers.push(format!("re_z{j}"));
        headers.push(format!("im_z{j}"));
    }
    headers.extend(["step", "distance_to_base", "koranyi"].map(String::from));
    let rows = points
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let mut row = vec![n as f64];
            row.extend(p.coords.iter().flat_map(|c| [c.re, c.im]));
            row.push(steps.get(n).copied().unwrap_or(f64::NAN));
            row.push(distance_to_base.get(n).copied().unwrap_or(f64::NAN));
            row.push(koranyi.get(n).copied().unwrap_or(f64::NAN));
            row
        })
        .collect();
    Table { headers, rows }
}

fn dispatch(cfg: &ExperimentConfig, domain: &DomainSpec, f: &Option<HoloMap>) -> Result<Outcome> {
    let p = &cfg.run.params;
    let tol = &cfg.tolerances;
    let verb = cfg.run.verb;
    let center = domain.center.clone();
    let out = match verb {
        Verb::Kobayashi => {
            let x = point_or("run.params.x", &p.x, &center, domain)?;
            let y = point_or("run.params.y", &p.y, &center, domain)?;
            let d = domain.kobayashi(&x, &y)?;
            Outcome {
                claims: vec![claim("distance", d.value, d.gap, "closed form or sandwich enclosure; tolerance is the enclosure width")],
                result: to_value(&d),
                table: None,
            }
        }
        Verb::Squeeze => {
            let sq = SqueezeConfig {
                seed: cfg.run.seed,
                verification_samples: p.samples.unwrap_or(SqueezeConfig::default().verification_samples),
                ..SqueezeConfig::default()
            };
            match &p.zeta {
                Some(_) => {
                    let zeta = finite(&boundary(&p.zeta, domain)?)?;
                    let inward = point_or("run.params.inward", &p.inward, &zeta.scale(-1.0), domain)?;
                    let trend = squeeze_trend(domain, &zeta, &inward, p.n_points.unwrap_or(6), &sq)?;
                    let claims = trend
                        .points
                        .iter()
                        .map(|t| claim("squeeze_lower_bound", t.squeeze, 0.0, format!("certified at boundary distance {:e}", t.boundary_distance)))
                        .collect();
                    let rows = trend.points.iter().map(|t| vec![t.boundary_distance, t.squeeze]).collect();
                    let table = Table { headers: vec!["boundary_distance".into(), "squeeze".into()], rows };
                    Outcome { claims, result: to_value(&trend), table: Some(table) }
                }
                None => {
                    let x = point_or("run.params.x", &p.x, &center, domain)?;
                    let cert = squeeze_lower(domain, &x, &sq, None)?;
                    let evidence = format!(
                        "{} boundary and {} interior verification samples",
                        cert.witness.boundary_samples, cert.witness.interior_samples
                    );
                    Outcome {
                        claims: vec![claim("squeeze_lower_bound", cert.inner_radius, 0.0, evidence)],
                        result: json!({ "inner_radius": cert.inner_radius, "witness": cert.witness }),
                        table: None,
                    }
                }
            }
        }
        Verb::Classify => {
            let f = require_map(f, verb)?;
            let x = point_or("run.params.x", &p.x, &center, domain)?;
            let mut budget = ClassifyBudget { dilation_tol: tol.dilation_tol, step_floor: tol.step_floor, ..ClassifyBudget::default() };
            if let Some(m) = p.m_max {
                budget.m_max = m;
            }
            if let Some(n) = p.iterations {
                budget.iterations = n;
            }
            let r = classify(f, &x, &budget)?;
            let mut claims = vec![];
            if let Some(d) = &r.dilation {
                claims.push(claim("dilation", d.value, tol.dilation_tol, format!("Richardson liminf over {} ray levels", d.differences.len())));
            }
            if let Some(d) = &r.divergence {
                claims.push(claim("divergence_rate", d.rate, d.tail.tol, format!("min over m <= {}, tail window {}", d.ratios.len(), d.tail.window)));
            }
            if let Some(m) = r.rate_mismatch {
                claims.push(claim("rate_mismatch", m, tol.dilation_tol, "|log lambda + c(f)|"));
            }
            Outcome { claims, result: to_value(&r), table: None }
        }
        Verb::Dilation => {
            let f = require_map(f, verb)?;
            let zeta = boundary(&p.zeta, domain)?;
            let pole = point_or("run.params.pole", &p.pole, &center, domain)?;
            let d = dilation(f, &zeta, &pole, p.method.unwrap_or(DilationMethod::Liminf))?;
            let evidence = format!("{} ray levels, enclosure gap {:e}", d.differences.len(), d.gap);
            Outcome { claims: vec![claim("dilation", d.value, tol.dilation_tol, evidence)], result: to_value(&d), table: None }
        }
        Verb::DivergenceRate => {
            let f = require_map(f, verb)?;
            let x = point_or("run.params.x", &p.x, &center, domain)?;
            let d = divergence_rate(f, &x, p.m_max.unwrap_or(200), None)?;
            let evidence = format!("min over m <= {} (argmin {}), tail window {}", d.ratios.len(), d.argmin, d.tail.window);
            let rows = d.ratios.iter().enumerate().map(|(i, r)| vec![(i + 1) as f64, *r]).collect();
            Outcome {
                claims: vec![claim("divergence_rate", d.rate, d.tail.tol, evidence)],
                result: to_value(&d),
                table: Some(Table { headers: vec!["m".into(), "ratio".into()], rows }),
            }
        }
        Verb::Julia => {
            let f = require_map(f, verb)?;
            let zeta = boundary(&p.zeta, domain)?;
            let pole = point_or("run.params.pole", &p.pole, &center, domain)?;
            let radii = p.radii.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
            let r = julia_check(f, &zeta, &pole, p.lambda, &radii, p.samples.unwrap_or(200), cfg.run.seed)?;
            let evidence = format!("{} horoball samples over {} radii", r.samples, radii.len());
            Outcome {
                claims: vec![
                    claim("violations", r.violations as f64, 0.0, evidence.clone()),
                    claim("worst_ratio", r.worst_ratio, crate::dynamics::JULIA_SLACK, evidence),
                ],
                result: to_value(&r),
                table: None,
            }
        }
        Verb::ModelForward => {
            let f = require_map(f, verb)?;
            let x = point_or("run.params.x", &p.x, &center, domain)?;
            let mut fc = ForwardConfig { seed: cfg.run.seed, ..ForwardConfig::default() };
            if let Some(m) = p.m_max {
                fc.m_max = m;
            }
            if let Some(n) = p.samples {
                fc.samples = n;
            }
            let e = extract_forward_model(f, &x, &fc)?;
            let evidence = format!("stage {}, Cauchy window {}", e.stage, e.cauchy.window);
            Outcome {
                claims: vec![
                    claim("dimension", e.k as f64, 0.0, format!("singular values {:?}", e.singular_values)),
                    claim("dilation", e.dilation, tol.dilation_tol, evidence.clone()),
                    claim("residual", e.residual, e.cauchy.tol, evidence),
                ],
                result: to_value(&e),
                table: None,
            }
        }
        Verb::BackwardOrbit | Verb::PreModel => {
            let f = require_map(f, verb)?;
            let zeta = boundary(&p.zeta, domain)?;
            let mut bc = BackwardConfig::new(zeta.clone());
            bc.lambda = p.lambda;
            bc.step_tol = tol.step_tol;
            bc.cauchy_tol = tol.cauchy_tol;
            if let Some(s) = &p.seed_point {
                bc.seed_point = Some(point_or("run.params.seed_point", &Some(s.clone()), &center, domain)?);
            }
            if let Some(n) = p.trail_length {
                bc.trail_length = n;
            }
            bc.chart = ball_chart(domain, &zeta, p.push_radius)?;
            let run = backward_run(f, &bc)?;
            let o = &run.orbit;
            let table = orbit_table(&o.points, &o.steps, &o.distance_to_base, &o.koranyi);
            let last = o.steps.last().copied().unwrap_or(f64::NAN);
            let step_claim = claim(
                "final_step",
                last,
                tol.step_tol,
                format!("|s_1 - log lambda| at the end of {} orbit points; lambda = {} ({})", o.len(), run.lambda, run.lambda_source),
            );
            if verb == Verb::BackwardOrbit {
                Outcome { claims: vec![step_claim], result: to_value(&run), table: Some(table) }
            } else {
                let mut pc = PreModelConfig::new(zeta);
                pc.chart = bc.chart.clone();
                pc.seed = cfg.run.seed;
                pc.rate_tol = tol.rate_tol;
                let e = extract_pre_model(f, o, &pc)?;
                let evidence = format!("{} samples, Cauchy window {}", pc.samples, pc.cauchy_window);
                Outcome {
                    claims: vec![
                        step_claim,
                        claim("dimension", e.k as f64, 0.0, format!("singular values {:?}", e.singular_values)),
                        claim("residual", e.residual, pc.cauchy_tol, evidence),
                        claim("rate_agreement", e.rate_agreement, tol.rate_tol, format!("c(tau) = {}", e.c_tau)),
                    ],
                    result: json!({ "orbit": run, "pre_model": e }),
                    table: Some(table),
                }
            }
        }
        Verb::Gromov => {
            if !matches!(cfg.domain, DomainDecl::Ball { .. }) {
                return Err(HoloError::schema("domain.kind", "the gromov suite runs on the ball"));
            }
            let r = gromov_suite(
                domain.dim,
                p.triangles.unwrap_or(100),
                p.samples_per_side.unwrap_or(SLIM_SAMPLES),
                p.samples.unwrap_or(10_000),
                p.amplitude.unwrap_or(2.0),
                cfg.run.seed,
            )?;
            let density = format!("{} triangles at {} samples per side", r.triangles, r.samples_per_side);
            Outcome {
                claims: vec![
                    claim("delta_emp", r.delta_emp, 0.0, density.clone()),
                    claim("filippo_violations", r.filippo_violations as f64, 0.0, density),
                    claim("inclusion_violations", r.inclusion.violations() as f64, 0.0, format!("{} points", r.inclusion.samples)),
                ],
                result: to_value(&r),
                table: None,
            }
        }
        Verb::Localize => {
            let zeta = finite(&boundary(&p.zeta, domain)?)?;
            let chart = fefferman_chart(domain, &zeta)?;
            let local = match p.push_radius {
                Some(r) => localized_chart(&chart, r)?,
                None => LocalizedChart::unpushed(&chart),
            };
            let n = p.samples.unwrap_or(20_000);
            let inclusions = match (p.horo_radius, p.rho) {
                (Some(r), Some(rho)) => verify_inclusions(&local, r, rho, n)?,
                _ => {
                    let first = verify_inclusions(&local, 0.1, 0.1, n)?;
                    verify_inclusions(&local, first.certified_radius, first.certified_rho, n)?
                }
            };
            let evidence = format!("{} samples per region", inclusions.samples);
            Outcome {
                claims: vec![
                    claim("p4_max", chart.p4.max_abs(), 0.0, "quartic remainder after degree-3 normalization"),
                    claim("c_lower", chart.c_lower, 0.0, format!("{} directions", chart.stats.direction_samples)),
                    claim("d_upper", chart.d_upper, 0.0, format!("{} directions", chart.stats.direction_samples)),
                    claim("horo_violations", inclusions.horo_violations as f64, 0.0, evidence.clone()),
                    claim("local_violations", inclusions.local_violations as f64, 0.0, evidence),
                ],
                result: json!({ "chart": chart, "push_radius": local.push, "inclusions": inclusions }),
                table: None,
            }
        }
        Verb::CompareDistance => {
            let zeta = finite(&boundary(&p.zeta, domain)?)?;
            let chart = fefferman_chart(domain, &zeta)?;
            let local = localized_chart(&chart, p.push_radius.unwrap_or(1.0))?;
            let eps = p.epsilon.unwrap_or(0.05);
            let dc = distance_comparison(domain, &local, eps)?;
            let evidence = format!("{} seeded pairs, max enclosure gap {:e}", dc.pairs, dc.max_gap);
            Outcome {
                claims: vec![
                    claim("radius", dc.radius, 0.0, evidence.clone()),
                    claim("max_deviation", dc.max_deviation, eps, evidence),
                ],
                result: to_value(&dc),
                table: None,
            }
        }
    };
    Ok(out)
}

/// Runs the experiment. Failures come back as errors; see [`execute`] for
/// a report that records them.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let started = Instant::now();
    let domain = config.domain.build()?;
    let f = config.map.as_ref().map(|m| m.build(&domain)).transpose()?;
    let out = dispatch(config, &domain, &f)?;
    Ok(Report {
        schema: SCHEMA_TAG,
        normalization: NORMALIZATION,
        status: "ok",
        config: config.clone(),
        domain: domain.name(),
        map: f.as_ref().map(|f| f.name.clone()),
        claims: out.claims,
        result: out.result,
        table: out.table,
        error: None,
        timestamp: timestamp(started),
    })
}

fn timestamp(started: Instant) -> Timestamp {
    Timestamp {
        unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    }
}

fn error_kind(e: &HoloError) -> String {
    format!("{e:?}").split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
}

/// Runs the experiment and folds a failure into the report.
pub fn execute(config: &ExperimentConfig) -> Report {
    let started = Instant::now();
    run(config).unwrap_or_else(|e| Report {
        schema: SCHEMA_TAG,
        normalization: NORMALIZATION,
        status: "error",
        config: config.clone(),
        domain: config.domain.build().map(|d| d.name()).unwrap_or_default(),
        map: None,
        claims: vec![],
        result: Value::Null,
        table: None,
        error: Some(ErrorInfo { kind: error_kind(&e), message: e.to_string(), exit_code: e.exit_code() }),
        timestamp: timestamp(started),
    })
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let io = |e: csv::Error| HoloError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.headers).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| HoloError::Io(e.to_string()))
}

/// Writes the report (and CSV table, when configured) to the paths named in
/// the config. Returns the JSON text.
pub fn emit(report: &Report) -> Result<String> {
    let text = report.to_json();
    if let Some(path) = &report.config.run.output {
        std::fs::write(path, &text).map_err(|e| HoloError::Io(format!("{}: {e}", path.display())))?;
    }
    if let (Some(path), Some(table)) = (&report.config.run.csv, &report.table) {
        write_csv(table, path)?;
    }
    Ok(text)
}
