//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Runs without the libtest harness so every line is printed.

use holokit::ball::{
    cayley, gromov_suite, horo_value_intrinsic, kobayashi_ball, kobayashi_siegel, koranyi_value_intrinsic,
    BallAutomorphism, SLIM_SAMPLES,
};
use holokit::convex::{squeeze_lower, squeeze_trend, DomainSpec, Polynomial, SqueezeConfig};
use holokit::dynamics::{dilation, divergence_rate, julia_check, BoundaryPoint, DilationMethod, HoloMap, JULIA_SLACK};
use holokit::localization::{distance_comparison, fefferman_chart, localized_chart, verify_inclusions};
use holokit::models_backward::{
    backward_orbit, backward_run, extract_pre_model, uniqueness_check, BackwardConfig, PreModelConfig, UniquenessConfig,
};
use holokit::models_forward::{extract_forward_model, ForwardConfig};
use holokit::numerics::fibonacci_directions;
use holokit::{HoloError, Point, SeededSampler, C64};
use std::time::{Duration, Instant};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: HoloError) -> String {
    e.to_string()
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, format!("runtime {t:.2?} over {limit:?}"))
}

fn pt(z: &[(f64, f64)]) -> Point {
    Point::from_pairs(z)
}

fn real_boundary(x: &[f64]) -> BoundaryPoint {
    BoundaryPoint::Finite(Point::from_real(x))
}

fn disc(a: f64) -> HoloMap {
    HoloMap::ball_translation(1, a).unwrap()
}

fn t_inv(a: f64, z: f64) -> f64 {
    (z - a) / (1.0 - a * z)
}

/// `(4 z1, z2 / 2)` on `H^2` transported to `B^2`; repelling point `-e1`.
fn cayley_product() -> HoloMap {
    let g = HoloMap::siegel_affine(4.0, 0.0, &[C64::new(0.5, 0.0)]).unwrap();
    HoloMap::cayley_conjugate(&g).unwrap()
}

fn disc_backward() -> BackwardConfig {
    let mut cfg = BackwardConfig::new(real_boundary(&[-1.0]));
    cfg.seed_point = Some(Point::from_real(&[-0.8]));
    cfg
}

fn metric_kernel() -> Check {
    let start = Instant::now();
    let mut s = SeededSampler::new(101, 3);
    let (mut sym, mut tri, mut inv, mut cay) = (0.0f64, f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let (x, y, z) = (s.ball(0.9), s.ball(0.9), s.ball(0.9));
        let k = |a: &Point, b: &Point| kobayashi_ball(a, b).unwrap();
        let kxy = k(&x, &y);
        sym = sym.max((kxy - k(&y, &x)).abs());
        tri = tri.min(kxy + k(&y, &z) - k(&x, &z));
        let phi = BallAutomorphism::random(3, 0.6, &mut s);
        inv = inv.max((k(&phi.apply(&x), &phi.apply(&y)) - kxy).abs());
        let ks = kobayashi_siegel(&cayley(&x).map_err(err)?, &cayley(&y).map_err(err)?).map_err(err)?;
        cay = cay.max((ks - kxy).abs());
    }
    ensure(sym <= 1e-12, format!("symmetry {sym:e}"))?;
    ensure(tri >= -1e-9, format!("triangle slack {tri:e}"))?;
    ensure(inv <= 1e-9, format!("automorphism invariance {inv:e}"))?;
    ensure(cay <= 1e-9, format!("Cayley isometry {cay:e}"))?;
    within(Duration::from_secs(5), start)?;
    Ok(format!("sym {sym:.1e}, triangle slack {tri:.1e}, invariance {inv:.1e}, Cayley {cay:.1e}, {:.2?}", start.elapsed()))
}

fn convention() -> Check {
    let mut s = SeededSampler::new(102, 2);
    let o = Point::zeros(2);
    let (mut dh, mut dk) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (z, zeta) = (s.ball(0.9), s.sphere());
        let num = (C64::new(1.0, 0.0) - z.inner(&zeta)).norm();
        let h = num * num / (1.0 - z.norm_sqr());
        let kor = num / (1.0 - z.norm());
        dh = dh.max((horo_value_intrinsic(&o, &zeta, &z).map_err(err)? - h).abs());
        dk = dk.max((koranyi_value_intrinsic(&o, &zeta, &z).map_err(err)? - kor).abs());
    }
    ensure(dh <= 1e-9 && dk <= 1e-9, format!("horosphere {dh:e}, Koranyi {dk:e}"))?;
    Ok(format!("max |intrinsic - Euclidean|: horosphere {dh:.1e}, Koranyi {dk:.1e}"))
}

fn julia() -> Check {
    let z = Polynomial::var(1, 0, false);
    let b1 = DomainSpec::ball(1);
    let quad = HoloMap::polynomial(b1.clone(), b1, vec![z.add(&z.pow(2)).scale(C64::new(0.5, 0.0))]).unwrap();
    let cases: Vec<(HoloMap, BoundaryPoint, Point)> = vec![
        (disc(0.5), real_boundary(&[1.0]), Point::zeros(1)),
        (disc(0.5), real_boundary(&[-1.0]), Point::zeros(1)),
        (HoloMap::ball_translation(3, 0.3).unwrap(), BoundaryPoint::Finite(Point::basis(3, 0)), Point::zeros(3)),
        (quad, real_boundary(&[1.0]), Point::zeros(1)),
        (HoloMap::siegel_hyperbolic(0.5, &[0.4]).unwrap(), BoundaryPoint::Infinity, pt(&[(0.0, 1.0), (0.0, 0.0)])),
    ];
    let (mut total, mut violations, mut worst) = (0, 0, 0.0f64);
    for (i, (f, zeta, pole)) in cases.iter().enumerate() {
        let rep = julia_check(f, zeta, pole, None, &[0.5, 1.0, 2.0], 334, 200 + i as u64).map_err(err)?;
        ensure(rep.samples >= 1000, format!("map {i}: only {} samples", rep.samples))?;
        total += rep.samples;
        violations += rep.violations;
        worst = worst.max(rep.worst_ratio);
    }
    ensure(violations == 0, format!("{violations} violations over {total} samples"))?;
    Ok(format!("0 violations over {total} samples x 5 maps, worst h(f z)/(lambda h(z)) = {worst:.9} (slack {JULIA_SLACK:e})"))
}

fn dilation_rate() -> Check {
    let cases = [
        ("disc a=0.5", disc(0.5), real_boundary(&[1.0]), Point::zeros(1), Point::zeros(1)),
        (
            "Siegel lambda=1/4",
            HoloMap::siegel_hyperbolic(0.25, &[0.0]).unwrap(),
            BoundaryPoint::Infinity,
            pt(&[(0.0, 1.0), (0.0, 0.0)]),
            pt(&[(0.1, 1.0), (0.2, 0.0)]),
        ),
    ];
    let mut out = vec![];
    for (name, f, zeta, pole, x) in cases {
        let start = Instant::now();
        let lambda = dilation(&f, &zeta, &pole, DilationMethod::Liminf).map_err(err)?.value;
        let c = divergence_rate(&f, &x, 200, None).map_err(err)?.rate;
        let gap = (lambda.ln() + c).abs();
        ensure(gap <= 1e-3, format!("{name}: |log lambda + c| = {gap:e}"))?;
        within(Duration::from_secs(2), start)?;
        out.push(format!("{name}: {gap:.1e} in {:.2?}", start.elapsed()));
    }
    Ok(out.join("; "))
}

fn forward_model() -> Check {
    let base = pt(&[(0.0, 2.0), (0.0, 0.0)]);
    let cfg = ForwardConfig { samples: 100, ..ForwardConfig::default() };
    let start = Instant::now();
    let collapse = HoloMap::siegel_affine(4.0, 0.0, &[C64::new(0.0, 0.0)]).unwrap();
    let e = extract_forward_model(&collapse, &base, &cfg).map_err(err)?;
    ensure(e.k == 1, format!("collapse: k = {}", e.k))?;
    ensure((e.dilation - 0.25).abs() <= 1e-3, format!("collapse: dilation {}", e.dilation))?;
    ensure(e.residual <= 1e-6, format!("collapse: residual {:e}", e.residual))?;
    ensure(e.intertwiner.len() >= 100, format!("collapse: {} samples", e.intertwiner.len()))?;
    within(Duration::from_secs(30), start)?;
    let t1 = start.elapsed();
    let start = Instant::now();
    let para = HoloMap::siegel_affine(1.0, 1.0, &[C64::new(0.0, 0.0)]).unwrap();
    let p = extract_forward_model(&para, &pt(&[(0.0, 1.0), (0.0, 0.0)]), &cfg).map_err(err)?;
    ensure(p.k == 1, format!("parabolic: k = {}", p.k))?;
    ensure(p.tag.starts_with("lomo2"), format!("parabolic: tag {}", p.tag))?;
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "(4z1,0): k=1, dilation {:.6}, residual {:.1e} over {} samples ({t1:.1?}); (z1+1,0): k=1, {} ({:.1?})",
        e.dilation,
        e.residual,
        e.intertwiner.len(),
        p.tag,
        start.elapsed()
    ))
}

fn backward() -> Check {
    let start = Instant::now();
    let run = backward_run(&disc(0.5), &disc_backward()).map_err(err)?;
    let pts = &run.orbit.points;
    let mut closed = pts[0][0].re;
    let mut dev = (pts[0][0] - C64::new(-0.8, 0.0)).norm();
    for x in &pts[1..] {
        closed = t_inv(0.5, closed);
        dev = dev.max((x[0] - C64::new(closed, 0.0)).norm());
    }
    ensure(dev <= 1e-6, format!("disc orbit deviates by {dev:e}"))?;
    let s = *run.orbit.steps.last().ok_or("empty orbit")?;
    ensure((s - 3f64.ln()).abs() <= 1e-3, format!("disc step {s}"))?;
    let mut cfg = BackwardConfig::new(real_boundary(&[-1.0, 0.0]));
    cfg.step_tol = 1e-2;
    let prod = backward_run(&cayley_product(), &cfg).map_err(err)?;
    let sp = *prod.orbit.steps.last().ok_or("empty orbit")?;
    ensure((sp - 4f64.ln()).abs() <= 1e-2, format!("B^2 product step {sp}"))?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "disc: {} points within {dev:.1e} of the closed form, step {s:.6}; B^2 product step {sp:.4}; {:.1?}",
        pts.len(),
        start.elapsed()
    ))
}

fn pre_model() -> Check {
    let mut out = vec![];
    let disc_orbit = backward_orbit(&disc(0.5), &disc_backward()).map_err(err)?;
    let mut cfg = BackwardConfig::new(real_boundary(&[-1.0, 0.0]));
    cfg.lambda = Some(4.0);
    cfg.trail_length = 12;
    let prod_orbit = backward_orbit(&cayley_product(), &cfg).map_err(err)?;
    let cases = [
        ("disc", disc(0.5), disc_orbit, real_boundary(&[-1.0])),
        ("B^2 product", cayley_product(), prod_orbit, real_boundary(&[-1.0, 0.0])),
    ];
    for (name, f, orbit, zeta) in cases {
        let e = extract_pre_model(&f, &orbit, &PreModelConfig::new(zeta)).map_err(err)?;
        ensure(e.residual <= 1e-6, format!("{name}: residual {:e}", e.residual))?;
        ensure(e.rate_agreement <= 1e-3, format!("{name}: |c(tau) - inf s_m/m| = {:e}", e.rate_agreement))?;
        let kl = &e.k_limit;
        let sup = kl.koranyi.iter().cloned().fold(0.0, f64::max);
        ensure(kl.approaches && kl.bound.is_finite() && sup <= kl.bound, format!("{name}: Koranyi values {:?}", kl.koranyi))?;
        out.push(format!("{name}: residual {:.1e}, rate gap {:.1e}, Koranyi sup {sup:.3}", e.residual, e.rate_agreement));
    }
    Ok(out.join("; "))
}

fn uniqueness() -> Check {
    let f = disc(0.5);
    let mut cfg = BackwardConfig::new(real_boundary(&[-1.0]));
    cfg.lambda = Some(3.0);
    let a = backward_run(&f, &cfg).map_err(err)?.orbit;
    let b = backward_orbit(&f, &disc_backward()).map_err(err)?;
    let rep = uniqueness_check(&f.domain, &a, &b, &UniquenessConfig::default()).map_err(err)?;
    let tail = &rep.distances[rep.distances.len() / 2..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(l, h), d| (l.min(*d), h.max(*d)));
    ensure(hi <= lo + 1e-2, format!("tail spread {:e}", hi - lo))?;
    Ok(format!("{} common indices, tail max - min = {:.1e}", rep.common_length, hi - lo))
}

fn gromov() -> Check {
    let start = Instant::now();
    let r = gromov_suite(2, 1000, SLIM_SAMPLES, 10_000, 2.0, 109).map_err(err)?;
    ensure(r.filippo_violations == 0, format!("{} nearest-point violations", r.filippo_violations))?;
    ensure(r.inclusion.violations() == 0, format!("{:?}", r.inclusion))?;
    ensure(r.filippo_checks + 5 >= r.triangles, format!("only {} triangles checked", r.filippo_checks))?;
    Ok(format!(
        "delta_emp {:.4} ({} per side), {} triangles, min slack {:.3}, 0/{} inclusion violations, {:.1?}",
        r.delta_emp,
        r.samples_per_side,
        r.filippo_checks,
        r.filippo_min_slack,
        r.inclusion.samples,
        start.elapsed()
    ))
}

fn localization() -> Check {
    let start = Instant::now();
    let ball = fefferman_chart(&DomainSpec::ball(2), &Point::basis(2, 0)).map_err(err)?;
    let p4 = ball.p4.max_abs();
    ensure(p4 <= 1e-10, format!("ball P4 {p4:e}"))?;
    let ell = DomainSpec::ellipsoid(&[1.0, 2.0]).unwrap();
    let zeta = Point::new(vec![C64::new(0.6, 0.0), C64::new(0.8 / 2f64.sqrt(), 0.0)]);
    let chart = fefferman_chart(&ell, &zeta).map_err(err)?;
    let sw = chart.sandwich_check(10_000, 110);
    ensure(sw.samples == 10_000 && sw.violations == 0, format!("sandwich {sw:?}"))?;
    let local = localized_chart(&chart, 1.0).map_err(err)?;
    let first = verify_inclusions(&local, 0.1, 0.1, 20_000).map_err(err)?;
    let rep = verify_inclusions(&local, first.certified_radius, first.certified_rho, 100_000).map_err(err)?;
    ensure(rep.horo_violations == 0 && rep.local_violations == 0, format!("inclusions {rep:?}"))?;
    let dc = distance_comparison(&ell, &local, 0.05).map_err(err)?;
    ensure(dc.radius > 0.0 && dc.violations == 0, format!("distance comparison {dc:?}"))?;
    within(Duration::from_secs(120), start)?;
    Ok(format!(
        "ball P4 {p4:.1e}; ellipsoid sandwich 0/{}, inclusions 0/{} at R={:.3e}, rho={:.3e}; R_eps {:.3e} (eps 0.05); {:.1?}",
        sw.samples,
        rep.samples,
        rep.radius,
        rep.rho,
        dc.radius,
        start.elapsed()
    ))
}

fn squeezing() -> Check {
    let cfg = SqueezeConfig { iterations: 20, ..SqueezeConfig::default() };
    let ball = DomainSpec::ball(2);
    let mut worst = 0.0f64;
    for z in [Point::zeros(2), pt(&[(0.5, 0.0), (0.3, 0.0)]), pt(&[(0.0, 0.9), (0.1, 0.0)])] {
        worst = worst.max((squeeze_lower(&ball, &z, &cfg, None).map_err(err)?.inner_radius - 1.0).abs());
    }
    ensure(worst <= 1e-6, format!("ball estimate off by {worst:e}"))?;
    let cfg = SqueezeConfig { iterations: 50, ..SqueezeConfig::default() };
    let convex = [
        (DomainSpec::egg(), Point::zeros(2)),
        (DomainSpec::egg(), pt(&[(0.3, 0.0), (0.0, 0.4)])),
        (DomainSpec::ellipsoid(&[1.0, 3.0]).unwrap(), pt(&[(0.3, 0.0), (0.2, 0.0)])),
    ];
    let mut margin = f64::INFINITY;
    for (dom, z) in &convex {
        // Both domains are balanced, so the diameter is twice the largest
        // radius; sampled directions give a lower bound for it.
        let radius = fibonacci_directions(4000, 2).iter().map(|u| dom.ray_exit(&Point::zeros(2), u)).fold(0.0, f64::max);
        let baseline = dom.boundary_distance(z).map_err(err)? / (2.0 * radius);
        let est = squeeze_lower(dom, z, &cfg, None).map_err(err)?.inner_radius;
        ensure(est >= baseline, format!("{} at {z:?}: {est} < {baseline}", dom.name()))?;
        margin = margin.min(est - baseline);
    }
    let cfg = SqueezeConfig { iterations: 100, verification_samples: 4000, ..SqueezeConfig::default() };
    let trend = squeeze_trend(&DomainSpec::egg(), &pt(&[(0.0, 0.0), (1.0, 0.0)]), &pt(&[(0.0, 0.0), (-1.0, 0.0)]), 6, &cfg)
        .map_err(err)?;
    let drop = trend.points.windows(2).map(|w| w[0].squeeze - w[1].squeeze).fold(f64::NEG_INFINITY, f64::max);
    ensure(drop <= 1e-3, format!("egg trend drops by {drop:e}"))?;
    let values: Vec<String> = trend.points.iter().map(|p| format!("{:.4}", p.squeeze)).collect();
    Ok(format!("ball |S-1| {worst:.1e}; min margin over dist/diam {margin:.3}; egg trend [{}]", values.join(", ")))
}

fn negative_control() -> Check {
    let start = Instant::now();
    let f = HoloMap::egg_automorphism(0.5).unwrap();
    let cfg = ForwardConfig { check_type: false, ..ForwardConfig::default() };
    match extract_forward_model(&f, &Point::zeros(2), &cfg) {
        Err(HoloError::AmbiguousDimension { candidates }) => Ok(format!("ambiguous dimension {candidates:?}")),
        Ok(e) if e.experimental && e.tolerance_widening > 0.0 => Ok(format!(
            "experimental, tolerances widened by {:.3}, k={} residual {:.3} ({:.1?})",
            e.tolerance_widening,
            e.k,
            e.residual,
            start.elapsed()
        )),
        Ok(e) => Err(format!("clean model reported: k={} tag={} residual {:e}", e.k, e.tag, e.residual)),
        Err(e) => Err(format!("unexpected failure: {e}")),
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Check); 12] = [
        ("metric kernel", metric_kernel),
        ("convention consistency", convention),
        ("Julia's lemma", julia),
        ("dilation and divergence rate", dilation_rate),
        ("forward model", forward_model),
        ("backward orbit", backward),
        ("pre-model", pre_model),
        ("uniqueness", uniqueness),
        ("Gromov suite", gromov),
        ("localization", localization),
        ("squeezing", squeezing),
        ("egg negative control", negative_control),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
