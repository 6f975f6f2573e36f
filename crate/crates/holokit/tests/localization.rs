use holokit::ball::kobayashi_ball;
use holokit::convex::DomainSpec;
use holokit::localization::*;
use holokit::series::{TruncatedSeries, Variables};
use holokit::{HoloError, Point, C64};
use proptest::prelude::*;

const I: C64 = C64::new(0.0, 1.0);

fn e1(q: usize) -> Point {
    Point::basis(q, 0)
}

fn ellipsoid() -> DomainSpec {
    DomainSpec::ellipsoid(&[1.0, 2.0]).unwrap()
}

/// Boundary point of `|z1|^2 + 2|z2|^2 = 1` off the coordinate axes.
fn off_axis() -> Point {
    Point::new(vec![C64::new(0.6, 0.0), C64::new(0.8 / 2f64.sqrt(), 0.0)])
}

/// Locates the true boundary along `Im w1` by bisection in the chart and
/// extrapolates `(|w'|^2 t^2 - Im w1) / t^4` to `t = 0` along a ray
/// (two Richardson levels).
fn p4_oracle(chart: &NormalFormChart, u: f64, wp: &[C64]) -> f64 {
    let boundary_v = |t: f64| -> f64 {
        let rho_at = |v: f64| {
            let mut w = vec![C64::new(t * u, v)];
            w.extend(wp.iter().map(|c| c * t));
            chart.domain.rho(&chart.from_chart(&Point::new(w)).unwrap())
        };
        let (mut lo, mut hi) = (-t, t);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rho_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let t2: f64 = wp.iter().map(|c| c.norm_sqr()).sum();
    let g = |t: f64| (t2 * t * t - boundary_v(t)) / t.powi(4);
    let r1 = |t: f64| 2.0 * g(t / 2.0) - g(t);
    let t = 0.02;
    (4.0 * r1(t / 2.0) - r1(t)) / 3.0
}

#[test]
fn ball_chart_has_vanishing_quartic() {
    for q in [2, 3] {
        let c = fefferman_chart(&DomainSpec::ball(q), &e1(q)).unwrap();
        assert!(c.exact);
        assert!(c.p4.max_abs() <= 1e-10, "q = {q}: {:?}", c.p4);
        assert!(c.shape_error <= 1e-12);
        assert_eq!((c.c_lower, c.d_upper), (0.0, 0.0));
        assert!((c.condition - 1.0).abs() < 1e-12);
    }
    // Any boundary point of the ball.
    let zeta = Point::new(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
    let c = fefferman_chart(&DomainSpec::ball(2), &zeta).unwrap();
    assert!(c.p4.max_abs() <= 1e-10);
    assert!(c.to_chart(&zeta).unwrap().norm() < 1e-12);
}

#[test]
fn ellipsoid_chart_shape_and_quartic_oracle() {
    let dom = ellipsoid();
    for zeta in [e1(2), off_axis()] {
        let c = fefferman_chart(&dom, &zeta).unwrap();
        assert!(c.to_chart(&c.base_point).unwrap().norm() < 1e-14);
        assert!(c.shape_error <= SHAPE_TOL, "shape error {}", c.shape_error);
        assert!(c.condition <= 1e3);
        assert!(c.graph.is_real(1e-12));
        let psi = c.defining_series().unwrap();
        assert!(im_dependence(&psi, 2) <= 1e-9);
        for (u, wp) in [(1.0, C64::new(0.0, 0.0)), (0.0, C64::new(1.0, 0.0)), (0.6, C64::new(0.48, 0.64))] {
            let oracle = p4_oracle(&c, u, &[wp]);
            let p4 = c.p4_at(u, &[wp]);
            assert!((oracle - p4).abs() < 1e-3, "P4({u}, {wp}) = {p4}, oracle {oracle}");
        }
    }
    // The ellipsoid is a linear image of the ball, so the quartic vanishes on
    // the coordinate axis and is non-zero off it.
    let axis = fefferman_chart(&dom, &e1(2)).unwrap();
    assert!(axis.p4.max_abs() < 1e-12);
    let off = fefferman_chart(&dom, &off_axis()).unwrap();
    assert!(off.p4.max_abs() > 1e-2);
}

#[test]
fn chart_inverse_round_trip() {
    let c = fefferman_chart(&ellipsoid(), &off_axis()).unwrap();
    let w = Point::new(vec![C64::new(0.01, 0.02), C64::new(-0.03, 0.01)]);
    let z = c.from_chart(&w).unwrap();
    assert!(c.to_chart(&z).unwrap().dist(&w) < 1e-14);
    let far = Point::new(vec![C64::new(50.0, 0.0), C64::new(0.0, 0.0)]);
    assert!(c.from_chart(&far).is_err());
}

#[test]
fn egg_at_flat_point_is_rejected() {
    let err = fefferman_chart(&DomainSpec::egg(), &e1(2)).unwrap_err();
    assert!(matches!(err, HoloError::Precondition(_)), "{err:?}");
    // Away from { z2 = 0 } the egg is strongly convex.
    let s = 0.5f64;
    let zeta = Point::new(vec![C64::new((1.0 - s.powi(4)).sqrt(), 0.0), C64::new(s, 0.0)]);
    assert!(fefferman_chart(&DomainSpec::egg(), &zeta).is_ok());
}

#[test]
fn sandwich_holds_on_fresh_directions() {
    let c = fefferman_chart(&ellipsoid(), &off_axis()).unwrap();
    let chk = c.sandwich_check(10_000, 99);
    assert_eq!(chk.violations, 0);
    assert!(chk.min_ratio >= c.c_lower && chk.max_ratio <= 0.5 * c.d_upper);
}

#[test]
fn push_formula() {
    let zero = Point::zeros(2);
    assert_eq!(push(1.0, &zero).unwrap(), zero);
    let w = Point::new(vec![I, C64::new(0.0, 0.0)]);
    let t = push(1.0, &w).unwrap();
    assert!(t.dist(&Point::new(vec![I * 0.5, C64::new(0.0, 0.0)])) < 1e-15);
    let x = Point::new(vec![C64::new(0.3, 0.7), C64::new(-0.2, 0.1)]);
    assert!(push_inverse(2.5, &push(2.5, &x).unwrap()).unwrap().dist(&x) < 1e-14);
}

#[test]
fn cayley_tilde_sends_ball_to_siegel() {
    let x = Point::new(vec![C64::new(0.3, -0.2), C64::new(0.1, 0.5)]);
    let w = cayley_tilde(&x).unwrap();
    assert!(w[0].im > w[1].norm_sqr());
    assert!(cayley_tilde_inverse(&w).unwrap().dist(&x) < 1e-14);
    assert!(cayley_tilde(&e1(2)).unwrap().norm() < 1e-15);
}

#[test]
fn ball_pushed_series_is_horosphere_siegel_form() {
    let c = fefferman_chart(&DomainSpec::ball(2), &e1(2)).unwrap();
    for r in [0.5, 1.0, 3.0] {
        let l = localized_chart(&c, r).unwrap();
        let s = l.series.clone().unwrap();
        let v = Variables::complex(2, "eta");
        let t = |i| TruncatedSeries::var(&v, i);
        let expected = &(&(&t(0) - &t(2)).scale(0.5 * I) + &(&t(1) * &t(3))) + &(&t(0) * &t(2)).scale_re(1.0 / r);
        assert!(s.distance(&expected) < 1e-14, "R = {r}");
        assert!(l.series_error < 1e-14);
    }
}

#[test]
fn pushed_series_matches_on_ellipsoid() {
    let c = fefferman_chart(&ellipsoid(), &off_axis()).unwrap();
    let l = localized_chart(&c, 0.5 / c.d_upper).unwrap();
    assert!(l.series_error <= SHAPE_TOL, "{}", l.series_error);
}

#[test]
fn invalid_push_radius() {
    let c = fefferman_chart(&ellipsoid(), &off_axis()).unwrap();
    assert!(c.d_upper > 0.0);
    for r in [0.0, -1.0, 1.0 / c.d_upper, 2.0 / c.d_upper, f64::NAN] {
        assert!(matches!(localized_chart(&c, r), Err(HoloError::InvalidRadius { .. })), "R = {r}");
    }
}

#[test]
fn ball_identity_chart_has_no_inclusion_violations() {
    let c = fefferman_chart(&DomainSpec::ball(2), &e1(2)).unwrap();
    let l = LocalizedChart::unpushed(&c);
    assert!(l.is_exact());
    for r in [0.1, 2.0, 50.0] {
        let rep = verify_inclusions(&l, r, 0.5, 2000).unwrap();
        assert_eq!((rep.horo_violations, rep.local_violations), (0, 0));
        assert_eq!(rep.certified_radius, RADIUS_CAP);
        assert_eq!(rep.certified_rho, RHO_CAP);
    }
}

#[test]
fn ellipsoid_inclusions_certify_and_doubling_fails() {
    let c = fefferman_chart(&ellipsoid(), &off_axis()).unwrap();
    let l = localized_chart(&c, 1.0).unwrap();
    let first = verify_inclusions(&l, 0.1, 0.1, 20_000).unwrap();
    let (r, rho) = (first.certified_radius, first.certified_rho);
    assert!(r > 0.0 && rho > 0.0);
    let rep = verify_inclusions(&l, r, rho, 20_000).unwrap();
    assert_eq!((rep.horo_violations, rep.local_violations), (0, 0));
    let doubled = verify_inclusions(&l, 2.0 * r, rho, 20_000).unwrap();
    assert!(doubled.horo_violations > 0);
    assert!(!doubled.horo_witnesses.is_empty());
    for x in &doubled.horo_witnesses {
        assert_ne!(l.contains(x), Some(true));
    }
}

#[test]
fn ball_distance_comparison_is_exact() {
    let c = fefferman_chart(&DomainSpec::ball(2), &e1(2)).unwrap();
    let dc = distance_comparison(&DomainSpec::ball(2), &LocalizedChart::unpushed(&c), 0.05).unwrap();
    assert!(dc.unbounded);
    assert_eq!(dc.violations, 0);
    assert!(dc.max_deviation < 1e-6, "{}", dc.max_deviation);
}

#[test]
fn ellipsoid_distance_comparison_finds_radius() {
    let dom = ellipsoid();
    let c = fefferman_chart(&dom, &off_axis()).unwrap();
    let l = localized_chart(&c, 1.0).unwrap();
    let dc = distance_comparison(&dom, &l, 0.05).unwrap();
    assert!(dc.radius > 0.0 && !dc.unbounded);
    assert_eq!(dc.pairs, 1000);
    assert_eq!(dc.violations, 0);
    assert!(dc.max_deviation <= 0.05);
    // Spot check one pair at the certified radius directly.
    let x = Point::new(vec![C64::new(1.0 / (1.0 + dc.radius), 0.0), C64::new(0.0, 0.0)]);
    let y = Point::new(vec![C64::new(1.0 / (1.0 + dc.radius), 0.0), C64::new(0.2 * dc.radius / (1.0 + dc.radius), 0.0)]);
    let k = dom.kobayashi(&l.from_ball(&x).unwrap(), &l.from_ball(&y).unwrap()).unwrap();
    assert!((k.value - kobayashi_ball(&x, &y).unwrap()).abs() <= 0.05);
}

#[test]
fn tiny_epsilon_is_insufficient_precision() {
    let dom = ellipsoid();
    let c = fefferman_chart(&dom, &off_axis()).unwrap();
    let err = distance_comparison(&dom, &localized_chart(&c, 1.0).unwrap(), 1e-16).unwrap_err();
    assert!(matches!(err, HoloError::InsufficientPrecision { .. }), "{err:?}");
}

#[test]
fn localized_chart_feeds_backward_construction() {
    let c = fefferman_chart(&DomainSpec::ball(2), &e1(2)).unwrap();
    let bc = LocalizedChart::unpushed(&c).ball_chart();
    assert!(bc.exact);
    let x = Point::new(vec![C64::new(0.2, 0.1), C64::new(-0.3, 0.0)]);
    assert!(bc.from_ball(&bc.to_ball(&x).unwrap()).unwrap().dist(&x) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn charts_on_ellipsoids_have_normal_shape(a in 1.0f64..3.0, b in 1.0f64..3.0, theta in 0.2f64..1.3) {
        let dom = DomainSpec::ellipsoid(&[a, b]).unwrap();
        let zeta = Point::new(vec![C64::new(theta.cos() / a.sqrt(), 0.0), C64::new(0.0, theta.sin() / b.sqrt())]);
        let c = fefferman_chart(&dom, &zeta).unwrap();
        prop_assert!(c.shape_error <= SHAPE_TOL);
        prop_assert!(c.condition <= 1e3);
        prop_assert_eq!(c.sandwich_check(2000, 5).violations, 0);
        let psi = c.defining_series().unwrap();
        prop_assert!(im_dependence(&psi, 2) <= 1e-9);
        let r = if c.d_upper > 0.0 { 0.5 / c.d_upper } else { 1.0 };
        let l = localized_chart(&c, r).unwrap();
        prop_assert!(l.series_error <= SHAPE_TOL);
    }
}
