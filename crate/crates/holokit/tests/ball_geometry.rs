use holokit::ball::*;
use holokit::convex::DomainSpec;
use holokit::numerics::SeededSampler;
use holokit::{HoloError, Point, Point32, C64};
use proptest::prelude::*;

fn e(q: usize, j: usize, t: f64) -> Point {
    Point::basis(q, j).scale(t)
}

/// One-variable Möbius pseudodistance, written independently of the crate.
fn disc_oracle(a: C64, b: C64) -> f64 {
    let r = ((a - b) / (C64::new(1.0, 0.0) - a * b.conj())).norm();
    ((1.0 + r) / (1.0 - r)).ln()
}

#[test]
fn distance_examples() {
    let z = Point::zeros(2);
    assert_eq!(kobayashi_ball(&z, &z).unwrap(), 0.0);
    assert!((kobayashi_ball(&z, &e(2, 0, 0.5)).unwrap() - 3f64.ln()).abs() < 1e-12);
    let d = kobayashi_ball(&e(2, 0, 0.5), &e(2, 0, -0.5)).unwrap();
    assert!((d - disc_oracle(C64::new(0.5, 0.0), C64::new(-0.5, 0.0))).abs() < 1e-12);
    assert!((d - 2.0 * 3f64.ln()).abs() < 1e-12);
}

#[test]
fn distance_rejects_boundary() {
    let err = kobayashi_ball(&Point::zeros(1), &Point::from_real(&[1.0 - 1e-13])).unwrap_err();
    assert!(matches!(err, HoloError::BoundaryProximity { .. }));
}

#[test]
fn distance_in_single_precision() {
    let z = Point32::zeros(2);
    let w = Point32::from_real(&[0.5, 0.0]);
    assert!((kobayashi_ball(&z, &w).unwrap() - 3f32.ln()).abs() < 1e-6);
}

#[test]
fn mobius_examples() {
    let id = mobius_to_origin(&Point::zeros(2)).unwrap();
    let z = Point::from_pairs(&[(0.1, 0.2), (0.3, -0.1)]);
    assert_eq!(id.apply(&z), z);

    let a = Point::from_pairs(&[(0.3, 0.0), (0.0, 0.4)]);
    let s = mobius_to_origin(&a).unwrap();
    assert!(s.apply(&a).norm() < 1e-15);
    assert!(s.apply(&Point::zeros(2)).dist(&a) < 1e-15);

    assert!(matches!(mobius_to_origin(&Point::from_real(&[1.0, 0.0])), Err(HoloError::OutOfDomain(_))));
}

#[test]
fn mobius_is_an_involution() {
    let mut s = SeededSampler::new(1, 3);
    for _ in 0..200 {
        let a = s.ball(0.95);
        let z = s.ball(0.99);
        let m = mobius_to_origin(&a).unwrap();
        assert!(m.apply(&m.apply(&z)).dist(&z) < 1e-10);
    }
}

#[test]
fn cayley_examples() {
    let c0 = cayley(&Point::zeros(2)).unwrap();
    assert!(c0.dist(&Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)])) < 1e-15);
    let c1 = cayley(&e(2, 0, 0.5)).unwrap();
    assert!(c1.dist(&Point::from_pairs(&[(0.0, 3.0), (0.0, 0.0)])) < 1e-15);
    assert!(matches!(cayley(&e(2, 0, 1.0)), Err(HoloError::Singular(_))));
    let mut s = SeededSampler::new(2, 2);
    for _ in 0..1000 {
        let (z, w) = (s.ball(0.99), s.ball(0.99));
        let (cz, cw) = (cayley_pair(CayleyDirection::Forward, &z).unwrap(), cayley(&w).unwrap());
        assert!(cayley_pair(CayleyDirection::Inverse, &cz).unwrap().dist(&z) < 1e-12);
        let dh = kobayashi_siegel(&cz, &cw).unwrap();
        assert!((dh - kobayashi_ball(&z, &w).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn siegel_dilation_distance() {
    let base = Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)]);
    for n in [1, 5, 50, 200] {
        let w = Point::from_pairs(&[(0.0, 4f64.powi(n)), (0.0, 0.0)]);
        let d = kobayashi_siegel(&base, &w).unwrap();
        assert!((d - n as f64 * 4f64.ln()).abs() < 1e-9 * n as f64);
    }
}

#[test]
fn horosphere_examples() {
    let o = Point::zeros(2);
    let e1 = Point::basis(2, 0);
    assert!((horo_value(&o, &e1, &o).unwrap() - 1.0).abs() < 1e-15);
    assert!((horo_value(&o, &e1, &e(2, 0, 0.5)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(matches!(horo_value(&o, &e(2, 0, 0.9), &o), Err(HoloError::InvalidCenter { .. })));
}

#[test]
fn horosphere_pole_change_via_radial_limits() {
    let mut s = SeededSampler::new(3, 2);
    for _ in 0..50 {
        let (p, p2, z) = (s.ball(0.8), s.ball(0.8), s.ball(0.8));
        let zeta = s.sphere();
        let lhs = horo_value_intrinsic(&p2, &zeta, &z).unwrap();
        let rhs = horo_value_intrinsic(&p, &zeta, &z).unwrap() * horo_value_intrinsic(&p2, &zeta, &p).unwrap();
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1.0), "{lhs} {rhs}");
    }
}

#[test]
fn koranyi_examples() {
    let o = Point::zeros(2);
    let e1 = Point::basis(2, 0);
    assert!((koranyi_value(&o, &e1, &o).unwrap() - 1.0).abs() < 1e-15);
    assert!((koranyi_value(&o, &e1, &e(2, 0, 0.5)).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn koranyi_intrinsic_matches_euclidean_formula() {
    let mut s = SeededSampler::new(4, 2);
    let o = Point::zeros(2);
    for _ in 0..1000 {
        let z = s.ball(0.95);
        let zeta = s.sphere();
        let euclid = (C64::new(1.0, 0.0) - z.inner(&zeta)).norm() / (1.0 - z.norm());
        let intrinsic = koranyi_value_intrinsic(&o, &zeta, &z).unwrap();
        assert!((intrinsic - euclid).abs() <= 1e-9 * euclid, "{intrinsic} {euclid}");
    }
}

#[test]
fn geodesic_examples() {
    let o = Point::zeros(2);
    let seg = geodesic(&o, &e(2, 0, 0.5), GeodesicKind::Segment).unwrap();
    assert!(seg.at(0.0).norm() < 1e-15);
    assert!(seg.at(3f64.ln()).dist(&e(2, 0, 0.5)) < 1e-12);
    let ray = geodesic(&o, &Point::basis(2, 0), GeodesicKind::Ray).unwrap();
    for t in [0.1, 1.0, 5.0] {
        assert!(ray.at(t).dist(&e(2, 0, (t / 2.0).tanh())) < 1e-15);
    }
    assert!(matches!(geodesic(&o, &o, GeodesicKind::Segment), Err(HoloError::DegenerateGeodesic)));
}

#[test]
fn transported_segments_are_unit_speed() {
    let mut s = SeededSampler::new(5, 2);
    for _ in 0..100 {
        let sigma = mobius_to_origin(&s.ball(0.9)).unwrap();
        let (z, w) = (sigma.apply(&s.ball(0.8)), sigma.apply(&s.ball(0.8)));
        let g = geodesic(&z, &w, GeodesicKind::Segment).unwrap();
        let len = g.length.unwrap();
        assert!(g.at(len).dist(&w) < 1e-9);
        for _ in 0..5 {
            let (a, b) = (s.uniform() * len, s.uniform() * len);
            assert!((kobayashi_ball(&g.at(a), &g.at(b)).unwrap() - (a - b).abs()).abs() < 1e-9);
        }
    }
}

#[test]
fn horosphere_metric_examples() {
    let x = Point::from_real(&[0.7, 0.1]);
    let y = Point::from_pairs(&[(0.6, 0.2), (-0.1, 0.1)]);
    assert_eq!(horosphere_metric(1.0, &x, &x).unwrap(), 0.0);
    assert!(horosphere_metric(1.0, &x, &y).unwrap() >= kobayashi_ball(&x, &y).unwrap());
    let far = Point::from_real(&[-0.5, 0.0]);
    assert!(matches!(horosphere_metric(1.0, &far, &x), Err(HoloError::NotInHorosphere { .. })));
}

#[test]
fn horosphere_metric_dominates_on_samples() {
    let mut s = SeededSampler::new(6, 2);
    for _ in 0..300 {
        let x = sample_horosphere(1.0, 2, &mut s);
        let y = sample_horosphere(1.0, 2, &mut s);
        assert!(horosphere_metric(1.0, &x, &y).unwrap() >= kobayashi_ball(&x, &y).unwrap() - 1e-12);
    }
}

#[test]
fn eqregion_radius_search() {
    let rep = eqregion_radius(1.0, 0.01, 2, 1000, 11).unwrap();
    assert!(rep.radius > 0.0 && rep.radius <= 1.0);
    assert!(rep.worst_excess <= 0.01);
    assert!(rep.radius >= rep.closed_form);
}

#[test]
fn slimness_examples() {
    let o = Point::zeros(2);
    let collinear = slimness_delta([&e(2, 0, -0.5), &o, &e(2, 0, 0.7)], SLIM_SAMPLES).unwrap();
    assert!(collinear.delta < 1e-6);

    let tri = [&o, &e(2, 0, 0.9), &e(2, 1, 0.9)];
    let r = slimness_delta(tri, SLIM_SAMPLES).unwrap();
    assert!(r.delta > 0.1 && !r.degenerate);

    let sigma = mobius_to_origin(&Point::from_pairs(&[(0.2, 0.1), (-0.3, 0.2)])).unwrap();
    let moved: Vec<Point> = tri.iter().map(|p| sigma.apply(p)).collect();
    let r2 = slimness_delta([&moved[0], &moved[1], &moved[2]], SLIM_SAMPLES).unwrap();
    assert!((r.delta - r2.delta).abs() < 1e-8, "{} {}", r.delta, r2.delta);
}

fn measured_delta() -> f64 {
    let mut s = SeededSampler::new(8, 2);
    let mut d = 0.0f64;
    for _ in 0..20 {
        let (a, b, c) = (s.ball(0.95), s.ball(0.95), s.ball(0.95));
        d = d.max(slimness_delta([&a, &b, &c], 64).unwrap().delta);
    }
    d.max(slimness_delta([&Point::zeros(2), &e(2, 0, 0.9), &e(2, 1, 0.9)], 64).unwrap().delta)
}

#[test]
fn filippo_examples() {
    let delta = measured_delta();
    let o = Point::zeros(2);
    let line = geodesic(&o, &Point::basis(2, 0), GeodesicKind::Line).unwrap();
    let on = line.at(0.8);
    let r = filippo_check(&line, &o, &on, delta).unwrap();
    assert!(r.holds && (r.slack - 6.0 * delta).abs() < 1e-6);
    let r = filippo_check(&line, &o, &e(2, 1, 0.5), delta).unwrap();
    assert!(r.holds);

    let mut s = SeededSampler::new(9, 2);
    for _ in 0..1000 {
        let g = geodesic(&s.ball(0.9), &s.sphere(), GeodesicKind::Line).unwrap();
        let x0 = g.at(s.uniform_in(-3.0, 3.0));
        let z = s.ball(0.95);
        assert!(filippo_check(&g, &x0, &z, delta).unwrap().holds);
    }
}

#[test]
fn koranyi_regions_compare_with_tubes() {
    let delta = measured_delta();
    let o = Point::zeros(2);
    let e1 = Point::basis(2, 0);
    let ray = geodesic(&o, &e1, GeodesicKind::Ray).unwrap();
    let on_ray: Vec<Point> = (0..10).map(|i| ray.at(i as f64 * 0.7)).collect();
    let r = region_a_vs_koranyi(&o, &e1, 2.0, delta, &on_ray).unwrap();
    assert_eq!((r.in_tube, r.in_koranyi, r.in_wide_tube), (10, 10, 10));

    let mut s = SeededSampler::new(10, 2);
    let pts: Vec<Point> = (0..10_000).map(|_| s.ball(1.0 - 1e-6)).collect();
    let r = region_a_vs_koranyi(&o, &e1, 2.0, delta, &pts).unwrap();
    assert_eq!(r.violations(), 0, "{r:?}");

    let thin = region_a_vs_koranyi(&o, &e1, 1.0 + 1e-9, delta, &pts).unwrap();
    assert_eq!(thin.in_tube, 0);
}

#[test]
fn horosphere_type_membership() {
    let h = Horosphere::new(DomainSpec::ball(2), Point::zeros(2), Point::basis(2, 0), 0.5).unwrap();
    assert!(h.contains(&e(2, 0, 0.5)).unwrap());
    assert!(!h.contains(&Point::zeros(2)).unwrap());
}

#[test]
fn shrinking_horospheres_nest() {
    let mut s = SeededSampler::new(12, 2);
    let (o, e1) = (Point::zeros(2), Point::basis(2, 0));
    for _ in 0..2000 {
        let z = s.ball(0.999);
        let h = horo_value(&o, &e1, &z).unwrap();
        for (r, rt) in [(1.0, 2.0), (0.5, 1.5), (2.0, 10.0)] {
            if h < r / rt {
                assert!(h < r);
            }
        }
    }
}

#[test]
fn geodesic_segments_shrink_near_the_boundary() {
    let zeta = Point::basis(2, 0);
    let mut lengths = vec![];
    for k in 1..8 {
        let delta = 0.5f64.powi(k);
        let z = Point::from_pairs(&[(1.0 - delta, 0.0), (0.0, 0.3 * delta)]);
        let w = Point::from_pairs(&[(1.0 - delta, 0.2 * delta), (-0.3 * delta, 0.0)]);
        assert!(z.dist(&zeta) < 2.0 * delta);
        let g = geodesic(&z, &w, GeodesicKind::Segment).unwrap();
        lengths.push(euclidean_length(&g, 200));
    }
    assert!(lengths.windows(2).all(|w| w[1] < w[0]));
    assert!(*lengths.last().unwrap() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metric_axioms(seed in any::<u64>()) {
        let mut s = SeededSampler::new(seed, 3);
        for _ in 0..40 {
            let (a, b, c) = (s.ball(0.999), s.ball(0.999), s.ball(0.999));
            let (ab, ba) = (kobayashi_ball(&a, &b).unwrap(), kobayashi_ball(&b, &a).unwrap());
            prop_assert!((ab - ba).abs() <= 1e-9);
            let (bc, ac) = (kobayashi_ball(&b, &c).unwrap(), kobayashi_ball(&a, &c).unwrap());
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn automorphism_invariance(seed in any::<u64>()) {
        let mut s = SeededSampler::new(seed, 2);
        let sigma = BallAutomorphism::random(2, 0.9, &mut s);
        let (z, w) = (s.ball(0.95), s.ball(0.95));
        let d = kobayashi_ball(&z, &w).unwrap();
        prop_assert!((kobayashi_ball(&sigma.apply(&z), &sigma.apply(&w)).unwrap() - d).abs() <= 1e-9);
    }

    #[test]
    fn geodesic_additivity(seed in any::<u64>(), s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, s3 in 0.0f64..1.0) {
        let mut s = SeededSampler::new(seed, 2);
        let g = geodesic(&s.ball(0.9), &s.ball(0.9), GeodesicKind::Segment).unwrap();
        let len = g.length.unwrap();
        let mut t = [s1 * len, s2 * len, s3 * len];
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (a, b, c) = (g.at(t[0]), g.at(t[1]), g.at(t[2]));
        let lhs = kobayashi_ball(&a, &c).unwrap();
        let rhs = kobayashi_ball(&a, &b).unwrap() + kobayashi_ball(&b, &c).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn horosphere_formula_matches_radial_limit(seed in any::<u64>()) {
        let mut s = SeededSampler::new(seed, 2);
        let (z, zeta) = (s.ball(0.9), s.sphere());
        let o = Point::zeros(2);
        let exact = horo_value(&o, &zeta, &z).unwrap();
        let limit = horo_value_intrinsic(&o, &zeta, &z).unwrap();
        prop_assert!((exact - limit).abs() <= 1e-9 * exact);
    }
}
