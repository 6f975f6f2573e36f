use holokit::ball::{kobayashi_siegel, BallAutomorphism, Unitary};
use holokit::convex::{DomainSpec, Polynomial};
use holokit::dynamics::*;
use holokit::numerics::SeededSampler;
use holokit::{HoloError, Point, C64};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn disc_aut(a: f64) -> HoloMap {
    HoloMap::ball_translation(1, a).unwrap()
}

/// Half-plane distance `log((1 + t)/(1 - t))`, `t = |z - w| / |z - conj(w)|`.
fn half_plane(z: C64, w: C64) -> f64 {
    let t = (z - w).norm() / (z - w.conj()).norm();
    ((1.0 + t) / (1.0 - t)).ln()
}

fn half_disc() -> HoloMap {
    HoloMap::scaling(DomainSpec::ball(1), c(0.5, 0.0)).unwrap()
}

fn siegel_translation() -> HoloMap {
    HoloMap::siegel_affine(1.0, 1.0, &[]).unwrap()
}

fn i1() -> Point {
    Point::from_pairs(&[(0.0, 1.0)])
}

#[test]
fn membership_is_checked_on_construction() {
    let b = DomainSpec::ball(1);
    let err = HoloMap::new("double", b.clone(), b, |z: &Point| z.scale(2.0)).unwrap_err();
    assert!(matches!(err, HoloError::InvariantViolation(_)));
}

#[test]
fn identity_orbit_is_constant() {
    let f = HoloMap::identity(DomainSpec::ball(2)).unwrap();
    let x = Point::from_pairs(&[(0.3, 0.1), (-0.2, 0.0)]);
    let rec = iterate(&f, &x, 10).unwrap();
    assert!(rec.points.iter().all(|p| p == &x));
    assert!(rec.steps.iter().all(|&s| s == 0.0));
    assert!(!rec.exited);
}

#[test]
fn half_map_orbit() {
    let rec = iterate(&half_disc(), &Point::from_real(&[0.5]), 6).unwrap();
    for (n, p) in rec.points.iter().enumerate() {
        assert!((p[0].re - 0.5f64.powi(n as i32 + 1)).abs() < 1e-15);
    }
    for (a, b) in rec.points.iter().zip(&rec.points[1..]) {
        assert!(half_disc().apply(a).dist(b) < 1e-10);
    }
}

#[test]
fn siegel_dilation_distance_grows_linearly() {
    let f = HoloMap::siegel_affine(4.0, 0.0, &[c(2.0, 0.0)]).unwrap();
    let x = Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)]);
    let rec = iterate(&f, &x, 12).unwrap();
    for (n, d) in rec.distance_to_base.iter().enumerate() {
        let oracle = half_plane(c(0.0, 1.0), c(0.0, 4f64.powi(n as i32)));
        assert!((d - oracle).abs() < 1e-9, "n={n}: {d} vs {oracle}");
        assert!((d - n as f64 * 4f64.ln()).abs() < 1e-9);
    }
}

#[test]
fn disc_orbit_is_truncated_at_the_boundary() {
    let rec = iterate(&disc_aut(0.5), &Point::zeros(1), 200).unwrap();
    assert!(rec.exited);
    assert!(rec.len() < 201);
    assert!(rec.points.iter().all(|p| 1.0 - p.norm() >= EXIT_MARGIN));
}

#[test]
fn automorphism_step_sequence_is_constant() {
    let mut s = SeededSampler::new(3, 2);
    let aut = BallAutomorphism::new(Point::from_pairs(&[(0.2, 0.1), (0.0, -0.3)]), Unitary::random(2, &mut s)).unwrap();
    let f = HoloMap::ball_automorphism(aut).unwrap();
    let x = Point::from_pairs(&[(0.1, 0.0), (0.0, 0.2)]);
    for m in 1..=3 {
        let cfg = StepConfig { n_max: 20, ..Default::default() };
        let (pts, _) = orbit_points(&f, &x, cfg.n_max + m).unwrap();
        let (vals, _) = step_sequence(&f.domain, &pts, m).unwrap();
        let d0 = f.domain.kobayashi(&x, &f.iterate_point(&x, m)).unwrap().value;
        assert!(vals.iter().all(|v| (v - d0).abs() < 1e-8), "m={m}");
        let rep = forward_step(&f, &x, m, &cfg).unwrap();
        assert!((rep.limit.unwrap() - d0).abs() < 1e-8);
    }
}

#[test]
fn translation_forward_step() {
    let rep = forward_step(&siegel_translation(), &i1(), 1, &StepConfig::default()).unwrap();
    let oracle = ((5f64.sqrt() + 1.0) / (5f64.sqrt() - 1.0)).ln();
    assert!((oracle - half_plane(c(0.0, 1.0), c(1.0, 1.0))).abs() < 1e-14);
    assert!((rep.limit.unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 0.9624).abs() < 1e-4);
}

#[test]
fn contraction_forward_step_vanishes() {
    for m in 1..=3 {
        let rep = forward_step(&half_disc(), &Point::from_real(&[0.5]), m, &StepConfig::default()).unwrap();
        assert!(rep.limit.unwrap().abs() < 1e-9);
    }
}

#[test]
fn monotonicity_violation_is_reported() {
    let err = check_monotone(&[1.0, 0.5, 0.7], &[0.0; 3], false, 1e-9).unwrap_err();
    assert!(matches!(err, HoloError::MetricInconsistency(_)));
    check_monotone(&[1.0, 1.0 + 5e-10, 0.9], &[0.0; 3], false, 1e-9).unwrap();
}

#[test]
fn divergence_rate_examples() {
    let f = HoloMap::siegel_affine(2.0, 0.0, &[c(2f64.sqrt(), 0.0)]).unwrap();
    let x = Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)]);
    let y = Point::from_pairs(&[(0.5, 2.0), (0.3, 0.2)]);
    let rep = divergence_rate(&f, &x, 200, Some(&y)).unwrap();
    assert!((rep.rate - 2f64.ln()).abs() < 1e-3, "{}", rep.rate);
    assert!(rep.base_difference.unwrap() < 1e-3);

    let id = HoloMap::identity(DomainSpec::ball(2)).unwrap();
    assert_eq!(divergence_rate(&id, &Point::zeros(2), 8, None).unwrap().rate, 0.0);

    let rep = divergence_rate(&siegel_translation(), &i1(), 20000, None).unwrap();
    assert!(rep.rate < 1e-3, "{}", rep.rate);
    assert!(divergence_rate(&id, &Point::zeros(2), 7, None).is_err());
}

#[test]
fn rate_is_below_normalized_steps() {
    let f = HoloMap::siegel_affine(2.0, 0.0, &[c(2f64.sqrt(), 0.0)]).unwrap();
    let x = Point::from_pairs(&[(0.2, 1.0), (0.1, 0.1)]);
    let c_f = divergence_rate(&f, &x, 200, None).unwrap().rate;
    for m in 1..=4 {
        let s = forward_step(&f, &x, m, &StepConfig { n_max: 60, ..Default::default() }).unwrap().limit.unwrap();
        assert!(c_f <= s / m as f64 + 1e-9);
    }
}

#[test]
fn disc_automorphism_dilations() {
    let f = disc_aut(0.5);
    let p = Point::zeros(1);
    let dw = BoundaryPoint::Finite(Point::from_real(&[1.0]));
    let rep = BoundaryPoint::Finite(Point::from_real(&[-1.0]));
    let a = dilation(&f, &dw, &p, DilationMethod::Liminf).unwrap();
    assert!((a.liminf - 1.0 / 3.0).abs() < 1e-6, "{}", a.liminf);
    assert!((a.geodesic_step - 1.0 / 3.0).abs() < 1e-6, "{}", a.geodesic_step);
    let b = dilation(&f, &rep, &p, DilationMethod::GeodesicStep).unwrap();
    assert!((b.value - 3.0).abs() < 1e-5, "{}", b.value);
    assert!((b.liminf - 3.0).abs() < 1e-5);
}

#[test]
fn siegel_hyperbolic_dilation_at_infinity() {
    for lambda in [0.25, 0.5] {
        let f = HoloMap::siegel_hyperbolic(lambda, &[0.7]).unwrap();
        let p = Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)]);
        let d = dilation(&f, &BoundaryPoint::Infinity, &p, DilationMethod::Liminf).unwrap();
        assert!((d.value - lambda).abs() < 1e-6, "{} vs {lambda}", d.value);
    }
}

#[test]
fn identity_dilation_is_one() {
    let f = HoloMap::identity(DomainSpec::ball(2)).unwrap();
    let zeta = Point::from_pairs(&[(0.6, 0.0), (0.0, 0.8)]);
    let d = dilation(&f, &BoundaryPoint::Finite(zeta), &Point::zeros(2), DilationMethod::Liminf).unwrap();
    assert!((d.value - 1.0).abs() < 1e-12);
}

#[test]
fn dilation_is_pole_independent() {
    let f = disc_aut(0.5);
    let dw = BoundaryPoint::Finite(Point::from_real(&[1.0]));
    let a = dilation(&f, &dw, &Point::zeros(1), DilationMethod::Liminf).unwrap();
    let b = dilation(&f, &dw, &Point::from_pairs(&[(-0.3, 0.4)]), DilationMethod::Liminf).unwrap();
    assert!((a.value - b.value).abs() < 1e-5);
}

#[test]
fn classify_contraction() {
    let r = classify(&half_disc(), &Point::from_real(&[0.5]), &ClassifyBudget::default()).unwrap();
    assert_eq!(r.map_type, MapType::Elliptic);
    match r.denjoy_wolff.unwrap() {
        BoundaryPoint::Finite(p) => assert!(p.norm() < 1e-10),
        other => panic!("{other:?}"),
    }
}

#[test]
fn classify_disc_automorphism() {
    let r = classify(&disc_aut(0.5), &Point::zeros(1), &ClassifyBudget::default()).unwrap();
    assert_eq!(r.map_type, MapType::Hyperbolic, "{:?}", r.notes);
    match r.denjoy_wolff.as_ref().unwrap() {
        BoundaryPoint::Finite(p) => assert!(p.dist(&Point::from_real(&[1.0])) < 1e-8),
        other => panic!("{other:?}"),
    }
    assert!((r.dilation_value().unwrap() - 1.0 / 3.0).abs() < 1e-3);
    assert!((r.rate().unwrap() - 3f64.ln()).abs() < 1e-3);
    assert!(r.rate_mismatch.unwrap() <= 1e-3);
}

#[test]
fn classify_siegel_translation() {
    let r = classify(&siegel_translation(), &i1(), &ClassifyBudget::default()).unwrap();
    assert_eq!(r.map_type, MapType::ParabolicNonzeroStep, "{:?}", r.notes);
    assert_eq!(r.denjoy_wolff, Some(BoundaryPoint::Infinity));
    assert!(r.rate().unwrap() < 1e-3);
    let s1 = r.step.as_ref().unwrap().values.last().cloned().unwrap();
    assert!((s1 - 0.9624).abs() < 1e-4);
    assert!(r.rate_mismatch.unwrap() <= 1e-3);
}

#[test]
fn classify_siegel_hyperbolic() {
    let f = HoloMap::siegel_hyperbolic(0.5, &[0.3]).unwrap();
    let x = Point::from_pairs(&[(0.1, 1.0), (0.2, 0.0)]);
    let r = classify(&f, &x, &ClassifyBudget::default()).unwrap();
    assert_eq!(r.map_type, MapType::Hyperbolic, "{:?}", r.notes);
    assert!((r.dilation_value().unwrap() - 0.5).abs() < 1e-3);
    assert!(r.rate_mismatch.unwrap() <= 1e-3);
}

#[test]
fn julia_for_ball_automorphisms() {
    let f = disc_aut(0.5);
    let p = Point::zeros(1);
    for (zeta, lambda) in [(1.0, 1.0 / 3.0), (-1.0, 3.0)] {
        let z = BoundaryPoint::Finite(Point::from_real(&[zeta]));
        let rep = julia_check(&f, &z, &p, Some(lambda), &[0.5, 1.0, 2.0], 300, 11).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.worst_ratio <= 1.0 + 1e-8, "{}", rep.worst_ratio);
    }
    let g = HoloMap::ball_translation(3, 0.3).unwrap();
    let z = BoundaryPoint::Finite(Point::basis(3, 0));
    let rep = julia_check(&g, &z, &Point::zeros(3), None, &[0.5, 1.0], 200, 5).unwrap();
    assert_eq!(rep.violations, 0);
    assert!((rep.lambda - 0.7 / 1.3).abs() < 1e-5);
}

#[test]
fn julia_for_identity() {
    let f = HoloMap::identity(DomainSpec::ball(2)).unwrap();
    let z = BoundaryPoint::Finite(Point::basis(2, 1));
    let rep = julia_check(&f, &z, &Point::zeros(2), None, &[1.0], 200, 1).unwrap();
    assert_eq!(rep.violations, 0);
    assert!((rep.worst_ratio - 1.0).abs() < 1e-10);
}

#[test]
fn julia_for_quadratic_disc_map() {
    let z = Polynomial::var(1, 0, false);
    let poly = z.add(&z.pow(2)).scale(c(0.5, 0.0));
    let b = DomainSpec::ball(1);
    let f = HoloMap::polynomial(b.clone(), b, vec![poly]).unwrap();
    let r = classify(&f, &Point::from_real(&[0.4]), &ClassifyBudget::default()).unwrap();
    assert_eq!(r.map_type, MapType::Elliptic);
    let one = BoundaryPoint::Finite(Point::from_real(&[1.0]));
    let d = dilation(&f, &one, &Point::zeros(1), DilationMethod::Liminf).unwrap();
    assert!((d.value - 1.5).abs() < 1e-4, "{}", d.value);
    let rep = julia_check(&f, &one, &Point::zeros(1), Some(1.5), &[0.5, 1.0, 2.0], 300, 2).unwrap();
    assert_eq!(rep.violations, 0, "{}", rep.worst_ratio);
}

#[test]
fn julia_on_siegel_and_egg() {
    let f = HoloMap::siegel_hyperbolic(0.5, &[0.4]).unwrap();
    let p = Point::from_pairs(&[(0.0, 1.0), (0.0, 0.0)]);
    let rep = julia_check(&f, &BoundaryPoint::Infinity, &p, None, &[0.5, 1.0], 200, 9).unwrap();
    assert_eq!(rep.violations, 0);

    let g = HoloMap::egg_automorphism(0.4).unwrap();
    let zeta = BoundaryPoint::Finite(Point::from_real(&[-1.0, 0.0]));
    // Horosphere values on the egg go through the general radial limit, a few
    // seconds each; a handful of samples exercises the path.
    let rep = julia_check(&g, &zeta, &Point::zeros(2), Some(0.6 / 1.4), &[1.0], 3, 4).unwrap();
    assert_eq!(rep.samples, 3);
    assert!(rep.worst_ratio.is_finite());
}

#[test]
fn cayley_conjugate_matches_ball_translation() {
    let g = HoloMap::siegel_hyperbolic(1.0 / 3.0, &[0.0]).unwrap();
    let f = HoloMap::cayley_conjugate(&g).unwrap();
    let x = Point::from_pairs(&[(0.1, 0.2), (-0.3, 0.1)]);
    let y = f.apply(&x);
    let u = holokit::ball::cayley(&x).unwrap();
    assert!((kobayashi_siegel(&g.apply(&u), &holokit::ball::cayley(&y).unwrap()).unwrap()).abs() < 1e-8);
    assert!(f.apply_inverse(&y).unwrap().dist(&x) < 1e-10);
}

#[test]
fn heisenberg_map_inverse() {
    let f = HoloMap::siegel_heisenberg(&[0.5]).unwrap();
    let x = Point::from_pairs(&[(0.3, 2.0), (0.2, -0.1), (0.1, 0.1)]);
    assert!(f.apply_inverse(&f.apply(&x)).unwrap().dist(&x) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_steps_are_nonincreasing(a in -0.8f64..0.8, t in 0.0f64..0.9, r in 0.0f64..0.9) {
        let f = HoloMap::ball_translation(2, a).unwrap();
        let x = Point::from_pairs(&[(t * 0.5, 0.1), (0.0, r * 0.5)]);
        let (pts, _) = orbit_points(&f, &x, 40).unwrap();
        let (vals, gaps) = step_sequence(&f.domain, &pts, 1).unwrap();
        prop_assert!(check_monotone(&vals, &gaps, false, 1e-9).is_ok());
    }

    #[test]
    fn contraction_steps_are_nonincreasing(s in 0.1f64..0.95, x0 in -0.9f64..0.9) {
        let f = HoloMap::scaling(DomainSpec::ball(1), c(s, 0.0)).unwrap();
        let (pts, _) = orbit_points(&f, &Point::from_real(&[x0]), 40).unwrap();
        let (vals, gaps) = step_sequence(&f.domain, &pts, 2).unwrap();
        prop_assert!(check_monotone(&vals, &gaps, false, 1e-9).is_ok());
    }

    #[test]
    fn log_dilation_matches_rate(a in 0.2f64..0.7) {
        let f = HoloMap::ball_translation(1, a).unwrap();
        let r = classify(&f, &Point::zeros(1), &ClassifyBudget::default()).unwrap();
        prop_assert_eq!(r.map_type, MapType::Hyperbolic);
        prop_assert!(r.rate_mismatch.unwrap() <= 1e-3);
    }
}
