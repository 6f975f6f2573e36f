use holokit::numerics::{
    detect_limit, monotone_liminf, numerical_jacobian, LimitMode, SeededSampler, DEFAULT_STEP,
};
use holokit::{CMatrix, HoloError, Point, C64};
use proptest::prelude::*;

#[test]
fn detect_limit_constant_sequence() {
    let r = detect_limit(&[1.0, 1.0, 1.0], 3, 1e-9).unwrap();
    assert!(r.converged);
    assert_eq!(r.limit, Some(1.0));
}

#[test]
fn detect_limit_halving_sequence_does_not_converge() {
    let r = detect_limit(&[1.0, 0.5, 0.25, 0.125], 3, 1e-9).unwrap();
    assert!(!r.converged);
    assert!(r.limit.is_none());
}

#[test]
fn detect_limit_log3_plus_geometric_tail() {
    let v: Vec<f64> = (1..=40).map(|n| 3f64.ln() + 0.5f64.powi(n)).collect();
    let r = detect_limit(&v, 5, 1e-6).unwrap();
    assert!(r.converged);
    assert!((r.limit.unwrap() - 1.098612).abs() < 1e-6);
}

#[test]
fn detect_limit_short_input_errors() {
    assert!(matches!(detect_limit(&[1.0, 2.0], 3, 1e-9), Err(HoloError::NotEnoughData { needed: 3, got: 2 })));
}

#[test]
fn jacobian_of_identity() {
    let z = Point::from_pairs(&[(0.1, 0.2), (-0.3, 0.05)]);
    let j = numerical_jacobian(|z| z.clone(), &z, DEFAULT_STEP, 0.5).unwrap();
    assert!((j - CMatrix::identity(2, 2)).norm() < 1e-10);
}

#[test]
fn jacobian_of_linear_map() {
    let a = CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 2.0), C64::new(0.5, 0.0), C64::new(0.0, -1.0), C64::new(3.0, 0.25)]);
    let z = Point::from_pairs(&[(0.2, 0.1), (0.0, 0.3)]);
    let j = numerical_jacobian(|z| z.apply(&a), &z, DEFAULT_STEP, 0.5).unwrap();
    assert!((j - &a).norm() < 1e-9);
}

#[test]
fn jacobian_of_quadratic_map() {
    let z = Point::from_real(&[0.3, 0.1]);
    let f = |z: &Point| Point::new(vec![z[0] * z[0], z[0] * z[1]]);
    let j = numerical_jacobian(f, &z, DEFAULT_STEP, 0.5).unwrap();
    let expected = CMatrix::from_row_slice(2, 2, &[C64::new(0.6, 0.0), C64::new(0.0, 0.0), C64::new(0.1, 0.0), C64::new(0.3, 0.0)]);
    assert!((j - expected).norm() < 1e-9);
}

#[test]
fn jacobian_rejects_boundary_points() {
    let z = Point::from_real(&[0.999_999_9]);
    let err = numerical_jacobian(|z| z.clone(), &z, 1e-6, 1e-7).unwrap_err();
    assert!(matches!(err, HoloError::BoundaryProximity { .. }));
}

#[test]
fn monotone_limit_of_decreasing_sequence() {
    assert_eq!(monotone_liminf(&[3.0, 2.0, 1.0, 1.0, 1.0], LimitMode::MonotoneLimit, 1e-12).unwrap(), 1.0);
}

#[test]
fn liminf_tail_of_alternating_sequence() {
    let v: Vec<f64> = (0..20).map(|i| (i % 2 == 0) as u8 as f64).collect();
    assert_eq!(monotone_liminf(&v, LimitMode::LiminfTail, 1e-12).unwrap(), 0.0);
}

#[test]
fn monotone_limit_of_log3_sequence() {
    let v: Vec<f64> = (1..=100).map(|n| 3f64.ln() * (1.0 + 1.0 / n as f64)).collect();
    let l = monotone_liminf(&v, LimitMode::MonotoneLimit, 1e-12).unwrap();
    // The n = 100 term sits exactly 1% above log 3.
    assert!((l - 3f64.ln()).abs() / 3f64.ln() <= 1e-2 + 1e-12);
}

#[test]
fn monotone_limit_reports_first_violation() {
    let err = monotone_liminf(&[3.0, 2.0, 2.5, 1.0], LimitMode::MonotoneLimit, 1e-9).unwrap_err();
    assert!(matches!(err, HoloError::MonotonicityViolation { index: 2, .. }));
}

#[test]
fn sampler_is_reproducible() {
    let mut a = SeededSampler::new(42, 3);
    let mut b = SeededSampler::new(42, 3);
    for _ in 0..100 {
        assert_eq!(a.ball(0.9), b.ball(0.9));
    }
    let mut c = SeededSampler::new(43, 3);
    assert_ne!(SeededSampler::new(42, 3).sphere(), c.sphere());
}

fn poly_map(coef: [f64; 6]) -> impl Fn(&Point) -> Point {
    move |z: &Point| {
        let (a, b) = (z[0], z[1]);
        Point::new(vec![
            a * coef[0] + b * b * coef[1] + a * b * coef[2],
            b * coef[3] + a * a * coef[4] + a * a * b * coef[5],
        ])
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detect_limit_idempotent_under_appending_limit(
        vals in proptest::collection::vec(-5.0f64..5.0, 8..20), tol in 1e-6f64..1.0
    ) {
        let r = detect_limit(&vals, 4, tol).unwrap();
        if let Some(l) = r.limit {
            let mut more = vals.clone();
            more.push(l);
            let r2 = detect_limit(&more, 4, tol).unwrap();
            prop_assert!(r2.converged);
        }
    }

    #[test]
    fn jacobian_chain_rule(
        c1 in proptest::array::uniform6(-1.0f64..1.0),
        c2 in proptest::array::uniform6(-1.0f64..1.0),
        x in -0.3f64..0.3, y in -0.3f64..0.3,
    ) {
        let h = 1e-3;
        let (f, g) = (poly_map(c1), poly_map(c2));
        let z = Point::from_pairs(&[(x, y), (y, -x)]);
        let fz = f(&z);
        let jf = numerical_jacobian(&f, &z, h, 1.0).unwrap();
        let jg = numerical_jacobian(&g, &fz, h, 1.0).unwrap();
        let jgf = numerical_jacobian(|p: &Point| g(&f(p)), &z, h, 1.0).unwrap();
        let prod = &jg * &jf;
        let scale = prod.norm().max(1.0);
        prop_assert!((jgf - prod).norm() / scale <= 10.0 * h * h);
    }
}
