//! Shared numeric substrate: points of `C^q`, limit detection, complex
//! finite differences and deterministic sampling.

use crate::{CMatrix, Complex, HoloError, Real, Result, C64};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Default limit-detection window.
pub const DEFAULT_WINDOW: usize = 8;
/// Default limit-detection tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Points closer than this to the boundary are rejected by metric routines.
pub const BOUNDARY_GUARD: f64 = 1e-12;

/// A point of `C^q`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CPoint<T: Real> {
    pub coords: Vec<Complex<T>>,
}

impl<T: Real> CPoint<T> {
    pub fn new(coords: Vec<Complex<T>>) -> Self {
        Self { coords }
    }

    pub fn zeros(q: usize) -> Self {
        Self { coords: vec![Complex::zero(); q] }
    }

    /// The `j`-th standard basis vector of `C^q`.
    pub fn basis(q: usize, j: usize) -> Self {
        let mut p = Self::zeros(q);
        p.coords[j] = Complex::one();
        p
    }

    /// Builds a point from `(re, im)` pairs given in `f64`.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            coords: pairs.iter().map(|&(re, im)| Complex::new(T::lit(re), T::lit(im))).collect(),
        }
    }

    /// Builds a point with real coordinates.
    pub fn from_real(xs: &[f64]) -> Self {
        Self { coords: xs.iter().map(|&x| Complex::new(T::lit(x), T::zero())).collect() }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm_sqr(&self) -> T {
        self.coords.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr())
    }

    pub fn norm(&self) -> T {
        self.norm_sqr().sqrt()
    }

    /// Hermitian product `<z, w> = sum z_j conj(w_j)`.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.coords
            .iter()
            .zip(&other.coords)
            .fold(Complex::zero(), |acc, (a, b)| acc + a * b.conj())
    }

    pub fn scale(&self, s: T) -> Self {
        Self { coords: self.coords.iter().map(|c| c * s).collect() }
    }

    pub fn scale_c(&self, s: Complex<T>) -> Self {
        Self { coords: self.coords.iter().map(|c| c * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: &Self) -> T {
        (self - other).norm()
    }

    /// The first coordinate.
    pub fn first(&self) -> Complex<T> {
        self.coords[0]
    }

    /// Squared norm of the coordinates after the first one.
    pub fn tail_norm_sqr(&self) -> T {
        self.coords.iter().skip(1).fold(T::zero(), |acc, c| acc + c.norm_sqr())
    }

    /// Converts to double precision.
    pub fn to_f64(&self) -> CPoint<f64> {
        CPoint {
            coords: self
                .coords
                .iter()
                .map(|c| C64::new(c.re.to_f64().unwrap(), c.im.to_f64().unwrap()))
                .collect(),
        }
    }

    /// Flattens to `[re_1, im_1, re_2, im_2, ...]`.
    pub fn to_real_vec(&self) -> Vec<T> {
        self.coords.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_real_vec(v: &[T]) -> Self {
        Self { coords: v.chunks(2).map(|c| Complex::new(c[0], c[1])).collect() }
    }
}

impl CPoint<f64> {
    /// `(re, im)` pairs, used by reports.
    pub fn pairs(&self) -> Vec<[f64; 2]> {
        self.coords.iter().map(|c| [c.re, c.im]).collect()
    }

    pub fn to_vector(&self) -> nalgebra::DVector<C64> {
        nalgebra::DVector::from_column_slice(&self.coords)
    }

    pub fn from_vector(v: &nalgebra::DVector<C64>) -> Self {
        Self { coords: v.iter().cloned().collect() }
    }

    /// Applies a complex matrix.
    pub fn apply(&self, m: &CMatrix) -> Self {
        Self::from_vector(&(m * self.to_vector()))
    }
}

impl<T: Real> Serialize for CPoint<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.dim()))?;
        for c in &self.coords {
            seq.serialize_element(&[c.re.to_f64().unwrap_or(f64::NAN), c.im.to_f64().unwrap_or(f64::NAN)])?;
        }
        seq.end()
    }
}

impl<T: Real> Index<usize> for CPoint<T> {
    type Output = Complex<T>;
    fn index(&self, i: usize) -> &Complex<T> {
        &self.coords[i]
    }
}

impl<T: Real> IndexMut<usize> for CPoint<T> {
    fn index_mut(&mut self, i: usize) -> &mut Complex<T> {
        &mut self.coords[i]
    }
}

impl<T: Real> Add for &CPoint<T> {
    type Output = CPoint<T>;
    fn add(self, rhs: &CPoint<T>) -> CPoint<T> {
        CPoint { coords: self.coords.iter().zip(&rhs.coords).map(|(a, b)| a + b).collect() }
    }
}

impl<T: Real> Sub for &CPoint<T> {
    type Output = CPoint<T>;
    fn sub(self, rhs: &CPoint<T>) -> CPoint<T> {
        CPoint { coords: self.coords.iter().zip(&rhs.coords).map(|(a, b)| a - b).collect() }
    }
}

impl<T: Real> Add for CPoint<T> {
    type Output = CPoint<T>;
    fn add(self, rhs: CPoint<T>) -> CPoint<T> {
        &self + &rhs
    }
}

impl<T: Real> Sub for CPoint<T> {
    type Output = CPoint<T>;
    fn sub(self, rhs: CPoint<T>) -> CPoint<T> {
        &self - &rhs
    }
}

impl<T: Real> Neg for &CPoint<T> {
    type Output = CPoint<T>;
    fn neg(self) -> CPoint<T> {
        CPoint { coords: self.coords.iter().map(|c| -c).collect() }
    }
}

impl<T: Real> Mul<T> for &CPoint<T> {
    type Output = CPoint<T>;
    fn mul(self, s: T) -> CPoint<T> {
        self.scale(s)
    }
}

/// Outcome of a finite limit test on a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub values: Vec<f64>,
    pub converged: bool,
    pub limit: Option<f64>,
    pub window: usize,
    pub tol: f64,
}

impl ConvergenceReport {
    /// The limit, or a non-convergence error carrying this report.
    pub fn require(self, what: &str) -> Result<f64> {
        match self.limit {
            Some(l) => Ok(l),
            None => Err(HoloError::NonConvergent { what: what.to_string(), report: Some(self) }),
        }
    }

    /// Spread of the trailing window.
    pub fn spread(&self) -> f64 {
        let tail = &self.values[self.values.len().saturating_sub(self.window)..];
        spread(tail)
    }
}

fn spread(xs: &[f64]) -> f64 {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Declares convergence when the last `window` values spread by at most
/// `tol`; the limit is the mean of that window.
pub fn detect_limit(values: &[f64], window: usize, tol: f64) -> Result<ConvergenceReport> {
    if window < 2 || !(tol > 0.0) {
        return Err(HoloError::Precondition(format!("window {window} must be >= 2 and tol {tol} > 0")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HoloError::Precondition("non-finite value in sequence".into()));
    }
    if values.len() < window {
        return Err(HoloError::NotEnoughData { needed: window, got: values.len() });
    }
    let tail = &values[values.len() - window..];
    let converged = spread(tail) <= tol;
    let limit = converged.then(|| pairwise_sum(tail) / window as f64);
    Ok(ConvergenceReport { values: values.to_vec(), converged, limit, window, tol })
}

/// How a sequence is reduced to its limiting value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimitMode {
    /// Minimum over the trailing half.
    LiminfTail,
    /// Checks monotonicity and returns the last value.
    MonotoneLimit,
}

/// Reduces a sequence to its liminf or monotone limit.
pub fn monotone_liminf(values: &[f64], mode: LimitMode, tol: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(HoloError::NotEnoughData { needed: 1, got: 0 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HoloError::Precondition("non-finite value in sequence".into()));
    }
    match mode {
        LimitMode::LiminfTail => {
            let start = values.len() / 2;
            Ok(values[start..].iter().cloned().fold(f64::INFINITY, f64::min))
        }
        LimitMode::MonotoneLimit => {
            let last = *values.last().unwrap();
            let increasing = last >= values[0];
            for (i, w) in values.windows(2).enumerate() {
                let jump = if increasing { w[0] - w[1] } else { w[1] - w[0] };
                if jump > tol {
                    return Err(HoloError::MonotonicityViolation { index: i + 1, jump });
                }
            }
            Ok(last)
        }
    }
}

/// Order-independent summation by a fixed pairwise tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Jacobian of a holomorphic map by central complex differences.
///
/// Steps along `e_j` and `i e_j` are averaged, which cancels the
/// second-order truncation term for holomorphic maps.
pub fn numerical_jacobian<F>(f: F, z: &CPoint<f64>, h: f64, boundary_distance: f64) -> Result<CMatrix>
where
    F: Fn(&CPoint<f64>) -> CPoint<f64>,
{
    if boundary_distance <= h {
        return Err(HoloError::BoundaryProximity { distance: boundary_distance });
    }
    let q = z.dim();
    let fz = f(z);
    let mut jac = CMatrix::zeros(fz.dim(), q);
    for j in 0..q {
        let mut cols = Vec::with_capacity(4);
        for dir in [C64::new(h, 0.0), C64::new(0.0, h)] {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[j] += dir;
            minus[j] -= dir;
            let (fp, fm) = (f(&plus), f(&minus));
            cols.push((fp, fm, dir));
        }
        for i in 0..fz.dim() {
            let mut acc = C64::zero();
            for (fp, fm, dir) in &cols {
                acc += (fp[i] - fm[i]) / (dir * 2.0);
            }
            jac[(i, j)] = acc / 2.0;
        }
    }
    Ok(jac)
}

/// Deterministic sampler: equal seeds and equal request sequences give
/// bit-identical samples.
#[derive(Clone, Debug)]
pub struct SeededSampler {
    pub seed: u64,
    pub dimension: usize,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64, dimension: usize) -> Self {
        Self { seed, dimension, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Beta(a, b) variate; panics on non-positive shape parameters.
    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        self.rng.sample(Beta::new(a, b).expect("positive beta shape parameters"))
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Uniform point on the unit sphere of `C^q`.
    pub fn sphere(&mut self) -> CPoint<f64> {
        loop {
            let p = CPoint::new((0..self.dimension).map(|_| C64::new(self.normal(), self.normal())).collect());
            let n = p.norm();
            if n > 1e-12 {
                return p.scale(1.0 / n);
            }
        }
    }

    /// Uniform point of the Euclidean ball of the given radius.
    pub fn ball(&mut self, radius: f64) -> CPoint<f64> {
        let d = 2.0 * self.dimension as f64;
        let r = radius * self.uniform().powf(1.0 / d);
        self.sphere().scale(r)
    }

    /// Point at Kobayashi distance `d` from the origin of the unit ball in a
    /// uniformly random direction.
    pub fn ball_at_distance(&mut self, d: f64) -> CPoint<f64> {
        self.sphere().scale((d / 2.0).tanh())
    }

    /// Unit complex number with uniform argument.
    pub fn phase(&mut self) -> C64 {
        C64::from_polar(1.0, self.uniform_in(0.0, std::f64::consts::TAU))
    }
}

/// Deterministic, nearly uniform unit directions in `C^q = R^{2q}`.
///
/// Uses angles for `q = 1`, a Kronecker lattice on `S^3` in Hopf coordinates
/// for `q = 2`, and fixed-seed Gaussian directions otherwise.
pub fn fibonacci_directions(n: usize, q: usize) -> Vec<CPoint<f64>> {
    use std::f64::consts::TAU;
    match q {
        1 => (0..n).map(|i| CPoint::new(vec![C64::from_polar(1.0, TAU * (i as f64 + 0.5) / n as f64)])).collect(),
        2 => {
            // Generalized golden ratios for the two angular sequences.
            let g = 1.324_717_957_244_746_f64;
            let (a1, a2) = (1.0 / g, 1.0 / (g * g));
            (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) / n as f64;
                    let (c, sn) = ((1.0 - s).sqrt(), s.sqrt());
                    let t1 = TAU * (i as f64 * a1).fract();
                    let t2 = TAU * (i as f64 * a2).fract();
                    CPoint::new(vec![C64::from_polar(c, t1), C64::from_polar(sn, t2)])
                })
                .collect()
        }
        _ => {
            let mut s = SeededSampler::new(0x5eed_d1e5, q);
            (0..n).map(|_| s.sphere()).collect()
        }
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = (a + b) / 2.0;
    let fx = f(x);
    if fx <= fc.min(fd) {
        (x, fx)
    } else if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Derivative-free compass search minimizing `f` from `x0`. The step halves
/// after every sweep without improvement.
pub fn pattern_search<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    min_step: f64,
    max_sweeps: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut step = step;
    for _ in 0..max_sweeps {
        if step < min_step {
            break;
        }
        let mut improved = false;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let old = x[i];
                x[i] = old + sign * step;
                let fy = f(&x);
                if fy < fx {
                    fx = fy;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Minimizes `f` over unit vectors of `C^q` by compass search on the real
/// coordinates followed by renormalization.
pub fn sphere_search<F: FnMut(&CPoint<f64>) -> f64>(mut f: F, start: &CPoint<f64>, step: f64, min_step: f64) -> (CPoint<f64>, f64) {
    let norm = |v: &[f64]| {
        let p = CPoint::from_real_vec(v);
        let n = p.norm();
        p.scale(1.0 / n)
    };
    let (x, fx) = pattern_search(|v| f(&norm(v)), &start.to_real_vec(), step, min_step, 400);
    (norm(&x), fx)
}

/// Bisection for the sign change of `f` on `[lo, hi]`, assuming
/// `f(lo) < 0 <= f(hi)`.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Identity matrix of size `q`.
pub fn identity(q: usize) -> CMatrix {
    CMatrix::identity(q, q)
}

/// Unitary polar factor `W` of `A = W P`, taken from the singular value
/// decomposition.
pub fn polar_unitary(a: &CMatrix) -> CMatrix {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors");
    let v_t = svd.v_t.expect("right singular vectors");
    u * v_t
}

/// Singular values in decreasing order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

/// Numerical rank: singular values above `rel * max`, with a required
/// relative gap between kept and dropped values.
pub fn gap_rank(sv: &[f64], rel: f64, min_gap: f64) -> std::result::Result<usize, Vec<usize>> {
    let top = sv.first().cloned().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    let k = sv.iter().filter(|&&s| s > rel * top).count();
    if k == sv.len() {
        return Ok(k);
    }
    let (kept, dropped) = (sv[k - 1], sv[k]);
    if dropped == 0.0 || kept / dropped >= min_gap {
        Ok(k)
    } else {
        Err(vec![k - 1, k].into_iter().filter(|&c| c > 0).chain(std::iter::once(k + 1)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0, 4.0]), 10.0);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, _) = golden_section_min(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn fibonacci_directions_are_unit() {
        for q in 1..=3 {
            for d in fibonacci_directions(64, q) {
                assert!((d.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_rank_reports_ambiguity() {
        assert_eq!(gap_rank(&[1.0, 1e-9], 1e-5, 10.0), Ok(1));
        assert!(gap_rank(&[1.0, 2e-5, 1e-5], 1e-5, 10.0).is_err());
    }
}
