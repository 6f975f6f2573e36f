//! Exact Kobayashi geometry of the unit ball `B^q` and the Siegel half-space
//! `H^q = { Im w1 > |w'|^2 }`.
//!
//! The point-level kernel is generic over [`Real`]; sampling diagnostics
//! (slimness, Gromov inclusions, horosphere radii) work in `f64`.

use crate::convex::DomainSpec;
use crate::numerics::{golden_section_min, SeededSampler, BOUNDARY_GUARD};
use crate::{CMatrix, CPoint, Complex, HoloError, Real, Result, C64};
use num_traits::{One, Zero};
use serde::Serialize;

type P<T> = CPoint<T>;

fn c<T: Real>(re: f64, im: f64) -> Complex<T> {
    Complex::new(T::lit(re), T::lit(im))
}

fn check_interior<T: Real>(z: &P<T>) -> Result<()> {
    if !z.is_finite() {
        return Err(HoloError::OutOfDomain("non-finite coordinates".into()));
    }
    let n = z.norm();
    let guard = T::one() - T::lit(BOUNDARY_GUARD);
    if n >= guard || n >= T::one() {
        let dist = (T::one() - n).to_f64().unwrap_or(0.0);
        return Err(HoloError::BoundaryProximity { distance: dist });
    }
    Ok(())
}

/// `log((1+r)/(1-r))` from `r` and `1 - r^2` computed independently.
fn dist_from_r<T: Real>(r2: T, one_minus_r2: T) -> T {
    let r = r2.max(T::zero()).sqrt();
    if r < T::lit(0.5) {
        T::lit(2.0) * r.atanh()
    } else {
        ((T::one() + r) * (T::one() + r) / one_minus_r2).ln()
    }
}

/// `|z|^2 |w|^2 - |<z,w>|^2` as a sum of squared 2x2 minors.
fn lagrange_defect<T: Real>(z: &P<T>, w: &P<T>) -> T {
    let mut acc = T::zero();
    for i in 0..z.dim() {
        for j in i + 1..z.dim() {
            acc = acc + (z[i] * w[j] - z[j] * w[i]).norm_sqr();
        }
    }
    acc
}

/// Kobayashi distance of `B^q`, normalized so that `k(0, t) = log((1+t)/(1-t))`.
pub fn kobayashi_ball<T: Real>(z: &P<T>, w: &P<T>) -> Result<T> {
    check_interior(z)?;
    check_interior(w)?;
    if z.dim() != w.dim() {
        return Err(HoloError::Precondition("dimension mismatch".into()));
    }
    let denom = (Complex::<T>::one() - z.inner(w)).norm_sqr();
    let num = (z - w).norm_sqr() - lagrange_defect(z, w);
    let r2 = (num / denom).min(T::one());
    let s = (T::one() - z.norm_sqr()) * (T::one() - w.norm_sqr()) / denom;
    Ok(dist_from_r(r2, s))
}

/// Defining function of the Siegel half-space, positive inside.
pub fn siegel_rho<T: Real>(w: &P<T>) -> T {
    w[0].im - w.tail_norm_sqr()
}

/// Kobayashi distance of `H^q`.
///
/// `u` is moved to `(i, 0)` by a Heisenberg translation and a dilation, and
/// the image of `w` is read off through the inverse Cayley transform.
pub fn kobayashi_siegel<T: Real>(u: &P<T>, w: &P<T>) -> Result<T> {
    let (ru, rw) = (siegel_rho(u), siegel_rho(w));
    if !(ru > T::zero()) || !(rw > T::zero()) || !u.is_finite() || !w.is_finite() {
        return Err(HoloError::OutOfDomain("point outside the Siegel half-space".into()));
    }
    if u == w {
        return Ok(T::zero());
    }
    let two = T::lit(2.0);
    let i = c::<T>(0.0, 1.0);
    let mut inner = Complex::<T>::zero();
    for j in 1..u.dim() {
        inner = inner + w[j] * u[j].conj();
    }
    let w1 = w[0] - Complex::new(u[0].re, T::zero()) - i * inner * two + i * u.tail_norm_sqr();
    let w1 = w1 / ru;
    let sq = ru.sqrt();
    let tail: T = (1..u.dim()).fold(T::zero(), |acc, j| acc + ((w[j] - u[j]) / sq).norm_sqr());
    let rho = rw / ru;
    let den = (w1 + i).norm_sqr();
    let r2 = (((w1 - i).norm_sqr() + T::lit(4.0) * tail) / den).min(T::one());
    let s = T::lit(4.0) * rho / den;
    Ok(dist_from_r(r2, s))
}

/// Affine automorphism of `H^q` sending `u` to `(i, 0)`, applied to `w`:
/// a Heisenberg translation followed by the dilation by `1 / rho(u)`.
pub fn siegel_recenter<T: Real>(u: &P<T>, w: &P<T>) -> P<T> {
    let two = T::lit(2.0);
    let i = c::<T>(0.0, 1.0);
    let ru = siegel_rho(u);
    let mut inner = Complex::<T>::zero();
    for j in 1..u.dim() {
        inner = inner + w[j] * u[j].conj();
    }
    let mut out = w.clone();
    out[0] = (w[0] - Complex::new(u[0].re, T::zero()) - i * inner * two + i * u.tail_norm_sqr()) / ru;
    let sq = ru.sqrt();
    for j in 1..u.dim() {
        out[j] = (w[j] - u[j]) / sq;
    }
    out
}

/// Inverse of [`siegel_recenter`]: sends `(i, 0)` back to `u`.
pub fn siegel_recenter_inverse<T: Real>(u: &P<T>, v: &P<T>) -> P<T> {
    let two = T::lit(2.0);
    let i = c::<T>(0.0, 1.0);
    let ru = siegel_rho(u);
    let sq = ru.sqrt();
    let mut out = v.clone();
    let mut inner = Complex::<T>::zero();
    for j in 1..u.dim() {
        out[j] = u[j] + v[j] * sq;
        inner = inner + out[j] * u[j].conj();
    }
    out[0] = v[0] * ru + Complex::new(u[0].re, T::zero()) + i * inner * two - i * u.tail_norm_sqr();
    out
}

/// Direction of the Cayley transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CayleyDirection {
    /// `B^q -> H^q`.
    Forward,
    /// `H^q -> B^q`.
    Inverse,
}

/// `C(z) = (i(1+z1)/(1-z1), z'/(1-z1))`.
pub fn cayley<T: Real>(z: &P<T>) -> Result<P<T>> {
    let d = Complex::<T>::one() - z[0];
    if d.norm() < T::lit(1e-12) {
        return Err(HoloError::Singular("z1 = 1 in the Cayley transform".into()));
    }
    let i = c::<T>(0.0, 1.0);
    let mut out = z.clone();
    out[0] = i * (Complex::<T>::one() + z[0]) / d;
    for j in 1..z.dim() {
        out[j] = z[j] / d;
    }
    Ok(out)
}

/// `C^{-1}(w) = ((w1-i)/(w1+i), 2i w'/(w1+i))`.
pub fn cayley_inverse<T: Real>(w: &P<T>) -> Result<P<T>> {
    let i = c::<T>(0.0, 1.0);
    let d = w[0] + i;
    if d.norm() < T::lit(1e-12) {
        return Err(HoloError::Singular("w1 = -i in the inverse Cayley transform".into()));
    }
    let mut out = w.clone();
    out[0] = (w[0] - i) / d;
    for j in 1..w.dim() {
        out[j] = i * w[j] * T::lit(2.0) / d;
    }
    Ok(out)
}

pub fn cayley_pair<T: Real>(direction: CayleyDirection, z: &P<T>) -> Result<P<T>> {
    match direction {
        CayleyDirection::Forward => cayley(z),
        CayleyDirection::Inverse => cayley_inverse(z),
    }
}

/// Square complex matrix in row-major order, used for the unitary part of
/// ball automorphisms.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary<T: Real> {
    pub n: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> Unitary<T> {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![Complex::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = Complex::one();
        }
        Self { n, data }
    }

    /// Diagonal unitary `diag(e^{i t_j})`.
    pub fn diagonal(angles: &[f64]) -> Self {
        let mut u = Self::identity(angles.len());
        for (j, &t) in angles.iter().enumerate() {
            u.data[j * u.n + j] = Complex::new(T::lit(t.cos()), T::lit(t.sin()));
        }
        u
    }

    pub fn get(&self, i: usize, j: usize) -> Complex<T> {
        self.data[i * self.n + j]
    }

    pub fn apply(&self, z: &P<T>) -> P<T> {
        P::new((0..self.n).map(|i| (0..self.n).fold(Complex::zero(), |a, j| a + self.get(i, j) * z[j])).collect())
    }

    pub fn apply_adjoint(&self, z: &P<T>) -> P<T> {
        P::new((0..self.n).map(|i| (0..self.n).fold(Complex::zero(), |a, j| a + self.get(j, i).conj() * z[j])).collect())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.n)
    }

    /// Max deviation of `U^* U` from the identity.
    pub fn unitarity_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = Complex::<T>::zero();
                for k in 0..self.n {
                    s = s + self.get(k, i).conj() * self.get(k, j);
                }
                let target = if i == j { Complex::one() } else { Complex::zero() };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    /// Haar-like random unitary by Gram-Schmidt on a Gaussian matrix.
    pub fn random(n: usize, sampler: &mut SeededSampler) -> Self {
        let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
        while cols.len() < n {
            let mut v: Vec<C64> = (0..n).map(|_| C64::new(sampler.normal(), sampler.normal())).collect();
            for u in &cols {
                let p: C64 = v.iter().zip(u).map(|(a, b)| a * b.conj()).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= p * b;
                }
            }
            let nv = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if nv > 1e-8 {
                cols.push(v.into_iter().map(|a| a / nv).collect());
            }
        }
        let mut data = vec![Complex::zero(); n * n];
        for (j, col) in cols.iter().enumerate() {
            for (i, a) in col.iter().enumerate() {
                data[i * n + j] = c(a.re, a.im);
            }
        }
        Self { n, data }
    }
}

/// Automorphism `z -> U phi_a(z)` of `B^q`, where `phi_a` is the Möbius
/// involution exchanging `a` and `0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BallAutomorphism<T: Real> {
    pub a: P<T>,
    pub u: Unitary<T>,
}

/// The Möbius involution `phi_a`. Defined on the closed ball.
pub fn mobius<T: Real>(a: &P<T>, z: &P<T>) -> P<T> {
    let a2 = a.norm_sqr();
    if a2 == T::zero() {
        return -z;
    }
    let za = z.inner(a);
    let s = (T::one() - a2).sqrt();
    let denom = Complex::<T>::one() - za;
    let proj = a.scale_c(za / a2);
    let perp = z - &proj;
    let num = &(a - &proj) - &perp.scale(s);
    num.scale_c(Complex::<T>::one() / denom)
}

impl<T: Real> BallAutomorphism<T> {
    pub fn identity(q: usize) -> Self {
        Self { a: P::zeros(q), u: Unitary::identity(q) }
    }

    pub fn new(a: P<T>, u: Unitary<T>) -> Result<Self> {
        let n = a.norm();
        if !(n < T::one()) {
            return Err(HoloError::OutOfDomain(format!("Möbius center has norm {n}")));
        }
        Ok(Self { a, u })
    }

    pub fn apply(&self, z: &P<T>) -> P<T> {
        if self.a.norm_sqr() == T::zero() {
            return self.u.apply(z);
        }
        self.u.apply(&mobius(&self.a, z))
    }

    pub fn apply_inverse(&self, w: &P<T>) -> P<T> {
        let v = self.u.apply_adjoint(w);
        if self.a.norm_sqr() == T::zero() {
            return v;
        }
        mobius(&self.a, &v)
    }

    /// The image of `0`.
    pub fn image_of_origin(&self) -> P<T> {
        self.apply(&P::zeros(self.a.dim()))
    }

    /// Random automorphism with center of norm at most `max_norm`.
    pub fn random(q: usize, max_norm: f64, sampler: &mut SeededSampler) -> Self {
        let a = sampler.ball(max_norm);
        let a = P::new(a.coords.iter().map(|z| c(z.re, z.im)).collect());
        Self { a, u: Unitary::random(q, sampler) }
    }
}

impl Unitary<f64> {
    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Reads a unitary from a square matrix; no projection is applied.
    pub fn from_matrix(m: &CMatrix) -> Self {
        let n = m.nrows();
        Self { n, data: (0..n * n).map(|k| m[(k / n, k % n)]).collect() }
    }
}

impl BallAutomorphism<f64> {
    /// Inverse automorphism: `(U phi_a)^{-1} = U^* phi_{Ua}`.
    pub fn inverse(&self) -> Self {
        let um = self.u.to_matrix().adjoint();
        Self { a: self.u.apply(&self.a), u: Unitary::from_matrix(&um) }
    }

    /// `self ∘ other`, rebuilt in `U phi_a` form from the image of the origin
    /// and the differential there.
    pub fn compose(&self, other: &Self) -> Self {
        let f = |z: &P<f64>| self.apply(&other.apply(z));
        Self::from_map(f, self.a.dim())
    }

    /// Recovers `tau = phi_b ∘ V` from evaluations of an automorphism:
    /// `b = tau(0)` and `V` from `phi_b ∘ tau` on the basis directions.
    pub fn from_map<F: Fn(&P<f64>) -> P<f64>>(tau: F, q: usize) -> Self {
        let b = tau(&P::zeros(q));
        let h = 1e-4;
        let mut v = CMatrix::zeros(q, q);
        for j in 0..q {
            // phi_b ∘ tau is unitary, hence linear: read off columns.
            let e = P::basis(q, j).scale(h);
            let col = if b.norm_sqr() == 0.0 { tau(&e) } else { mobius(&b, &tau(&e)) };
            for i in 0..q {
                v[(i, j)] = col[i] / h;
            }
        }
        let v = crate::numerics::polar_unitary(&v);
        // phi_b(V z) = V phi_{V^* b}(z).
        let a = P::from_vector(&(v.adjoint() * b.to_vector()));
        let a = if b.norm_sqr() == 0.0 { P::zeros(q) } else { a };
        Self { a, u: Unitary::from_matrix(&v) }
    }

    /// Matrix of the automorphism acting on homogeneous coordinates
    /// `(z, 1)` of `C^{q+1}`.
    pub fn matrix(&self) -> CMatrix {
        let q = self.a.dim();
        let mut m = CMatrix::identity(q + 1, q + 1);
        let a2 = self.a.norm_sqr();
        if a2 > 0.0 {
            let s = (1.0 - a2).sqrt();
            let av = self.a.to_vector();
            let p = &av * av.adjoint() / C64::new(a2, 0.0);
            let qm = CMatrix::identity(q, q) - &p;
            let n = -(p + qm * C64::new(s, 0.0));
            m.view_mut((0, 0), (q, q)).copy_from(&n);
            for j in 0..q {
                m[(j, q)] = self.a[j];
                m[(q, j)] = -self.a[j].conj();
            }
        }
        let mut u = CMatrix::identity(q + 1, q + 1);
        u.view_mut((0, 0), (q, q)).copy_from(&self.u.to_matrix());
        u * m
    }

    /// Boundary fixed points, from the null eigenvectors of [`Self::matrix`].
    pub fn boundary_fixed_points(&self) -> Vec<P<f64>> {
        let q = self.a.dim();
        let m = self.matrix();
        let (qm, t) = m.schur().unpack();
        let n = q + 1;
        let mut found: Vec<P<f64>> = Vec::new();
        for i in 0..n {
            let mu = t[(i, i)];
            let mut y = nalgebra::DVector::<C64>::zeros(n);
            y[i] = C64::new(1.0, 0.0);
            for j in (0..i).rev() {
                let mut acc = C64::new(0.0, 0.0);
                for l in j + 1..=i {
                    acc += t[(j, l)] * y[l];
                }
                let mut d = t[(j, j)] - mu;
                if d.norm() < 1e-14 {
                    d = C64::new(1e-14, 0.0);
                }
                y[j] = -acc / d;
            }
            let v = &qm * y;
            if v[q].norm() < 1e-300 {
                continue;
            }
            let z = P::new((0..q).map(|j| v[j] / v[q]).collect());
            let r = z.norm();
            if (r - 1.0).abs() > 1e-6 {
                continue;
            }
            let z = z.scale(1.0 / r);
            if found.iter().all(|f| f.dist(&z) > 1e-6) {
                found.push(z);
            }
        }
        found
    }

    /// Dilation at a fixed boundary point: `h_{zeta,0}(tau(0))`.
    pub fn dilation_at(&self, zeta: &P<f64>) -> Result<f64> {
        horo_value(&P::zeros(zeta.dim()), zeta, &self.image_of_origin())
    }
}

/// Automorphism `sigma` with `sigma(a) = 0`, `sigma(0) = a`, `sigma^2 = id`.
///
/// `a = 0` returns the identity rather than `-id`.
pub fn mobius_to_origin<T: Real>(a: &P<T>) -> Result<BallAutomorphism<T>> {
    let q = a.dim();
    let n = a.norm();
    if !(n < T::one()) {
        return Err(HoloError::OutOfDomain(format!("Möbius center has norm {n}")));
    }
    Ok(BallAutomorphism { a: a.clone(), u: Unitary::identity(q) })
}

fn check_center<T: Real>(zeta: &P<T>) -> Result<()> {
    let n = zeta.norm().to_f64().unwrap_or(f64::NAN);
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(HoloError::InvalidCenter { norm: n });
    }
    Ok(())
}

/// Horosphere function of `B^q`: `|1 - <z,zeta>|^2 / (1 - |z|^2)` for pole 0,
/// rescaled by its value at `pole` otherwise.
pub fn horo_value<T: Real>(pole: &P<T>, center: &P<T>, z: &P<T>) -> Result<T> {
    check_center(center)?;
    check_interior(z)?;
    check_interior(pole)?;
    let h0 = |x: &P<T>| (Complex::<T>::one() - x.inner(center)).norm_sqr() / (T::one() - x.norm_sqr());
    Ok(h0(z) / h0(pole))
}

/// Koranyi function `exp((log h + k(p, z)) / 2)`; the Koranyi region of
/// amplitude `M` is `{ koranyi_value < M }`.
pub fn koranyi_value<T: Real>(pole: &P<T>, center: &P<T>, z: &P<T>) -> Result<T> {
    let h = horo_value(pole, center, z)?;
    let k = kobayashi_ball(pole, z)?;
    Ok(((h.ln() + k) / T::lit(2.0)).exp())
}

/// Horosphere function of `H^q` centered at infinity: `rho(p) / rho(w)`.
pub fn horo_siegel_infinity<T: Real>(pole: &P<T>, w: &P<T>) -> Result<T> {
    let (rp, rw) = (siegel_rho(pole), siegel_rho(w));
    if !(rp > T::zero()) || !(rw > T::zero()) {
        return Err(HoloError::OutOfDomain("point outside the Siegel half-space".into()));
    }
    Ok(rp / rw)
}

/// Limit of `g(d)` as `d -> 0` from samples at `d = 2^-j`, `j = 1..=levels`,
/// assuming an expansion in integer powers of `d`. Returns the twice
/// Richardson-extrapolated column.
pub fn richardson_halving<F: FnMut(f64) -> f64>(mut g: F, levels: usize) -> Vec<f64> {
    let base: Vec<f64> = (1..=levels).map(|j| g(0.5f64.powi(j as i32))).collect();
    richardson_columns(&base)
}

/// Second Richardson column of samples taken at halving step sizes.
pub fn richardson_columns(base: &[f64]) -> Vec<f64> {
    let r1: Vec<f64> = base.windows(2).map(|w| 2.0 * w[1] - w[0]).collect();
    r1.windows(2).map(|w| (4.0 * w[1] - w[0]) / 3.0).collect()
}

/// Horosphere function from its intrinsic definition as the radial limit of
/// `k(z, w) - k(p, w)` with `w -> zeta` along the radius.
pub fn horo_value_intrinsic(pole: &P<f64>, center: &P<f64>, z: &P<f64>) -> Result<f64> {
    check_center(center)?;
    let mut err = None;
    let col = richardson_halving(
        |d| {
            let w = center.scale(1.0 - d);
            match (kobayashi_ball(z, &w), kobayashi_ball(pole, &w)) {
                (Ok(a), Ok(b)) => a - b,
                (Err(e), _) | (_, Err(e)) => {
                    err = Some(e);
                    f64::NAN
                }
            }
        },
        16,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let rep = crate::numerics::detect_limit(&col, 4, 1e-9)?;
    Ok(rep.require("radial horosphere limit")?.exp())
}

/// Koranyi function built on [`horo_value_intrinsic`].
pub fn koranyi_value_intrinsic(pole: &P<f64>, center: &P<f64>, z: &P<f64>) -> Result<f64> {
    let h = horo_value_intrinsic(pole, center, z)?;
    Ok(((h.ln() + kobayashi_ball(pole, z)?) / 2.0).exp())
}

/// A horosphere `E(pole, center, radius)` of a domain.
#[derive(Clone, Debug)]
pub struct Horosphere {
    pub domain: DomainSpec,
    pub pole: P<f64>,
    pub center: P<f64>,
    pub radius: f64,
}

impl Horosphere {
    pub fn new(domain: DomainSpec, pole: P<f64>, center: P<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(HoloError::Precondition(format!("horosphere radius {radius} must be positive")));
        }
        Ok(Self { domain, pole, center, radius })
    }

    pub fn value(&self, z: &P<f64>) -> Result<f64> {
        self.domain.horo_value(&self.pole, &self.center, z)
    }

    pub fn contains(&self, z: &P<f64>) -> Result<bool> {
        Ok(self.value(z)? < self.radius)
    }
}

/// Shape of a geodesic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeodesicKind {
    Segment,
    Ray,
    Line,
}

/// Unit-speed geodesic `t -> phi_z(tanh(t/2) v)` through `z = phi_z(0)`.
#[derive(Clone, Debug)]
pub struct GeodesicRay<T: Real> {
    pub transport: BallAutomorphism<T>,
    /// Unit tangent direction at the base point, in the transported frame.
    pub direction: P<T>,
    /// Forward endpoint on the sphere.
    pub endpoint: P<T>,
    pub kind: GeodesicKind,
    /// Arc length of a segment.
    pub length: Option<T>,
}

impl<T: Real> GeodesicRay<T> {
    pub fn at(&self, t: T) -> P<T> {
        let s = (t / T::lit(2.0)).tanh();
        self.transport.apply(&self.direction.scale(s))
    }

    pub fn base(&self) -> P<T> {
        self.transport.image_of_origin()
    }

    /// The full geodesic line containing this geodesic.
    pub fn to_line(&self) -> Self {
        Self { kind: GeodesicKind::Line, length: None, ..self.clone() }
    }

    /// Parameter interval usable in double precision.
    pub fn domain_interval(&self) -> (T, T) {
        let cap = T::lit(MAX_ARC);
        match self.kind {
            GeodesicKind::Segment => (T::zero(), self.length.unwrap()),
            GeodesicKind::Ray => (T::zero(), cap),
            GeodesicKind::Line => (-cap, cap),
        }
    }
}

/// Largest arc length parameter kept clear of the boundary guard.
pub const MAX_ARC: f64 = 27.0;

/// Geodesic segment from `z` to an interior `w`, or ray from `z` to a
/// boundary point.
pub fn geodesic<T: Real>(z: &P<T>, w_or_center: &P<T>, kind: GeodesicKind) -> Result<GeodesicRay<T>> {
    check_interior(z)?;
    let transport = mobius_to_origin(z)?;
    match kind {
        GeodesicKind::Segment => {
            check_interior(w_or_center)?;
            let v = if z.norm_sqr() == T::zero() { w_or_center.clone() } else { mobius(z, w_or_center) };
            let r = v.norm();
            if r <= T::lit(1e-14) {
                return Err(HoloError::DegenerateGeodesic);
            }
            let direction = v.scale(T::one() / r);
            let endpoint = transport.apply(&direction);
            let length = kobayashi_ball(z, w_or_center)?;
            Ok(GeodesicRay { transport, direction, endpoint, kind, length: Some(length) })
        }
        GeodesicKind::Ray | GeodesicKind::Line => {
            check_center(w_or_center)?;
            let v = if z.norm_sqr() == T::zero() { w_or_center.clone() } else { mobius(z, w_or_center) };
            let direction = v.scale(T::one() / v.norm());
            Ok(GeodesicRay { transport, direction, endpoint: w_or_center.clone(), kind, length: None })
        }
    }
}

/// Parameter and distance of the point of `gamma` nearest to `z`.
pub fn nearest_on_geodesic(gamma: &GeodesicRay<f64>, z: &P<f64>) -> Result<(f64, f64)> {
    let base = gamma.base();
    let d = kobayashi_ball(&base, z)?;
    let (lo, hi) = gamma.domain_interval();
    let reach = 2.0 * d + 1.0;
    let (a, b) = (lo.max(-reach), hi.min(reach));
    let (t, k) = golden_section_min(|t| kobayashi_ball(&gamma.at(t), z).unwrap_or(f64::INFINITY), a, b, 1e-12);
    // The endpoints are candidates when the minimum sits on the boundary.
    let mut best = (t, k);
    for e in [a, b] {
        if let Ok(ke) = kobayashi_ball(&gamma.at(e), z) {
            if ke < best.1 {
                best = (e, ke);
            }
        }
    }
    Ok(best)
}

/// Euclidean length of a geodesic segment from a polyline with `n` pieces.
pub fn euclidean_length(gamma: &GeodesicRay<f64>, n: usize) -> f64 {
    let (a, b) = gamma.domain_interval();
    let pts: Vec<P<f64>> = (0..=n).map(|i| gamma.at(a + (b - a) * i as f64 / n as f64)).collect();
    pts.windows(2).map(|w| w[0].dist(&w[1])).sum()
}

/// Empirical slimness of a geodesic triangle.
#[derive(Clone, Debug, Serialize)]
pub struct SlimnessReport {
    pub delta: f64,
    pub degenerate: bool,
    pub samples_per_side: usize,
}

/// Default number of samples per side.
pub const SLIM_SAMPLES: usize = 256;

/// Max over sampled side points of the distance to the union of the other
/// two sides.
pub fn slimness_delta(tri: [&P<f64>; 3], samples_per_side: usize) -> Result<SlimnessReport> {
    for v in tri {
        check_interior(v)?;
    }
    let mut sides = Vec::with_capacity(3);
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        match geodesic(tri[i], tri[j], GeodesicKind::Segment) {
            Ok(g) => sides.push(g),
            Err(HoloError::DegenerateGeodesic) => {
                return Ok(SlimnessReport { delta: 0.0, degenerate: true, samples_per_side });
            }
            Err(e) => return Err(e),
        }
    }
    let mut delta = 0.0f64;
    for s in 0..3 {
        let len = sides[s].length.unwrap();
        for i in 0..=samples_per_side {
            let x = sides[s].at(len * i as f64 / samples_per_side as f64);
            let mut d = f64::INFINITY;
            for o in (0..3).filter(|&o| o != s) {
                d = d.min(nearest_on_geodesic(&sides[o], &x)?.1);
            }
            delta = delta.max(d);
        }
    }
    let degenerate = delta < 1e-6;
    Ok(SlimnessReport { delta, degenerate, samples_per_side })
}

/// Result of the nearest-point inequality check on a geodesic line.
#[derive(Clone, Debug, Serialize)]
pub struct FilippoReport {
    pub holds: bool,
    /// `d(x0,z) - d(x0,z_g) - d(z_g,z) + 6 delta`.
    pub slack: f64,
    pub nearest_param: f64,
    pub distance_to_line: f64,
}

/// Checks `d(x0,z) >= d(x0,z_g) + d(z_g,z) - 6 delta` with `z_g` the
/// point of the line nearest to `z`.
pub fn filippo_check(gamma: &GeodesicRay<f64>, x0: &P<f64>, z: &P<f64>, delta: f64) -> Result<FilippoReport> {
    if !(delta > 0.0) {
        return Err(HoloError::Precondition("delta must be positive".into()));
    }
    let line = gamma.to_line();
    let (_, off) = nearest_on_geodesic(&line, x0)?;
    if off > 1e-9 {
        return Err(HoloError::Precondition(format!("x0 lies at distance {off:e} from the line")));
    }
    let (t, dz) = nearest_on_geodesic(&line, z)?;
    let zg = line.at(t);
    let slack = kobayashi_ball(x0, z)? - kobayashi_ball(x0, &zg)? - dz + 6.0 * delta;
    Ok(FilippoReport { holds: slack >= 0.0, slack, nearest_param: t, distance_to_line: dz })
}

/// Membership counts for `A(g, M) ⊂ K(p, zeta, M) ⊂ A(g, M e^{6 delta})`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct InclusionReport {
    pub samples: usize,
    pub in_tube: usize,
    pub in_koranyi: usize,
    pub in_wide_tube: usize,
    /// Samples in the tube but not in the Koranyi region.
    pub first_violations: usize,
    /// Samples in the Koranyi region but not in the wide tube.
    pub second_violations: usize,
}

impl InclusionReport {
    pub fn violations(&self) -> usize {
        self.first_violations + self.second_violations
    }
}

/// Classifies samples against the tube around the ray from `pole` to
/// `center` and the Koranyi region of amplitude `m`.
pub fn region_a_vs_koranyi(pole: &P<f64>, center: &P<f64>, m: f64, delta: f64, samples: &[P<f64>]) -> Result<InclusionReport> {
    if !(m > 1.0) || !(delta > 0.0) {
        return Err(HoloError::Precondition("need M > 1 and delta > 0".into()));
    }
    let ray = geodesic(pole, center, GeodesicKind::Ray)?;
    let wide = m.ln() + 6.0 * delta;
    let mut rep = InclusionReport { samples: samples.len(), ..Default::default() };
    for z in samples {
        let (_, dz) = nearest_on_geodesic(&ray, z)?;
        let tube = dz < m.ln();
        let kor = koranyi_value(pole, center, z)? < m;
        let wide_tube = dz < wide;
        rep.in_tube += tube as usize;
        rep.in_koranyi += kor as usize;
        rep.in_wide_tube += wide_tube as usize;
        rep.first_violations += (tube && !kor) as usize;
        rep.second_violations += (kor && !wide_tube) as usize;
    }
    Ok(rep)
}

/// Kobayashi distance of the horosphere `E(0, e1, R)` of `B^q`.
pub fn horosphere_metric(r: f64, x: &P<f64>, y: &P<f64>) -> Result<f64> {
    let e1 = P::basis(x.dim(), 0);
    for p in [x, y] {
        let h = horo_value(&P::zeros(p.dim()), &e1, p)?;
        if !(h < r) {
            return Err(HoloError::NotInHorosphere { value: h, radius: r });
        }
    }
    let shift = |p: &P<f64>| -> Result<P<f64>> {
        let mut w = cayley(p)?;
        w[0] -= C64::new(0.0, 1.0 / r);
        Ok(w)
    };
    kobayashi_siegel(&shift(x)?, &shift(y)?)
}

/// Uniform sample of the horosphere `E(0, e1, R)` of `B^q`, drawn in Siegel
/// coordinates and mapped back.
pub fn sample_horosphere(r: f64, q: usize, sampler: &mut SeededSampler) -> P<f64> {
    loop {
        let tail: Vec<C64> = (1..q).map(|_| C64::new(sampler.normal(), sampler.normal())).collect();
        let t2: f64 = tail.iter().map(|c| c.norm_sqr()).sum();
        let height = (1.0 / r) * (1.0 + 20.0 * sampler.uniform().powi(2)) / sampler.uniform().max(1e-3);
        let re = 4.0 * sampler.normal();
        let mut coords = vec![C64::new(re, t2 + height)];
        coords.extend(tail);
        if let Ok(z) = cayley_inverse(&P::new(coords)) {
            if z.norm() < 1.0 - 1e-9 {
                if let Ok(h) = horo_value(&P::zeros(q), &P::basis(q, 0), &z) {
                    if h < r {
                        return z;
                    }
                }
            }
        }
    }
}

/// Closed-form radius with `k_E <= k + eps` on `E(0, e1, R_eps)`:
/// `R_eps = R (1 - e^{-eps/2})`.
pub fn eqregion_radius_bound(r: f64, eps: f64) -> f64 {
    r * (1.0 - (-eps / 2.0).exp())
}

/// Result of the sampled search for `R_eps`.
#[derive(Clone, Debug, Serialize)]
pub struct EqRegionReport {
    pub radius: f64,
    pub pairs: usize,
    pub worst_excess: f64,
    pub closed_form: f64,
}

/// Bisection for the largest `R_eps <= R` such that all sampled pairs in
/// `E(0, e1, R_eps)` satisfy `k_E <= k_B + eps`.
pub fn eqregion_radius(r: f64, eps: f64, q: usize, pairs: usize, seed: u64) -> Result<EqRegionReport> {
    if !(r > 0.0) || !(eps > 0.0) {
        return Err(HoloError::Precondition("need R > 0 and eps > 0".into()));
    }
    let worst = |re: f64| -> Result<f64> {
        let mut s = SeededSampler::new(seed, q);
        let mut w = f64::NEG_INFINITY;
        for _ in 0..pairs {
            let x = sample_horosphere(re, q, &mut s);
            let y = sample_horosphere(re, q, &mut s);
            w = w.max(horosphere_metric(r, &x, &y)? - kobayashi_ball(&x, &y)?);
        }
        Ok(w)
    };
    let (mut lo, mut hi) = (0.0, r);
    if worst(r)? <= eps {
        lo = r;
    } else {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if worst(mid)? <= eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let radius = lo;
    let worst_excess = if radius > 0.0 { worst(radius)? } else { 0.0 };
    Ok(EqRegionReport { radius, pairs, worst_excess, closed_form: eqregion_radius_bound(r, eps) })
}

/// Outcome of [`gromov_suite`].
#[derive(Clone, Debug, Serialize)]
pub struct GromovSuiteReport {
    pub triangles: usize,
    pub samples_per_side: usize,
    /// Largest sampled slimness over the triangle set.
    pub delta_emp: f64,
    /// Nearest-point inequality checks with `delta_emp`, one per triangle.
    pub filippo_checks: usize,
    pub filippo_violations: usize,
    pub filippo_min_slack: f64,
    /// Koranyi amplitude of the inclusion chain.
    pub amplitude: f64,
    pub inclusion: InclusionReport,
}

/// Seeded Gromov diagnostics on `B^q`: `delta_emp` over `triangles` random
/// triangles, the nearest-point inequality on the line through two vertices
/// of each triangle seen from the third, and the tube/Koranyi inclusion
/// chain for the ray from `0` to `e1` over `points` samples.
pub fn gromov_suite(q: usize, triangles: usize, samples_per_side: usize, points: usize, amplitude: f64, seed: u64) -> Result<GromovSuiteReport> {
    if q == 0 || triangles == 0 || samples_per_side == 0 {
        return Err(HoloError::Precondition("need q, triangles and samples_per_side positive".into()));
    }
    let mut s = SeededSampler::new(seed, q);
    let tris: Vec<[P<f64>; 3]> = (0..triangles).map(|_| [s.ball(0.95), s.ball(0.95), s.ball(0.95)]).collect();
    let mut delta_emp = 0.0f64;
    for [a, b, c] in &tris {
        delta_emp = delta_emp.max(slimness_delta([a, b, c], samples_per_side)?.delta);
    }
    let delta = delta_emp.max(f64::MIN_POSITIVE);
    let (mut checks, mut violations, mut min_slack) = (0, 0, f64::INFINITY);
    for [a, b, c] in &tris {
        let line = match geodesic(a, b, GeodesicKind::Segment) {
            Ok(g) => g.to_line(),
            Err(HoloError::DegenerateGeodesic) => continue,
            Err(e) => return Err(e),
        };
        let r = filippo_check(&line, a, c, delta)?;
        checks += 1;
        violations += usize::from(!r.holds);
        min_slack = min_slack.min(r.slack);
    }
    let samples: Vec<P<f64>> = (0..points).map(|_| s.ball(1.0 - 1e-6)).collect();
    let inclusion = region_a_vs_koranyi(&P::zeros(q), &P::basis(q, 0), amplitude, delta, &samples)?;
    Ok(GromovSuiteReport {
        triangles,
        samples_per_side,
        delta_emp,
        filippo_checks: checks,
        filippo_violations: violations,
        filippo_min_slack: min_slack,
        amplitude,
        inclusion,
    })
}
