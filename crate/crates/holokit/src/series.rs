//! Multivariate power series truncated at total degree 4.
//!
//! A series lives over a [`Variables`] set: named slots, each paired with its
//! complex conjugate slot (a real slot such as `Re w1` is its own partner).
//! Products and compositions drop every monomial above degree 4 and keep a
//! count of the dropped contributions.

use crate::{HoloError, Result, C64};
use num_traits::Zero;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

/// Total degree at which every series is truncated.
pub const TRUNCATION: usize = 4;

/// Named slots with their conjugation partners.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Variables {
    names: Vec<String>,
    partner: Vec<usize>,
}

impl Variables {
    /// Fails unless `partner` is an involution on the slots.
    pub fn new(names: Vec<String>, partner: Vec<usize>) -> Result<Arc<Self>> {
        let n = names.len();
        if partner.len() != n || partner.iter().enumerate().any(|(i, &p)| p >= n || partner[p] != i) {
            return Err(HoloError::Precondition("conjugation partners must form an involution".into()));
        }
        Ok(Arc::new(Self { names, partner }))
    }

    /// Real slots only.
    pub fn real(names: &[&str]) -> Arc<Self> {
        Arc::new(Self { names: names.iter().map(|s| s.to_string()).collect(), partner: (0..names.len()).collect() })
    }

    /// `stem1..stemq` followed by their conjugates.
    pub fn complex(q: usize, stem: &str) -> Arc<Self> {
        let mut names: Vec<String> = (1..=q).map(|j| format!("{stem}{j}")).collect();
        names.extend((1..=q).map(|j| format!("{stem}{j}bar")));
        let partner = (0..2 * q).map(|i| (i + q) % (2 * q)).collect();
        Arc::new(Self { names, partner })
    }

    /// `(Re w1, w2..wq, conj w2..conj wq)`: the variables of a graph
    /// `Im w1 = F(Re w1, w', conj w')`.
    pub fn graph(q: usize) -> Arc<Self> {
        let m = q - 1;
        let mut names = vec!["u".to_string()];
        names.extend((2..=q).map(|j| format!("w{j}")));
        names.extend((2..=q).map(|j| format!("w{j}bar")));
        let mut partner = vec![0];
        partner.extend((1..=m).map(|i| i + m));
        partner.extend(1..=m);
        Arc::new(Self { names, partner })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }
}

/// Exponent vector of a monomial.
pub type Exponent = Vec<u8>;

fn degree(e: &[u8]) -> usize {
    e.iter().map(|&k| k as usize).sum()
}

/// Power series over a [`Variables`] set, exact through degree 4.
#[derive(Clone, PartialEq)]
pub struct TruncatedSeries {
    vars: Arc<Variables>,
    terms: BTreeMap<Exponent, C64>,
    discarded: usize,
}

impl fmt::Debug for TruncatedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TruncatedSeries[")?;
        for (k, (e, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({:.3e}{:+.3e}i)", c.re, c.im)?;
            for (i, &p) in e.iter().enumerate().filter(|(_, &p)| p > 0) {
                write!(f, "*{}^{}", self.vars.name(i), p)?;
            }
        }
        write!(f, "]")
    }
}

/// One row of a serialized coefficient table.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesTerm {
    pub exponent: Exponent,
    pub re: f64,
    pub im: f64,
}

impl Serialize for TruncatedSeries {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Table<'a> {
            variables: &'a [String],
            terms: Vec<SeriesTerm>,
            discarded: usize,
        }
        Table { variables: &self.vars.names, terms: self.table(), discarded: self.discarded }.serialize(s)
    }
}

impl TruncatedSeries {
    pub fn zero(vars: &Arc<Variables>) -> Self {
        Self { vars: vars.clone(), terms: BTreeMap::new(), discarded: 0 }
    }

    pub fn constant(vars: &Arc<Variables>, c: C64) -> Self {
        Self::monomial(vars, vec![0; vars.len()], c)
    }

    /// The coordinate of slot `i`.
    pub fn var(vars: &Arc<Variables>, i: usize) -> Self {
        let mut e = vec![0; vars.len()];
        e[i] = 1;
        Self::monomial(vars, e, C64::new(1.0, 0.0))
    }

    /// `c x^e`; zero when the degree exceeds the truncation.
    pub fn monomial(vars: &Arc<Variables>, e: Exponent, c: C64) -> Self {
        assert_eq!(e.len(), vars.len(), "exponent length must match the variable count");
        let mut s = Self::zero(vars);
        if degree(&e) <= TRUNCATION {
            s.accumulate(e, c);
        } else {
            s.discarded = 1;
        }
        s
    }

    fn accumulate(&mut self, e: Exponent, c: C64) {
        let slot = self.terms.entry(e).or_insert_with(C64::zero);
        *slot += c;
    }

    fn cleaned(mut self) -> Self {
        self.terms.retain(|_, c| *c != C64::zero());
        self
    }

    fn check_vars(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.vars, &other.vars) || self.vars == other.vars,
            "series over incompatible variable sets"
        );
    }

    pub fn vars(&self) -> &Arc<Variables> {
        &self.vars
    }

    /// Number of monomial contributions dropped by truncation so far.
    pub fn discarded(&self) -> usize {
        self.discarded
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u8], C64)> {
        self.terms.iter().map(|(e, c)| (e.as_slice(), *c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, e: &[u8]) -> C64 {
        self.terms.get(e).copied().unwrap_or_else(C64::zero)
    }

    /// Coefficient of the monomial `prod_i x_i^{powers_i}` given as
    /// `(slot, power)` pairs.
    pub fn coeff_of(&self, powers: &[(usize, u8)]) -> C64 {
        let mut e = vec![0; self.vars.len()];
        for &(i, p) in powers {
            e[i] += p;
        }
        self.coefficient(&e)
    }

    pub fn table(&self) -> Vec<SeriesTerm> {
        self.terms.iter().map(|(e, c)| SeriesTerm { exponent: e.clone(), re: c.re, im: c.im }).collect()
    }

    /// Homogeneous part of degree `d`.
    pub fn homogeneous(&self, d: usize) -> Self {
        self.filtered(|e| degree(e) == d)
    }

    /// Terms of degree at least `d`.
    pub fn from_degree(&self, d: usize) -> Self {
        self.filtered(|e| degree(e) >= d)
    }

    fn filtered(&self, keep: impl Fn(&[u8]) -> bool) -> Self {
        Self {
            vars: self.vars.clone(),
            terms: self.terms.iter().filter(|(e, _)| keep(e)).map(|(e, c)| (e.clone(), *c)).collect(),
            discarded: self.discarded,
        }
    }

    /// Coefficients of the linear monomials, one per slot.
    pub fn linear_part(&self) -> Vec<C64> {
        (0..self.vars.len()).map(|i| self.coeff_of(&[(i, 1)])).collect()
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest coefficient difference.
    pub fn distance(&self, other: &Self) -> f64 {
        (self - other).max_abs()
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
            discarded: self.discarded,
        }
        .cleaned()
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(&self.vars, C64::new(1.0, 0.0));
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// Complex conjugate: conjugated coefficients, exponents moved to the
    /// partner slots.
    pub fn conj(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mut f = vec![0; e.len()];
                for (i, &p) in e.iter().enumerate() {
                    f[self.vars.partner(i)] = p;
                }
                (f, c.conj())
            })
            .collect();
        Self { vars: self.vars.clone(), terms, discarded: self.discarded }
    }

    /// Real-valued series have conjugate-symmetric coefficients.
    pub fn is_real(&self, tol: f64) -> bool {
        self.distance(&self.conj()) <= tol
    }

    /// `(s + conj s) / 2`.
    pub fn real_part(&self) -> Self {
        (self + &self.conj()).scale_re(0.5)
    }

    /// Whether every monomial avoids the conjugate slots of a complex
    /// variable set.
    pub fn is_holomorphic(&self) -> bool {
        self.terms.keys().all(|e| e.iter().enumerate().all(|(i, &p)| p == 0 || self.vars.partner(i) >= i))
    }

    /// Evaluates at slot values; conjugate slots must be given the
    /// conjugated values by the caller.
    pub fn eval(&self, x: &[C64]) -> C64 {
        assert_eq!(x.len(), self.vars.len(), "one value per slot");
        let mut pows: Vec<[C64; TRUNCATION + 1]> = Vec::with_capacity(x.len());
        for &v in x {
            let mut p = [C64::new(1.0, 0.0); TRUNCATION + 1];
            for k in 1..=TRUNCATION {
                p[k] = p[k - 1] * v;
            }
            pows.push(p);
        }
        self.terms
            .iter()
            .map(|(e, c)| e.iter().enumerate().fold(*c, |acc, (i, &p)| if p == 0 { acc } else { acc * pows[i][p as usize] }))
            .sum()
    }

    /// Partial derivative with respect to slot `i` (conjugate slots are
    /// independent, as in Wirtinger calculus).
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(&self.vars);
        out.discarded = self.discarded;
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut f = e.clone();
                f[i] -= 1;
                out.accumulate(f, c * e[i] as f64);
            }
        }
        out.cleaned()
    }

    fn by_degree(&self) -> Vec<Vec<(&Exponent, C64)>> {
        let mut b = vec![Vec::new(); TRUNCATION + 1];
        for (e, c) in &self.terms {
            b[degree(e)].push((e, *c));
        }
        b
    }

    fn product(&self, other: &Self) -> Self {
        self.check_vars(other);
        let (a, b) = (self.by_degree(), other.by_degree());
        let mut out = Self::zero(&self.vars);
        let mut dropped = 0;
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                if i + j > TRUNCATION {
                    dropped += ai.len() * bj.len();
                    continue;
                }
                for (ea, ca) in ai {
                    for (eb, cb) in bj {
                        let e: Exponent = ea.iter().zip(eb.iter()).map(|(x, y)| x + y).collect();
                        out.accumulate(e, ca * cb);
                    }
                }
            }
        }
        out.discarded = self.discarded + other.discarded + dropped;
        out.cleaned()
    }

    /// Substitutes `subs[i]` for slot `i`. Every substitution must vanish at
    /// the origin and carry a non-zero linear part.
    pub fn compose(&self, subs: &[TruncatedSeries]) -> Result<Self> {
        if subs.len() != self.vars.len() {
            return Err(HoloError::Precondition(format!(
                "composition needs {} substitutions, got {}",
                self.vars.len(),
                subs.len()
            )));
        }
        let Some(target) = subs.first().map(|s| s.vars.clone()) else {
            return Ok(self.clone());
        };
        for s in subs {
            s.check_vars(&subs[0]);
            if s.coefficient(&vec![0; target.len()]).norm() > 0.0 {
                return Err(HoloError::Precondition("substitutions must vanish at the origin".into()));
            }
            if s.homogeneous(1).is_empty() {
                return Err(HoloError::NonInvertibleSubstitution);
            }
        }
        let mut cache: BTreeMap<Exponent, TruncatedSeries> = BTreeMap::new();
        cache.insert(vec![0; self.vars.len()], Self::constant(&target, C64::new(1.0, 0.0)));
        let mut out = Self::zero(&target);
        let mut dropped = self.discarded;
        for (e, c) in &self.terms {
            if degree(e) > TRUNCATION {
                dropped += 1;
                continue;
            }
            let p = Self::power_product(&mut cache, subs, e);
            for (f, v) in &p.terms {
                out.accumulate(f.clone(), c * v);
            }
        }
        out.discarded = dropped + cache.values().map(|s| s.discarded).sum::<usize>();
        Ok(out.cleaned())
    }

    /// `prod_i subs[i]^{e_i}`, memoized over exponents.
    fn power_product(cache: &mut BTreeMap<Exponent, TruncatedSeries>, subs: &[TruncatedSeries], e: &[u8]) -> TruncatedSeries {
        if let Some(s) = cache.get(e) {
            return s.clone();
        }
        let i = e.iter().position(|&p| p > 0).expect("non-constant exponent");
        let mut prev = e.to_vec();
        prev[i] -= 1;
        let s = &Self::power_product(cache, subs, &prev) * &subs[i];
        cache.insert(e.to_vec(), s.clone());
        s
    }
}

impl Add for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn add(self, other: &TruncatedSeries) -> TruncatedSeries {
        self.check_vars(other);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.accumulate(e.clone(), *c);
        }
        out.discarded += other.discarded;
        out.cleaned()
    }
}

impl Sub for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn sub(self, other: &TruncatedSeries) -> TruncatedSeries {
        self + &(-other)
    }
}

impl Neg for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn neg(self) -> TruncatedSeries {
        self.scale_re(-1.0)
    }
}

impl Mul for &TruncatedSeries {
    type Output = TruncatedSeries;
    fn mul(self, other: &TruncatedSeries) -> TruncatedSeries {
        self.product(other)
    }
}

/// Holomorphic substitutions followed by their conjugates, in the slot
/// order of [`Variables::complex`].
pub fn with_conjugates(holo: &[TruncatedSeries]) -> Vec<TruncatedSeries> {
    holo.iter().cloned().chain(holo.iter().map(|s| s.conj())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conj_swaps_partner_slots() {
        let v = Variables::complex(2, "z");
        let s = &TruncatedSeries::var(&v, 0) * &TruncatedSeries::var(&v, 3).scale(C64::new(0.0, 2.0));
        let c = s.conj();
        assert_eq!(c.coeff_of(&[(2, 1), (1, 1)]), C64::new(0.0, -2.0));
        assert!((&s + &c).is_real(0.0));
    }

    #[test]
    fn truncation_counts_dropped_terms() {
        let v = Variables::real(&["x"]);
        let x = TruncatedSeries::var(&v, 0);
        let p = x.pow(5);
        assert!(p.is_empty());
        assert!(p.discarded() > 0);
    }
}
