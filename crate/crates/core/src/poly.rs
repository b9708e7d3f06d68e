//! Sparse multivariate polynomials with real or complex coefficients.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use num_traits::{One, Zero};

pub type MultiIndex = Vec<u32>;

pub trait Coeff:
    Copy
    + Debug
    + PartialEq
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn magnitude(&self) -> f64;
}

impl Coeff for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Coeff for Complex64 {
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

pub fn total_degree(alpha: &[u32]) -> u32 {
    alpha.iter().sum()
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |a, i| a * (n - i) as f64 / (i + 1) as f64)
}

/// All multi-indices in `n` variables with total degree exactly `k`,
/// in lexicographic order.
pub fn indices_of_degree(n: usize, k: u32) -> Vec<MultiIndex> {
    fn rec(n: usize, k: u32, prefix: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == n {
            prefix.push(k);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=k).rev() {
            prefix.push(first);
            rec(n, k - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        if k == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(n, k, &mut Vec::with_capacity(n), &mut out);
    out
}

/// All multi-indices in `n` variables with total degree at most `k`.
pub fn indices_up_to(n: usize, k: u32) -> Vec<MultiIndex> {
    (0..=k).flat_map(|j| indices_of_degree(n, j)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T: Coeff> {
    nvars: usize,
    terms: BTreeMap<MultiIndex, T>,
}

pub type RealPoly = Poly<f64>;
pub type ComplexPoly = Poly<Complex64>;

impl<T: Coeff> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        Self::monomial(vec![0; nvars], c)
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut alpha = vec![0; nvars];
        alpha[i] = 1;
        Self::monomial(alpha, T::one())
    }

    pub fn monomial(alpha: MultiIndex, c: T) -> Self {
        let mut p = Self::zero(alpha.len());
        p.add_term(alpha, c);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (MultiIndex, T)>) -> Self {
        let mut p = Self::zero(nvars);
        for (a, c) in terms {
            assert_eq!(a.len(), nvars, "multi-index length");
            p.add_term(a, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &BTreeMap<MultiIndex, T> {
        &self.terms
    }

    pub fn coeff(&self, alpha: &[u32]) -> T {
        self.terms.get(alpha).copied().unwrap_or_else(T::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: T) {
        if c == T::zero() {
            return;
        }
        match self.terms.get_mut(&alpha) {
            Some(v) => {
                *v = *v + c;
                if *v == T::zero() {
                    self.terms.remove(&alpha);
                }
            }
            None => {
                self.terms.insert(alpha, c);
            }
        }
    }

    /// Maximum total degree of a nonzero term (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|a| total_degree(a)).max().unwrap_or(0)
    }

    /// Largest coefficient magnitude.
    pub fn sup_norm(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.magnitude()))
    }

    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.magnitude() > tol);
    }

    pub fn pruned(mut self, tol: f64) -> Self {
        self.prune(tol);
        self
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self::zero(self.nvars);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), *c * s);
        }
        out
    }

    pub fn map_coeffs<U: Coeff>(&self, f: impl Fn(T) -> U) -> Poly<U> {
        let mut out = Poly::zero(self.nvars);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), f(*c));
        }
        out
    }

    pub fn homogeneous_part(&self, k: u32) -> Self {
        Poly {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(a, _)| total_degree(a) == k)
                .map(|(a, c)| (a.clone(), *c))
                .collect(),
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.nvars);
        let mut acc = T::zero();
        for (a, c) in &self.terms {
            let mut m = *c;
            for (xi, &e) in x.iter().zip(a) {
                for _ in 0..e {
                    m = m * *xi;
                }
            }
            acc = acc + m;
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (a, c) in &self.terms {
            if a[i] > 0 {
                let mut b = a.clone();
                b[i] -= 1;
                out.add_term(b, *c * T::from_f64(a[i] as f64));
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(self.nvars, T::one());
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// p(x + a).
    pub fn shift(&self, a: &[T]) -> Self {
        let mut out = Self::zero(self.nvars);
        for (alpha, c) in &self.terms {
            // expand prod_i (x_i + a_i)^alpha_i
            let mut partial: Vec<(MultiIndex, T)> = vec![(vec![0; self.nvars], *c)];
            for (i, &e) in alpha.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut next = Vec::with_capacity(partial.len() * (e as usize + 1));
                for (idx, coef) in &partial {
                    for j in 0..=e {
                        let mut f = T::from_f64(binomial(e, j));
                        for _ in 0..(e - j) {
                            f = f * a[i];
                        }
                        let mut b = idx.clone();
                        b[i] = j;
                        next.push((b, *coef * f));
                    }
                }
                partial = next;
            }
            for (b, v) in partial {
                out.add_term(b, v);
            }
        }
        out
    }

    /// Linear change of variables: x_i = sum_j rows[i][j] z_j.
    /// The result is a polynomial in `rows[0].len()` variables.
    pub fn compose_linear(&self, rows: &[Vec<T>]) -> Self {
        assert_eq!(rows.len(), self.nvars);
        let m = rows.first().map_or(0, |r| r.len());
        let forms: Vec<Self> = rows
            .iter()
            .map(|r| {
                let mut f = Self::zero(m);
                for (j, &c) in r.iter().enumerate() {
                    let mut a = vec![0; m];
                    a[j] = 1;
                    f.add_term(a, c);
                }
                f
            })
            .collect();
        let maxdeg = self.degree();
        // cache powers of each linear form
        let mut powers: Vec<Vec<Self>> = Vec::with_capacity(self.nvars);
        for f in &forms {
            let mut ps = vec![Self::constant(m, T::one())];
            for k in 1..=maxdeg as usize {
                let next = &ps[k - 1] * f;
                ps.push(next);
            }
            powers.push(ps);
        }
        let mut out = Self::zero(m);
        for (alpha, c) in &self.terms {
            let mut term = Self::constant(m, *c);
            for (i, &e) in alpha.iter().enumerate() {
                if e > 0 {
                    term = &term * &powers[i][e as usize];
                }
            }
            out = &out + &term;
        }
        out
    }
}

impl<'a, T: Coeff> Add<&'a Poly<T>> for &'a Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (a, c) in &rhs.terms {
            out.add_term(a.clone(), *c);
        }
        out
    }
}

impl<'a, T: Coeff> Sub<&'a Poly<T>> for &'a Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (a, c) in &rhs.terms {
            out.add_term(a.clone(), -*c);
        }
        out
    }
}

impl<'a, T: Coeff> Mul<&'a Poly<T>> for &'a Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Poly::zero(self.nvars);
        for (a, c) in &self.terms {
            for (b, e) in &rhs.terms {
                let ab: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(ab, *c * *e);
            }
        }
        out
    }
}

impl<T: Coeff> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        self.scale(-T::one())
    }
}

impl RealPoly {
    pub fn to_complex(&self) -> ComplexPoly {
        self.map_coeffs(|c| Complex64::new(c, 0.0))
    }
}

/// Physicists' Hermite polynomial H_n as coefficients in ascending powers,
/// H_0 = 1, H_1 = 2u, H_{n+1} = 2u H_n - 2n H_{n-1}.
pub fn hermite_coeffs(n: u32) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 2.0];
    for k in 1..n {
        let mut next = vec![0.0; cur.len() + 1];
        for (i, &c) in cur.iter().enumerate() {
            next[i + 1] += 2.0 * c;
        }
        for (i, &c) in prev.iter().enumerate() {
            next[i] -= 2.0 * k as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// prod_j H_{gamma_j}(X_j) / sqrt(2^{gamma_j} gamma_j!): the polynomial part of
/// the normalized Hermite function h_gamma(X) = P(X) pi^{-d/4} e^{-|X|^2/2}.
pub fn normalized_hermite(gamma: &[u32]) -> ComplexPoly {
    let d = gamma.len();
    let mut p = ComplexPoly::constant(d, Complex64::new(1.0, 0.0));
    for (j, &g) in gamma.iter().enumerate() {
        let norm = (2f64.powi(g as i32) * factorial(g)).sqrt();
        let mut f = ComplexPoly::zero(d);
        for (k, c) in hermite_coeffs(g).into_iter().enumerate() {
            let mut a = vec![0; d];
            a[j] = k as u32;
            f.add_term(a, Complex64::new(c / norm, 0.0));
        }
        p = &p * &f;
    }
    p
}

/// Gaussian moment int X^alpha pi^{-d/2} e^{-|X|^2} dX.
pub fn gaussian_moment(alpha: &[u32]) -> f64 {
    alpha
        .iter()
        .map(|&a| {
            if a % 2 == 1 {
                0.0
            } else {
                // (a-1)!! / 2^{a/2}
                let mut v = 1.0;
                let mut k = a as i64 - 1;
                while k > 0 {
                    v *= k as f64;
                    k -= 2;
                }
                v / 2f64.powi(a as i32 / 2)
            }
        })
        .product()
}

/// || P pi^{-d/4} e^{-|X|^2/2} ||^2 computed exactly from Gaussian moments.
pub fn gaussian_weighted_norm_sq(p: &ComplexPoly) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, ca) in p.terms() {
        for (b, cb) in p.terms() {
            let ab: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
            let m = gaussian_moment(&ab);
            if m != 0.0 {
                acc += ca.conj() * cb * m;
            }
        }
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn hermite_recurrence() {
        assert_eq!(hermite_coeffs(2), vec![-2.0, 0.0, 4.0]);
        assert_eq!(hermite_coeffs(3), vec![0.0, -12.0, 0.0, 8.0]);
    }

    #[test]
    fn hermite_orthonormal() {
        for n in 0..5u32 {
            for m in 0..5u32 {
                let p = &normalized_hermite(&[n]) + &normalized_hermite(&[m]);
                let expect = if n == m { 4.0 } else { 2.0 };
                assert!((gaussian_weighted_norm_sq(&p) - expect).abs() < 1e-12, "{n} {m}");
            }
        }
    }

    #[test]
    fn shift_matches_eval() {
        let p = RealPoly::from_terms(2, vec![(vec![2, 1], 1.5), (vec![0, 3], -2.0), (vec![1, 0], 0.25)]);
        let a = [0.3, -1.2];
        let s = p.shift(&a);
        for x in [[0.1, 0.2], [-1.0, 0.5], [2.0, 2.0]] {
            let lhs = s.eval(&x);
            let rhs = p.eval(&[x[0] + a[0], x[1] + a[1]]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn indices_counts() {
        assert_eq!(indices_of_degree(2, 3).len(), 4);
        assert_eq!(indices_of_degree(4, 3).len(), 20);
        assert_eq!(indices_up_to(2, 2).len(), 6);
        assert_eq!(indices_of_degree(0, 0).len(), 1);
    }

    #[test]
    fn degree_and_sup_norm() {
        let p = ComplexPoly::from_terms(1, vec![(vec![3], c(-4.0)), (vec![1], c(1.0))]);
        assert_eq!(p.degree(), 3);
        assert_eq!(p.sup_norm(), 4.0);
        let z = &p - &p;
        assert!(z.is_zero());
        assert_eq!(z.degree(), 0);
    }

    proptest! {
        #[test]
        fn compose_linear_matches_eval(
            coeffs in proptest::collection::vec(-2.0f64..2.0, 6),
            m in proptest::collection::vec(-1.5f64..1.5, 4),
            z in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let p = RealPoly::from_terms(2, vec![
                (vec![0, 0], coeffs[0]), (vec![1, 0], coeffs[1]), (vec![0, 2], coeffs[2]),
                (vec![2, 1], coeffs[3]), (vec![1, 3], coeffs[4]), (vec![4, 0], coeffs[5]),
            ]);
            let rows = vec![vec![m[0], m[1]], vec![m[2], m[3]]];
            let q = p.compose_linear(&rows);
            let x = [m[0] * z[0] + m[1] * z[1], m[2] * z[0] + m[3] * z[1]];
            prop_assert!((q.eval(&z) - p.eval(&x)).abs() < 1e-10);
        }

        #[test]
        fn product_degree_adds(a in 0u32..4, b in 0u32..4) {
            let p = RealPoly::monomial(vec![a, 0], 1.0);
            let q = RealPoly::monomial(vec![0, b], 2.0);
            prop_assert_eq!((&p * &q).degree(), a + b);
        }
    }
}
