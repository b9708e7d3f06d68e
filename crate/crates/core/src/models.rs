//! Polynomial Hamiltonian symbols p(x, xi).
//!
//! Phase-space variables are ordered (q_1..q_d, p_1..p_d). Within q and p the
//! central coordinates come first, then the transverse ones: for `nh2d` that
//! is (x, y, xi, eta).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::RMat;
use crate::poly::RealPoly;

pub const MAX_TAYLOR_ORDER: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(q.len(), p.len(), "q and p dimensions differ");
        PhasePoint { q, p }
    }

    pub fn origin(d: usize) -> Self {
        PhasePoint { q: vec![0.0; d], p: vec![0.0; d] }
    }

    pub fn from_z(z: &[f64]) -> Self {
        let d = z.len() / 2;
        PhasePoint { q: z[..d].to_vec(), p: z[d..2 * d].to_vec() }
    }

    pub fn to_z(&self) -> Vec<f64> {
        let mut z = self.q.clone();
        z.extend_from_slice(&self.p);
        z
    }

    pub fn d(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        self.to_z()
            .iter()
            .zip(other.to_z())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct ModelHamiltonian {
    pub name: String,
    pub d: usize,
    pub d_par: usize,
    pub d_perp: usize,
    pub params: BTreeMap<String, f64>,
    pub max_taylor_order: usize,
    pub is_quadratic: bool,
    pub has_invariant_k: bool,
    symbol: RealPoly,
    grad: Vec<RealPoly>,
    hess: Vec<Vec<RealPoly>>,
}

fn param(model: &str, params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<Vec<f64>> {
    for k in params.keys() {
        if !allowed.iter().any(|(a, _)| a == k) {
            return Err(Error::InvalidParameters {
                model: model.into(),
                reason: format!("unknown parameter `{k}`"),
            });
        }
    }
    allowed
        .iter()
        .map(|(k, default)| {
            let v = params.get(*k).copied().unwrap_or(*default);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidParameters { model: model.into(), reason: format!("`{k}` is not finite") })
            }
        })
        .collect()
}

fn dimension(model: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v <= 3.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidParameters { model: model.into(), reason: format!("d = {v} must be 1, 2 or 3") })
    }
}

fn mono(n: usize, pairs: &[(usize, u32)], c: f64) -> RealPoly {
    let mut a = vec![0; n];
    for &(i, e) in pairs {
        a[i] += e;
    }
    RealPoly::monomial(a, c)
}

/// Build a model from the catalog. Missing parameters take their defaults
/// (d = 1, beta = 0.1 quartic / 0.3 cubic, epsilon = 0.1); unknown keys are
/// rejected.
pub fn make_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelHamiltonian> {
    let (symbol, d, d_par) = match name {
        "harmonic" => {
            let d = dimension(name, param(name, params, &[("d", 1.0)])?[0])?;
            let n = 2 * d;
            let mut s = RealPoly::zero(n);
            for i in 0..n {
                s = &s + &mono(n, &[(i, 2)], 1.0);
            }
            (s, d, d)
        }
        "dilation" => {
            let d = dimension(name, param(name, params, &[("d", 1.0)])?[0])?;
            let n = 2 * d;
            let mut s = RealPoly::zero(n);
            for i in 0..d {
                s = &s + &mono(n, &[(i, 1), (d + i, 1)], 1.0);
            }
            (s, d, 0)
        }
        "anharmonic_quartic" => {
            let beta = param(name, params, &[("beta", 0.1)])?[0];
            let s = &(&mono(2, &[(1, 2)], 1.0) + &mono(2, &[(0, 2)], 1.0)) + &mono(2, &[(0, 4)], beta);
            (s, 1, 1)
        }
        "saddle_cubic" => {
            let beta = param(name, params, &[("beta", 0.3)])?[0];
            let s = &(&mono(2, &[(1, 2)], 1.0) + &mono(2, &[(0, 2)], -1.0)) + &mono(2, &[(0, 3)], beta);
            (s, 1, 0)
        }
        "nh2d" => {
            let eps = param(name, params, &[("epsilon", 0.1)])?[0];
            // (x, y, xi, eta) = indices (0, 1, 2, 3)
            let terms = [
                mono(4, &[(2, 2)], 1.0),
                mono(4, &[(3, 2)], 1.0),
                mono(4, &[(0, 2)], 1.0),
                mono(4, &[(1, 2)], -1.0),
                mono(4, &[(0, 1), (1, 2)], eps),
            ];
            let s = terms.iter().fold(RealPoly::zero(4), |a, t| &a + t);
            (s, 2, 1)
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    let mut stored = BTreeMap::new();
    for (k, v) in params {
        stored.insert(k.clone(), *v);
    }
    Ok(ModelHamiltonian::from_symbol(name, symbol, d, d_par, stored))
}

impl ModelHamiltonian {
    pub fn from_symbol(name: &str, symbol: RealPoly, d: usize, d_par: usize, params: BTreeMap<String, f64>) -> Self {
        assert_eq!(symbol.nvars(), 2 * d);
        let grad: Vec<RealPoly> = (0..2 * d).map(|i| symbol.derivative(i)).collect();
        let hess = grad.iter().map(|g| (0..2 * d).map(|j| g.derivative(j)).collect()).collect();
        let mut h = ModelHamiltonian {
            name: name.to_string(),
            d,
            d_par,
            d_perp: d - d_par,
            params,
            max_taylor_order: MAX_TAYLOR_ORDER,
            is_quadratic: symbol.degree() <= 2,
            has_invariant_k: false,
            symbol,
            grad,
            hess,
        };
        h.has_invariant_k = h.compute_invariant_k();
        h
    }

    /// Same symbol with a different central/transverse split.
    pub fn with_split(&self, d_par: usize) -> Result<Self> {
        if d_par > self.d {
            return Err(Error::invalid(format!("d_par = {d_par} exceeds d = {}", self.d)));
        }
        Ok(ModelHamiltonian::from_symbol(&self.name, self.symbol.clone(), self.d, d_par, self.params.clone()))
    }

    fn compute_invariant_k(&self) -> bool {
        let d = self.d;
        let n = 2 * d;
        // substitution that zeroes the transverse variables
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let transverse = (i % d) >= self.d_par;
                (0..n).map(|j| if i == j && !transverse { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        (self.d_par..d).all(|j| {
            let ydot = self.grad[d + j].compose_linear(&rows).pruned(1e-14);
            let etadot = self.grad[j].compose_linear(&rows).pruned(1e-14);
            ydot.is_zero() && etadot.is_zero()
        })
    }

    pub fn symbol(&self) -> &RealPoly {
        &self.symbol
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.symbol.eval(z)
    }

    pub fn energy(&self, rho: &PhasePoint) -> f64 {
        self.eval(&rho.to_z())
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.eval(z)).collect()
    }

    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(z);
        }
    }

    pub fn hessian(&self, z: &[f64]) -> RMat {
        let n = 2 * self.d;
        RMat::from_fn(n, n, |i, j| self.hess[i][j].eval(z))
    }

    /// (dp/dxi, -dp/dx) at z.
    pub fn vector_field_z(&self, z: &[f64]) -> Vec<f64> {
        let g = self.gradient(z);
        let d = self.d;
        let mut v = vec![0.0; 2 * d];
        for i in 0..d {
            v[i] = g[d + i];
            v[d + i] = -g[i];
        }
        v
    }

    pub fn vector_field(&self, rho: &PhasePoint) -> Vec<f64> {
        self.vector_field_z(&rho.to_z())
    }

    /// Homogeneous degree-k part of z -> p(rho + z), i.e. (1/k!) D^k p(rho).
    pub fn taylor_tensor(&self, rho: &PhasePoint, k: usize) -> Result<RealPoly> {
        if k > self.max_taylor_order {
            return Err(Error::TaylorOrder { k, max: self.max_taylor_order });
        }
        Ok(self.symbol.shift(&rho.to_z()).homogeneous_part(k as u32))
    }

    /// All Taylor tensors of order `from..=to` at rho from a single shift.
    pub fn taylor_tensors(&self, z: &[f64], from: usize, to: usize) -> Result<Vec<RealPoly>> {
        if to > self.max_taylor_order {
            return Err(Error::TaylorOrder { k: to, max: self.max_taylor_order });
        }
        let shifted = self.symbol.shift(z);
        Ok((from..=to).map(|k| shifted.homogeneous_part(k as u32)).collect())
    }

    /// If p = |xi|^2 + V(x), return V as a polynomial in x.
    pub fn potential(&self) -> Option<RealPoly> {
        let d = self.d;
        let mut v = RealPoly::zero(d);
        for (a, &c) in self.symbol.terms() {
            let (qa, pa) = a.split_at(d);
            if pa.iter().all(|&e| e == 0) {
                v.add_term(qa.to_vec(), c);
            } else {
                let ok = qa.iter().all(|&e| e == 0)
                    && pa.iter().sum::<u32>() == 2
                    && pa.iter().any(|&e| e == 2)
                    && (c - 1.0).abs() < 1e-15;
                if !ok {
                    return None;
                }
            }
        }
        // every momentum must appear squared exactly once
        for i in 0..d {
            let mut a = vec![0; 2 * d];
            a[d + i] = 2;
            if (self.symbol.coeff(&a) - 1.0).abs() > 1e-15 {
                return None;
            }
        }
        Some(v)
    }

    pub fn is_kinetic_potential(&self) -> bool {
        self.potential().is_some()
    }

    /// Whether z lies on K = {y = 0, eta = 0} to tolerance.
    pub fn distance_to_k(&self, z: &[f64]) -> f64 {
        let d = self.d;
        (self.d_par..d).map(|j| z[j].abs().max(z[d + j].abs())).fold(0.0, f64::max)
    }
}

pub fn params_from(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(name: &str, pairs: &[(&str, f64)]) -> ModelHamiltonian {
        make_model(name, &params_from(pairs)).unwrap()
    }

    #[test]
    fn catalog_examples() {
        let dil = model("dilation", &[]);
        assert_eq!(dil.eval(&[2.0, 3.0]), 6.0);
        assert!(model("harmonic", &[]).is_quadratic);
        let nh = model("nh2d", &[("epsilon", 0.1)]);
        assert_eq!(nh.vector_field_z(&[1.0, 0.0, 0.0, 0.0]), vec![0.0, 0.0, -2.0, 0.0]);
        assert_eq!((nh.d_par, nh.d_perp), (1, 1));
        assert!(nh.has_invariant_k);
        let nh0 = model("nh2d", &[("epsilon", 0.0)]);
        assert_eq!(nh0.vector_field_z(&[0.0, 1.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0, 2.0]);
        assert_eq!(model("harmonic", &[]).vector_field_z(&[1.0, 0.0]), vec![0.0, -2.0]);
        assert_eq!(dil.vector_field_z(&[1.0, 1.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(make_model("morse", &BTreeMap::new()), Err(Error::UnknownModel(_))));
        assert!(make_model("harmonic", &params_from(&[("beta", 1.0)])).is_err());
        assert!(make_model("harmonic", &params_from(&[("d", 1.5)])).is_err());
    }

    #[test]
    fn taylor_examples() {
        let h = model("harmonic", &[("d", 2.0)]);
        assert!(h.taylor_tensor(&PhasePoint::new(vec![0.3, 1.0], vec![-2.0, 0.1]), 3).unwrap().is_zero());
        let a = model("anharmonic_quartic", &[("beta", 0.1)]);
        assert_eq!(a.taylor_tensor(&PhasePoint::origin(1), 4).unwrap().coeff(&[4, 0]), 0.1);
        let s = model("saddle_cubic", &[("beta", 1.0)]);
        let t2 = s.taylor_tensor(&PhasePoint::new(vec![1.0], vec![0.0]), 2).unwrap();
        assert!((t2.coeff(&[2, 0]) - 2.0).abs() < 1e-14);
        assert!(a.taylor_tensor(&PhasePoint::origin(1), 7).is_err());
    }

    #[test]
    fn kinetic_potential_detection() {
        assert!(model("anharmonic_quartic", &[]).is_kinetic_potential());
        assert!(model("nh2d", &[]).is_kinetic_potential());
        assert!(model("harmonic", &[("d", 3.0)]).is_kinetic_potential());
        assert!(!model("dilation", &[]).is_kinetic_potential());
        let v = model("saddle_cubic", &[("beta", 0.3)]).potential().unwrap();
        assert!((v.eval(&[2.0]) - (-4.0 + 0.3 * 8.0)).abs() < 1e-14);
    }

    #[test]
    fn quadratic_models_have_no_higher_tensors() {
        for m in [model("harmonic", &[("d", 2.0)]), model("dilation", &[("d", 3.0)])] {
            let rho = PhasePoint::new(vec![0.5; m.d], vec![-0.25; m.d]);
            for k in 3..=MAX_TAYLOR_ORDER {
                assert!(m.taylor_tensor(&rho, k).unwrap().is_zero());
            }
        }
    }

    fn all_models() -> Vec<ModelHamiltonian> {
        vec![
            model("harmonic", &[("d", 2.0)]),
            model("dilation", &[("d", 2.0)]),
            model("anharmonic_quartic", &[("beta", 0.1)]),
            model("saddle_cubic", &[("beta", 0.3)]),
            model("nh2d", &[("epsilon", 0.1)]),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradient_matches_finite_differences(seed in proptest::collection::vec(-2.0f64..2.0, 4)) {
            for m in all_models() {
                let z: Vec<f64> = seed.iter().take(2 * m.d).copied().collect();
                let g = m.gradient(&z);
                let h = 1e-3;
                for i in 0..z.len() {
                    let f = |s: f64| { let mut w = z.clone(); w[i] += s; m.eval(&w) };
                    let fd = (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
                    prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{} {}", m.name, i);
                }
                let hs = m.hessian(&z);
                for i in 0..z.len() {
                    for j in 0..z.len() {
                        let f = |s: f64| { let mut w = z.clone(); w[j] += s; m.gradient(&w)[i] };
                        let fd = (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
                        prop_assert!((fd - hs[(i, j)]).abs() <= 1e-6 * (1.0 + hs[(i, j)].abs()));
                    }
                }
            }
        }

        #[test]
        fn nh2d_k_is_invariant(x in -2.0f64..2.0, xi in -2.0f64..2.0, eps in -1.0f64..1.0) {
            let m = model("nh2d", &[("epsilon", eps)]);
            let v = m.vector_field_z(&[x, 0.0, xi, 0.0]);
            prop_assert!(v[1].abs() < 1e-12 && v[3].abs() < 1e-12);
        }

        #[test]
        fn taylor_expansion_reconstructs_symbol(z0 in proptest::collection::vec(-1.0f64..1.0, 4),
                                                dz in proptest::collection::vec(-0.5f64..0.5, 4)) {
            let m = model("nh2d", &[("epsilon", 0.3)]);
            let rho = PhasePoint::from_z(&z0);
            let mut total = 0.0;
            for k in 0..=MAX_TAYLOR_ORDER {
                total += m.taylor_tensor(&rho, k).unwrap().eval(&dz);
            }
            let shifted: Vec<f64> = z0.iter().zip(&dz).map(|(a, b)| a + b).collect();
            prop_assert!((total - m.eval(&shifted)).abs() < 1e-12);
        }
    }
}
