//! Order-0 and order-N propagation of wavepackets.
//!
//! The state is kept as
//!   psi = e^{i chi} T(rho) Mu(F) Lambda_hbar sum_n hbar^{n/2} v_n,
//! where F = kappa (I, iI) is a Hagedorn frame, Lambda_hbar the hbar-rescaling
//! and Mu(F) sends the number state |k> to (a^dagger[F])^k / sqrt(k!) phi_0[F],
//! phi_0[F] = (pi hbar)^{-d/4} (det M)^{-1/2} e^{i x.G x / (2 hbar)} with the
//! branch of arg det M tracked continuously in `arg_det_m`.
//! Conjugating the Schrodinger equation by this frame gives, at hbar = 1,
//!   i d/dt v_n = sum_{k=3}^{n+2} Op^w(W_k(rho_t) o kappa_t) v_{n-k+2},
//! with W_k the degree-k Taylor part of the symbol. Weyl symbols are rewritten
//! in (alpha, conj alpha) with X = (alpha + conj alpha)/sqrt 2 and
//! Xi = -i(alpha - conj alpha)/sqrt 2, normal ordered by exp(1/2 d_alpha d_conj),
//! and applied on number states.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::dynamics::flow::FlowSystem;
use crate::error::{Error, Result};
use crate::integrate::{Integrator, System, Tolerance};
use crate::linalg::{c_inverse, CMat, RMat, SymplecticMatrix};
use crate::metaplectic::frame::HagedornFrame;
use crate::metaplectic::transport::{frame_basis_to_normal, hermite_to_normal, normal_to_frame_basis};
use crate::models::{ModelHamiltonian, PhasePoint};
use crate::poly::{factorial, indices_up_to, total_degree, ComplexPoly, MultiIndex, RealPoly};
use crate::states::grid::{Axis, GridWavefunction};
use crate::states::wavepacket::{eval_wavepacket, GaussianWavepacket};

pub const MAX_ORDER: usize = 4;
/// Hard caustic threshold on |det M| restricted to the central block.
pub const CENTRAL_CAUSTIC_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PropagationOptions {
    pub tol: Tolerance,
    pub box_bound: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions { tol: Tolerance::default(), box_bound: 1e3 }
    }
}

/// Number-basis coefficients over all multi-indices of degree <= `max_degree`.
#[derive(Clone, Debug)]
pub struct NumberBasis {
    pub d: usize,
    pub max_degree: u32,
    pub indices: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
}

impl NumberBasis {
    pub fn new(d: usize, max_degree: u32) -> Self {
        let indices = indices_up_to(d, max_degree);
        let lookup = indices.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        NumberBasis { d, max_degree, indices, lookup }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, k: &[u32]) -> Option<usize> {
        self.lookup.get(k).copied()
    }

    /// Q(w) = sum_k c_k w^k / sqrt(k!).
    pub fn to_hermite(&self, c: &[Complex64]) -> ComplexPoly {
        let mut q = ComplexPoly::zero(self.d);
        for (k, v) in self.indices.iter().zip(c) {
            if *v != Complex64::new(0.0, 0.0) {
                let kf: f64 = k.iter().map(|&e| factorial(e)).product();
                q.add_term(k.clone(), *v / kf.sqrt());
            }
        }
        q
    }

    pub fn from_hermite(&self, q: &ComplexPoly) -> Result<Vec<Complex64>> {
        let mut c = vec![Complex64::new(0.0, 0.0); self.len()];
        for (k, v) in q.terms() {
            let pos = self.position(k).ok_or_else(|| Error::invalid("polynomial degree exceeds the number basis"))?;
            let kf: f64 = k.iter().map(|&e| factorial(e)).product();
            c[pos] = *v * kf.sqrt();
        }
        Ok(c)
    }
}

/// Normal-ordered operator sum c (a^dagger)^m a^n.
#[derive(Clone, Debug, Default)]
pub struct LadderOperator {
    pub terms: Vec<(Vec<u32>, Vec<u32>, Complex64)>,
}

impl LadderOperator {
    /// Weyl quantization at hbar = 1 of the real symbol W(kappa Z).
    pub fn from_symbol(w: &RealPoly, kappa: &RMat) -> Self {
        let n2 = w.nvars();
        let d = n2 / 2;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut c = CMat::zeros(n2, n2);
        for j in 0..d {
            c[(j, j)] = Complex64::new(s, 0.0);
            c[(j, d + j)] = Complex64::new(s, 0.0);
            c[(d + j, j)] = Complex64::new(0.0, -s);
            c[(d + j, d + j)] = Complex64::new(0.0, s);
        }
        let rows_m = crate::linalg::to_complex(kappa) * c;
        let rows: Vec<Vec<Complex64>> = (0..n2).map(|i| (0..n2).map(|j| rows_m[(i, j)]).collect()).collect();
        let weyl = w.to_complex().compose_linear(&rows);
        // normal ordering: exp(1/2 sum_j d_{alpha_j} d_{conj alpha_j})
        let mut normal = weyl.clone();
        let mut term = weyl;
        let mut r = 1;
        loop {
            let mut next = ComplexPoly::zero(n2);
            for j in 0..d {
                next = &next + &term.derivative(j).derivative(d + j);
            }
            if next.is_zero() {
                break;
            }
            term = next.scale(Complex64::new(0.5 / r as f64, 0.0));
            normal = &normal + &term;
            r += 1;
        }
        let terms = normal
            .terms()
            .iter()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(a, c)| (a[d..].to_vec(), a[..d].to_vec(), *c))
            .collect();
        LadderOperator { terms }
    }

    /// out += factor * Op v; returns the largest coefficient that fell outside the basis.
    pub fn apply_add(&self, basis: &NumberBasis, v: &[Complex64], factor: Complex64, out: &mut [Complex64]) -> f64 {
        let mut lost: f64 = 0.0;
        let mut target = vec![0u32; basis.d];
        for (k, vk) in basis.indices.iter().zip(v) {
            if *vk == Complex64::new(0.0, 0.0) {
                continue;
            }
            'term: for (m, n, c) in &self.terms {
                let mut amp = 1.0;
                for j in 0..basis.d {
                    if n[j] > k[j] {
                        continue 'term;
                    }
                    let low = k[j] - n[j];
                    target[j] = low + m[j];
                    amp *= (factorial(k[j]) / factorial(low)).sqrt() * (factorial(target[j]) / factorial(low)).sqrt();
                }
                let val = factor * c * vk * amp;
                match basis.position(&target) {
                    Some(p) => out[p] += val,
                    None => lost = lost.max(val.norm()),
                }
            }
        }
        lost
    }
}

/// Expansion state; see the module documentation for the representation.
#[derive(Clone, Debug)]
pub struct ExpansionState {
    pub hbar: f64,
    pub order: usize,
    pub time: f64,
    pub center: PhasePoint,
    pub kappa: SymplecticMatrix,
    pub chi: f64,
    pub arg_det_m: f64,
    pub basis: NumberBasis,
    /// v_0 .. v_N in the number basis.
    pub coefficients: Vec<Vec<Complex64>>,
    /// Classical action int (xi . d_xi p - p) accumulated so far.
    pub action: f64,
    /// Order-0 data as a wavepacket.
    pub base: GaussianWavepacket,
    /// P^n (n = 1..N) as polynomials in the rescaled frame: v_n = P^n(X) Psi_0.
    pub corrections: Vec<ComplexPoly>,
}

fn kappa_from_frame(f: &HagedornFrame) -> Result<SymplecticMatrix> {
    let re = |m: &CMat| m.map(|z| z.re);
    let im = |m: &CMat| m.map(|z| z.im);
    SymplecticMatrix::from_blocks(&re(&f.m), &im(&f.m), &re(&f.n), &im(&f.n))
}

impl ExpansionState {
    pub fn from_wavepacket(s: &GaussianWavepacket, order: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::invalid(format!("order {order} above {MAX_ORDER}")));
        }
        let d = s.d();
        let q0 = normal_to_frame_basis(&s.poly, &s.frame)?;
        let basis = NumberBasis::new(d, s.poly.degree() + 3 * order as u32);
        let mut coefficients = vec![vec![Complex64::new(0.0, 0.0); basis.len()]; order + 1];
        coefficients[0] = basis.from_hermite(&q0)?;
        let arg = s.frame.det_m().arg();
        let mut st = ExpansionState {
            hbar: s.hbar,
            order,
            time: 0.0,
            center: s.center.clone(),
            kappa: kappa_from_frame(&s.frame)?,
            chi: s.phase + 0.5 * arg,
            arg_det_m: arg,
            basis,
            coefficients,
            action: 0.0,
            base: s.clone(),
            corrections: vec![],
        };
        st.refresh()?;
        Ok(st)
    }

    pub fn frame(&self) -> HagedornFrame {
        HagedornFrame::standard(self.center.d()).apply(&self.kappa)
    }

    fn packet(&self, q: &ComplexPoly) -> Result<GaussianWavepacket> {
        let frame = self.frame();
        let poly = frame_basis_to_normal(q, &frame)?;
        GaussianWavepacket::new(self.hbar, self.center.clone(), frame, poly, self.chi - 0.5 * self.arg_det_m)
    }

    /// Rebuild `base` and `corrections` from the coefficients.
    pub(crate) fn refresh(&mut self) -> Result<()> {
        self.base = self.packet(&self.basis.to_hermite(&self.coefficients[0]))?;
        self.corrections = self.coefficients[1..].iter().map(|c| hermite_to_normal(&self.basis.to_hermite(c))).collect();
        Ok(())
    }

    /// Full state sum_{n <= order} hbar^{n/2} v_n as one wavepacket.
    pub fn wavepacket_to(&self, order: usize) -> Result<GaussianWavepacket> {
        let mut total = vec![Complex64::new(0.0, 0.0); self.basis.len()];
        for (n, c) in self.coefficients.iter().enumerate().take(order.min(self.order) + 1) {
            let w = self.hbar.powf(0.5 * n as f64);
            for (t, v) in total.iter_mut().zip(c) {
                *t += v * w;
            }
        }
        self.packet(&self.basis.to_hermite(&total))
    }

    pub fn wavepacket(&self) -> Result<GaussianWavepacket> {
        self.wavepacket_to(self.order)
    }

    pub fn eval(&self, axes: &[Axis]) -> Result<GridWavefunction> {
        eval_wavepacket(&self.wavepacket()?, axes)
    }

    /// Degree of P^n for n = 0..N.
    pub fn degrees(&self) -> Vec<u32> {
        self.coefficients
            .iter()
            .map(|c| self.basis.indices.iter().zip(c).filter(|(_, v)| v.norm() > 0.0).map(|(k, _)| total_degree(k)).max().unwrap_or(0))
            .collect()
    }

    /// Sup norm of the coefficients of P^n (rescaled frame).
    pub fn correction_norm(&self, n: usize) -> f64 {
        if n == 0 {
            hermite_to_normal(&self.basis.to_hermite(&self.coefficients[0])).sup_norm()
        } else {
            self.corrections[n - 1].sup_norm()
        }
    }

    /// Replace the frame by the canonical frame of Gamma (M = Im(G)^{-1/2})
    /// and rotate the number-basis data accordingly.
    pub fn renormalize_frame(&mut self) -> Result<()> {
        let f = self.frame();
        let canon = f.gamma()?.frame();
        let u = c_inverse(&canon.m)? * &f.m;
        let ut = u.map(|z| z.conj()).transpose();
        let d = self.center.d();
        let rows: Vec<Vec<Complex64>> = (0..d).map(|i| (0..d).map(|j| ut[(i, j)]).collect()).collect();
        for c in self.coefficients.iter_mut() {
            let q = self.basis.to_hermite(c).compose_linear(&rows);
            *c = self.basis.from_hermite(&q)?;
        }
        self.chi -= 0.5 * self.arg_det_m;
        self.arg_det_m = 0.0;
        self.kappa = kappa_from_frame(&canon)?;
        self.refresh()
    }
}

struct Hierarchy<'a> {
    flow: FlowSystem<'a>,
    order: usize,
    basis: &'a NumberBasis,
    lost: std::cell::Cell<f64>,
}

impl Hierarchy<'_> {
    fn n(&self) -> usize {
        2 * self.flow.h.d
    }

    fn flow_dim(&self) -> usize {
        let n = self.n();
        n + n * n + 1
    }
}

impl System for Hierarchy<'_> {
    fn dim(&self) -> usize {
        self.flow_dim() + 2 * (self.order + 1) * self.basis.len()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let fd = self.flow_dim();
        self.flow.rhs(t, &y[..fd], &mut dy[..fd]);
        let b = self.basis.len();
        for v in dy[fd..].iter_mut() {
            *v = 0.0;
        }
        if self.order == 0 {
            return;
        }
        let n = self.n();
        let z = &y[..n];
        let kappa = RMat::from_column_slice(n, n, &y[n..n + n * n]);
        let tensors = match self.flow.h.taylor_tensors(z, 3, self.order + 2) {
            Ok(t) => t,
            Err(_) => return,
        };
        let ops: Vec<LadderOperator> = tensors.iter().map(|w| LadderOperator::from_symbol(w, &kappa)).collect();
        let coeffs = |m: usize| -> Vec<Complex64> {
            let off = fd + 2 * m * b;
            (0..b).map(|i| Complex64::new(y[off + 2 * i], y[off + 2 * i + 1])).collect()
        };
        let vs: Vec<Vec<Complex64>> = (0..self.order).map(coeffs).collect();
        let mut lost: f64 = self.lost.get();
        for nn in 1..=self.order {
            let mut acc = vec![Complex64::new(0.0, 0.0); b];
            for k in 3..=nn + 2 {
                let src = nn + 2 - k;
                if ops[k - 3].terms.is_empty() {
                    continue;
                }
                lost = lost.max(ops[k - 3].apply_add(self.basis, &vs[src], Complex64::new(0.0, -1.0), &mut acc));
            }
            let off = fd + 2 * nn * b;
            for (i, a) in acc.iter().enumerate() {
                dy[off + 2 * i] = a.re;
                dy[off + 2 * i + 1] = a.im;
            }
        }
        self.lost.set(lost);
    }
}

fn central_det(h: &ModelHamiltonian, kappa: &RMat) -> f64 {
    let d = h.d;
    let idx: Vec<usize> = (0..h.d_par).collect();
    if idx.is_empty() {
        return 1.0;
    }
    let m = CMat::from_fn(idx.len(), idx.len(), |i, j| Complex64::new(kappa[(idx[i], idx[j])], kappa[(idx[i], d + idx[j])]));
    m.determinant().norm()
}

/// Continue the hierarchy through the increasing `times` (absolute, >= state.time),
/// calling `observe` on a snapshot at each.
pub fn evolve_expansion(
    h: &ModelHamiltonian,
    state: &ExpansionState,
    times: &[f64],
    opts: &PropagationOptions,
    mut observe: impl FnMut(&ExpansionState) -> Result<()>,
) -> Result<ExpansionState> {
    let d = h.d;
    if state.center.d() != d {
        return Err(Error::invalid("state and model dimensions differ"));
    }
    if state.order > 0 && !h.is_quadratic && state.order + 2 > h.max_taylor_order {
        return Err(Error::TaylorOrder { k: state.order + 2, max: h.max_taylor_order });
    }
    let n = 2 * d;
    let sys = Hierarchy { flow: FlowSystem { h, variational: true }, order: state.order, basis: &state.basis, lost: Default::default() };
    let fd = sys.flow_dim();
    let b = state.basis.len();
    let mut y = vec![0.0; sys.dim()];
    y[..n].copy_from_slice(&state.center.to_z());
    y[n..n + n * n].copy_from_slice(state.kappa.matrix().as_slice());
    for (m, c) in state.coefficients.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            y[fd + 2 * m * b + 2 * i] = v.re;
            y[fd + 2 * m * b + 2 * i + 1] = v.im;
        }
    }
    let z0 = state.center.to_z();
    let qp = |z: &[f64]| -> f64 { (0..d).map(|i| z[i] * z[d + i]).sum() };
    let mut t = state.time;
    let mut arg = state.arg_det_m;
    let bound = opts.box_bound;
    let mut integ = Integrator::new(opts.tol.clone(), 0.01);
    let mut out = state.clone();
    for &target in times {
        if target < t - 1e-14 {
            return Err(Error::invalid("propagation times must increase"));
        }
        integ.advance(&sys, &mut t, &mut y, target, |tt, yy| {
            if yy[..n].iter().any(|v| !(v.abs() <= bound)) {
                return Err(Error::Escape { time: tt, bound });
            }
            let kap = RMat::from_column_slice(n, n, &yy[n..n + n * n]);
            let cd = central_det(h, &kap);
            if cd < CENTRAL_CAUSTIC_TOL {
                return Err(Error::Caustic(cd));
            }
            let m = CMat::from_fn(d, d, |i, j| Complex64::new(kap[(i, j)], kap[(i, d + j)]));
            let a = m.determinant().arg();
            let mut delta = a - arg.rem_euclid(2.0 * std::f64::consts::PI);
            delta = (delta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
            arg += delta;
            Ok(())
        })?;
        if sys.lost.get() > 1e-10 {
            return Err(Error::invalid(format!("degree law violated: coefficient {:e} beyond the basis", sys.lost.get())));
        }
        let z = &y[..n];
        let s = y[fd - 1];
        out.time = t;
        out.center = PhasePoint::from_z(z);
        let kap = crate::linalg::reproject_symplectic(&RMat::from_column_slice(n, n, &y[n..n + n * n]));
        out.kappa = SymplecticMatrix::new_unchecked(kap);
        out.arg_det_m = arg;
        out.action = state.action + s;
        out.chi = state.chi + (s + 0.5 * (qp(&z0) - qp(z))) / state.hbar;
        for m in 0..=state.order {
            let off = fd + 2 * m * b;
            out.coefficients[m] = (0..b).map(|i| Complex64::new(y[off + 2 * i], y[off + 2 * i + 1])).collect();
        }
        out.refresh()?;
        observe(&out)?;
    }
    Ok(out)
}

pub fn propagate_order_n_with(h: &ModelHamiltonian, s: &GaussianWavepacket, t: f64, order: usize, opts: &PropagationOptions) -> Result<ExpansionState> {
    if t < 0.0 {
        return Err(Error::invalid("negative propagation time"));
    }
    let st = ExpansionState::from_wavepacket(s, order)?;
    evolve_expansion(h, &st, &[t], opts, |_| Ok(()))
}

pub fn propagate_order_n(h: &ModelHamiltonian, s: &GaussianWavepacket, t: f64, order: usize) -> Result<ExpansionState> {
    propagate_order_n_with(h, s, t, order, &PropagationOptions::default())
}

pub fn propagate_order0(h: &ModelHamiltonian, s: &GaussianWavepacket, t: f64) -> Result<GaussianWavepacket> {
    Ok(propagate_order_n(h, s, t, 0)?.base)
}

/// `n_steps` segments of length `t0`, renormalizing the frame between
/// segments. `limit` (typically the wavepacket time window) rejects
/// longer requests.
pub fn segmented_propagate(
    h: &ModelHamiltonian,
    s: &GaussianWavepacket,
    n_steps: usize,
    t0: f64,
    order: usize,
    limit: Option<f64>,
) -> Result<ExpansionState> {
    if let Some(l) = limit {
        if n_steps as f64 * t0 > l {
            return Err(Error::Threshold(format!("{n_steps} x {t0} exceeds the time limit {l:.4}")));
        }
    }
    let mut st = ExpansionState::from_wavepacket(s, order)?;
    let opts = PropagationOptions::default();
    for k in 1..=n_steps {
        st = evolve_expansion(h, &st, &[k as f64 * t0], &opts, |_| Ok(()))?;
        st.renormalize_frame()?;
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaplectic::frame::SiegelMatrix;
    use crate::models::{make_model, params_from};
    use crate::oracle::metrics::compare;
    use crate::oracle::split_step::{split_step_evolve_with, SplitStepOptions};
    use crate::states::wavepacket::apply_creation;

    fn model(name: &str, pairs: &[(&str, f64)]) -> ModelHamiltonian {
        make_model(name, &params_from(pairs)).unwrap()
    }

    #[test]
    fn ladder_quantization_of_simple_symbols() {
        // X^2 + Xi^2 = 2 a^dagger a + 1 at hbar = 1
        let mut w = RealPoly::zero(2);
        w.add_term(vec![2, 0], 1.0);
        w.add_term(vec![0, 2], 1.0);
        let op = LadderOperator::from_symbol(&w, &RMat::identity(2, 2));
        let basis = NumberBasis::new(1, 4);
        for k in 0..4 {
            let mut v = vec![Complex64::new(0.0, 0.0); basis.len()];
            v[k] = Complex64::new(1.0, 0.0);
            let mut out = vec![Complex64::new(0.0, 0.0); basis.len()];
            op.apply_add(&basis, &v, Complex64::new(1.0, 0.0), &mut out);
            assert!((out[k] - Complex64::new(2.0 * k as f64 + 1.0, 0.0)).norm() < 1e-12);
        }
        // X Xi is Weyl-symmetric: (X Xi + Xi X)/2 annihilates nothing diagonal
        let mut w = RealPoly::zero(2);
        w.add_term(vec![1, 1], 1.0);
        let op = LadderOperator::from_symbol(&w, &RMat::identity(2, 2));
        assert!(op.terms.iter().all(|(m, n, _)| m != n));
    }

    #[test]
    fn harmonic_exact_with_phase() {
        let hbar = 0.01;
        let h = model("harmonic", &[]);
        let s = GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![0.3], vec![0.1])).unwrap();
        let axes = vec![Axis::centered(0.0, 0.005, 512)];
        let u0 = eval_wavepacket(&s, &axes).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let st = propagate_order_n(&h, &s, t, 2).unwrap();
            assert!(st.corrections.iter().all(|p| p.sup_norm() < 1e-12));
            let v = eval_wavepacket(&st.base, &axes).unwrap();
            let o = split_step_evolve_with(&h, &u0, t, &SplitStepOptions::default()).unwrap();
            let m = compare(&v, &o.state).unwrap();
            assert!(1.0 - m.overlap_mag < 1e-8, "{m:?}");
            assert!(m.l2_error < 1e-6, "phase mismatch {m:?}");
        }
    }

    #[test]
    fn dilation_gamma_and_excited_transport() {
        let h = model("dilation", &[]);
        let s = GaussianWavepacket::coherent(0.01, PhasePoint::origin(1)).unwrap();
        for t in [0.5, std::f64::consts::LN_2, 2.0] {
            let g = propagate_order0(&h, &s, t).unwrap().gamma().unwrap();
            assert!((g.matrix()[(0, 0)] - Complex64::new(0.0, (-2.0 * t as f64).exp())).norm() < 1e-8);
        }
        let s1 = apply_creation(0, &s).unwrap();
        let out = propagate_order0(&h, &s1, 0.3).unwrap();
        assert_eq!(out.poly.degree(), 1);
    }

    #[test]
    fn degree_law_and_first_correction_helps() {
        let hbar = 10f64.powf(-2.5);
        let h = model("anharmonic_quartic", &[("beta", 0.1)]);
        let s = GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![0.5], vec![0.0])).unwrap();
        let st = propagate_order_n(&h, &s, 1.0, 2).unwrap();
        let deg = st.degrees();
        assert!(deg[1] <= 3 && deg[2] <= 6, "{deg:?}");
        assert!(deg[1] > 0);
        let axes = vec![Axis::centered(0.0, hbar.sqrt() / 10.0, 1024)];
        let u0 = eval_wavepacket(&s, &axes).unwrap();
        let o = split_step_evolve_with(&h, &u0, 1.0, &SplitStepOptions::default()).unwrap();
        let e0 = compare(&eval_wavepacket(&st.wavepacket_to(0).unwrap(), &axes).unwrap(), &o.state).unwrap();
        let e1 = compare(&eval_wavepacket(&st.wavepacket_to(1).unwrap(), &axes).unwrap(), &o.state).unwrap();
        assert!(e1.phase_insensitive_error < 0.5 * e0.phase_insensitive_error, "{e0:?} {e1:?}");
    }

    #[test]
    fn segmented_matches_single_shot() {
        let hbar = 0.01;
        let h = model("harmonic", &[("d", 2.0)]);
        let g = SiegelMatrix::new(CMat::from_fn(2, 2, |i, j| Complex64::new(0.1, if i == j { 1.5 } else { 0.2 }))).unwrap();
        let s = GaussianWavepacket::squeezed(hbar, PhasePoint::new(vec![0.2, -0.1], vec![0.0, 0.3]), &g).unwrap();
        let single = propagate_order_n(&h, &s, 1.2, 1).unwrap().wavepacket().unwrap();
        let seg = segmented_propagate(&h, &s, 4, 0.3, 1, None).unwrap().wavepacket().unwrap();
        let axes = single.default_axes().unwrap();
        let m = compare(&eval_wavepacket(&single, &axes).unwrap(), &eval_wavepacket(&seg, &axes).unwrap()).unwrap();
        assert!(m.l2_error < 1e-8, "{m:?}");
        assert!(segmented_propagate(&h, &s, 4, 0.3, 1, Some(1.0)).is_err());
    }

    #[test]
    fn escape_and_order_limits() {
        let h = model("saddle_cubic", &[("beta", 0.3)]);
        let s = GaussianWavepacket::coherent(0.01, PhasePoint::new(vec![1.0], vec![1.0])).unwrap();
        assert!(matches!(propagate_order0(&h, &s, 50.0), Err(Error::Escape { .. })));
        assert!(propagate_order_n(&h, &s, 0.1, 5).is_err());
    }
}
