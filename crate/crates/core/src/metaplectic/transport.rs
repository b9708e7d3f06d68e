//! Exact transport of excited wavepackets by linear metaplectic operators.
//!
//! In the canonical frame of Gamma (M = Im(G)^{-1/2}) the creation operators
//! act on normal-form polynomials as P <- (2 Y_j P - d_j P) / sqrt(2). A state
//! is rewritten as Q(a^dagger) acting on the frame's ground state, the frame is
//! pushed forward by kappa (creation operators are covariant), and the result is
//! expanded back into normal form.

use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{c_inverse, CMat, SymplecticMatrix};
use crate::metaplectic::frame::HagedornFrame;
use crate::models::PhasePoint;
use crate::poly::{total_degree, ComplexPoly};
use crate::states::wavepacket::GaussianWavepacket;

fn raise(p: &ComplexPoly, j: usize) -> ComplexPoly {
    let d = p.nvars();
    let yj = ComplexPoly::var(d, j).scale(Complex64::new(2.0, 0.0));
    (&(&yj * p) - &p.derivative(j)).scale(Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0))
}

/// Q(a^dagger) 1 in normal form.
pub fn hermite_to_normal(q: &ComplexPoly) -> ComplexPoly {
    let d = q.nvars();
    let mut out = ComplexPoly::zero(d);
    for (alpha, c) in q.terms() {
        let mut p = ComplexPoly::constant(d, *c);
        for (j, &e) in alpha.iter().enumerate() {
            for _ in 0..e {
                p = raise(&p, j);
            }
        }
        out = &out + &p;
    }
    out.pruned(0.0)
}

/// Inverse of `hermite_to_normal` (triangular in the degree).
pub fn normal_to_hermite(p: &ComplexPoly) -> ComplexPoly {
    let d = p.nvars();
    let mut rest = p.clone();
    let mut q = ComplexPoly::zero(d);
    let scale = p.sup_norm().max(1e-300);
    while !rest.is_zero() {
        let top = rest.degree();
        let lead = rest.homogeneous_part(top);
        let f = std::f64::consts::SQRT_2.powi(-(top as i32));
        let mut chunk = ComplexPoly::zero(d);
        for (alpha, c) in lead.terms() {
            debug_assert_eq!(total_degree(alpha), top);
            chunk.add_term(alpha.clone(), *c * f);
        }
        rest = (&rest - &hermite_to_normal(&chunk)).pruned(1e-15 * scale);
        // the leading part cancels exactly; drop any rounding residue in it
        rest = ComplexPoly::from_terms(d, rest.terms().iter().filter(|(a, _)| total_degree(a) < top).map(|(a, c)| (a.clone(), *c)));
        q = &q + &chunk;
    }
    q
}

/// U with frame = canonical(Gamma) * U.
fn frame_unitary(f: &HagedornFrame) -> Result<CMat> {
    let canon = f.gamma()?.frame();
    Ok(c_inverse(&canon.m)? * &f.m)
}

/// Q(w) -> Q(U w) as a polynomial in w.
fn substitute(q: &ComplexPoly, u: &CMat) -> ComplexPoly {
    let d = q.nvars();
    let rows: Vec<Vec<Complex64>> = (0..d).map(|i| (0..d).map(|j| u[(i, j)]).collect()).collect();
    q.compose_linear(&rows)
}

/// Rewrite the normal-form polynomial of a state with frame `from` (a frame of
/// Gamma) in the Hermite basis of `from` itself.
pub fn normal_to_frame_basis(p: &ComplexPoly, from: &HagedornFrame) -> Result<ComplexPoly> {
    let u0 = frame_unitary(from)?;
    Ok(substitute(&normal_to_hermite(p), &u0))
}

/// Inverse of `normal_to_frame_basis`.
pub fn frame_basis_to_normal(q: &ComplexPoly, to: &HagedornFrame) -> Result<ComplexPoly> {
    let u1 = frame_unitary(to)?;
    let conj_t = u1.map(|z| z.conj()).transpose();
    Ok(hermite_to_normal(&substitute(q, &conj_t)))
}

/// mu(kappa) applied to the wavepacket. The centre moves to kappa z; the
/// global sign of the metaplectic double cover is not tracked.
pub fn transport_excited(kappa: &SymplecticMatrix, s: &GaussianWavepacket) -> Result<GaussianWavepacket> {
    let q = normal_to_frame_basis(&s.poly, &s.frame)?;
    let frame = s.frame.apply(kappa);
    let poly = frame_basis_to_normal(&q, &frame)?;
    let z = kappa.matrix() * nalgebra::DVector::from_vec(s.center.to_z());
    let center = PhasePoint::from_z(z.as_slice());
    let phase = s.phase + 0.5 * (s.frame.det_m().arg() - frame.det_m().arg());
    GaussianWavepacket::new(s.hbar, center, frame, poly, phase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_symplectic, RMat};
    use crate::oracle::metrics::compare;
    use crate::poly::indices_up_to;
    use crate::states::wavepacket::eval_wavepacket;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(rng: &mut ChaCha8Rng, d: usize, deg: u32) -> ComplexPoly {
        let mut p = ComplexPoly::zero(d);
        for a in indices_up_to(d, deg) {
            p.add_term(a, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        }
        p
    }

    #[test]
    fn hermite_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=3 {
            let p = random_poly(&mut rng, d, 4);
            let back = hermite_to_normal(&normal_to_hermite(&p));
            assert!((&back - &p).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn identity_and_dilation() {
        let s = GaussianWavepacket::coherent(0.1, PhasePoint::origin(1)).unwrap();
        let s1 = crate::states::wavepacket::apply_creation(0, &s).unwrap();
        let same = transport_excited(&SymplecticMatrix::identity(1), &s1).unwrap();
        assert!((&same.poly - &s1.poly).sup_norm() < 1e-12);
        let kap = SymplecticMatrix::scaling(&RMat::from_element(1, 1, 2.0)).unwrap();
        let t = transport_excited(&kap, &s1).unwrap();
        assert!((t.gamma().unwrap().matrix()[(0, 0)] - Complex64::new(0.0, 0.25)).norm() < 1e-12);
        // Q = X: same normal-form polynomial, modulo a unit phase
        let ratio = t.poly.coeff(&[1]) / s1.poly.coeff(&[1]);
        assert!((ratio.norm() - 1.0).abs() < 1e-10 && t.poly.coeff(&[0]).norm() < 1e-12);
    }

    #[test]
    fn degree_linearity_and_grid_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hbar = 0.05;
        for _ in 0..50 {
            let d = rng.gen_range(1..=2);
            let deg = rng.gen_range(0..=4);
            let kap = random_symplectic(d, &mut rng, 0.5);
            let mut p = random_poly(&mut rng, d, deg);
            let mut lead = vec![0; d];
            lead[0] = deg;
            p.add_term(lead, Complex64::new(1.0, 0.0));
            let s = GaussianWavepacket::new(hbar, PhasePoint::origin(d), HagedornFrame::standard(d), p.clone(), 0.0).unwrap();
            let t = transport_excited(&kap, &s).unwrap();
            assert_eq!(t.poly.degree(), deg);
            // superposition
            let p2 = random_poly(&mut rng, d, deg);
            let s2 = GaussianWavepacket { poly: p2.clone(), ..s.clone() };
            let sum = GaussianWavepacket { poly: &p + &p2, ..s.clone() };
            let lhs = transport_excited(&kap, &sum).unwrap().poly;
            let rhs = &t.poly + &transport_excited(&kap, &s2).unwrap().poly;
            assert!((&lhs - &rhs).sup_norm() < 1e-10 * (1.0 + lhs.sup_norm()));
            // norms are preserved
            assert!((t.norm() - s.norm()).abs() < 1e-9 * s.norm());
        }
        // a d = 1 excited state versus a direct evaluation check through
        // the exact dilation oracle
        let s = GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap();
        let s3 = (0..3).fold(s, |a, _| crate::states::wavepacket::apply_creation(0, &a).unwrap());
        let kap = SymplecticMatrix::scaling(&RMat::from_element(1, 1, 1.5)).unwrap();
        let t = transport_excited(&kap, &s3).unwrap();
        let axes = t.default_axes().unwrap();
        let u = eval_wavepacket(&s3, &axes).unwrap();
        let moved = crate::oracle::dilation::dilation_exact(&u, 1.5f64.ln()).unwrap();
        let m = compare(&moved, &eval_wavepacket(&t, &axes).unwrap()).unwrap();
        assert!(1.0 - m.overlap_mag < 1e-6, "{m:?}");
    }
}
