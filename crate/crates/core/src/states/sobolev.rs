//! Weighted Sobolev norm sup_{|a|+|b|<=K} ||x^a (hbar d)^b u||.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::poly::indices_up_to;
use crate::states::grid::{GridWavefunction, Spectral};

/// Fraction of spectral energy allowed in the outer sixth of each axis band.
pub const ALIASING_TOL: f64 = 1e-8;

pub fn spectral_tail(u: &GridWavefunction) -> f64 {
    let spec = Spectral::new(&u.axes);
    let mut w = u.values.clone();
    spec.forward(&mut w);
    let total: f64 = w.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let ks: Vec<Vec<f64>> = u.axes.iter().map(|a| a.wavenumbers()).collect();
    let kmax: Vec<f64> = u.axes.iter().map(|a| std::f64::consts::PI / a.spacing).collect();
    let mut tail = 0.0;
    for (idx, v) in w.iter().enumerate() {
        let m = u.multi_index(idx);
        if m.iter().enumerate().any(|(i, &j)| ks[i][j].abs() > kmax[i] * 5.0 / 6.0) {
            tail += v.norm_sqr();
        }
    }
    tail / total
}

pub fn weighted_sobolev_norm(u: &GridWavefunction, k: u32) -> Result<f64> {
    if k > 6 {
        return Err(Error::invalid("Sobolev order above 6"));
    }
    let tail = spectral_tail(u);
    if tail > ALIASING_TOL {
        return Err(Error::Aliasing(tail));
    }
    let d = u.dim();
    let spec = Spectral::new(&u.axes);
    let mut hat = u.values.clone();
    spec.forward(&mut hat);
    let ks: Vec<Vec<f64>> = u.axes.iter().map(|a| a.wavenumbers()).collect();
    let mut best: f64 = 0.0;
    let mut x = vec![0.0; d];
    for beta in indices_up_to(d, k) {
        let bsum: u32 = beta.iter().sum();
        let mut w = hat.clone();
        for (idx, v) in w.iter_mut().enumerate() {
            let m = u.multi_index(idx);
            let mut f = Complex64::new(1.0, 0.0);
            for i in 0..d {
                f *= (Complex64::new(0.0, u.hbar * ks[i][m[i]])).powu(beta[i]);
            }
            *v *= f;
        }
        spec.inverse(&mut w);
        for alpha in indices_up_to(d, k - bsum) {
            let mut acc = 0.0;
            for (idx, v) in w.iter().enumerate() {
                u.point_into(idx, &mut x);
                let mut f = 1.0;
                for i in 0..d {
                    f *= x[i].powi(alpha[i] as i32);
                }
                acc += (v * f).norm_sqr();
            }
            best = best.max((acc * u.cell_volume()).sqrt());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymplecticMatrix;
    use crate::metaplectic::frame::{siegel_action, SiegelMatrix};
    use crate::models::PhasePoint;
    use crate::oracle::slope::convergence_slope;
    use crate::states::grid::Axis;
    use crate::states::wavepacket::{eval_wavepacket, GaussianWavepacket};

    #[test]
    fn ground_state_values() {
        let s = GaussianWavepacket::coherent(1.0, PhasePoint::origin(1)).unwrap();
        let u = eval_wavepacket(&s, &[Axis::centered(0.0, 0.05, 512)]).unwrap();
        assert!((weighted_sobolev_norm(&u, 0).unwrap() - 1.0).abs() < 1e-8);
        assert!((weighted_sobolev_norm(&u, 1).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn squeezing_growth_bounded_by_power() {
        let k = 3;
        let mut pts = Vec::new();
        for lam in [2.0f64, 4.0, 8.0] {
            let kap = SymplecticMatrix::scaling(&nalgebra::DMatrix::from_element(1, 1, lam)).unwrap();
            let g = siegel_action(&kap, &SiegelMatrix::identity(1)).unwrap();
            let s = GaussianWavepacket::squeezed(1.0, PhasePoint::origin(1), &g).unwrap();
            let u = eval_wavepacket(&s, &[Axis::centered(0.0, 0.05, 4096)]).unwrap();
            pts.push((lam, weighted_sobolev_norm(&u, k).unwrap()));
        }
        let fit = convergence_slope(&pts).unwrap();
        assert!(fit.slope <= k as f64 + 0.1, "{}", fit.slope);
    }

    #[test]
    fn aliasing_is_detected() {
        let u = GridWavefunction::from_fn(1.0, vec![Axis::centered(0.0, 0.5, 64)], |x| {
            Complex64::from_polar((-x[0] * x[0] / 20.0).exp(), 6.0 * x[0])
        });
        assert!(matches!(weighted_sobolev_norm(&u, 1), Err(Error::Aliasing(_))));
    }
}
