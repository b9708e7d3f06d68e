//! Exact propagator of the dilation symbol x.xi: u -> e^{-t d/2} u(e^{-t} x).

use num_complex::Complex64;

use crate::error::Result;
use crate::states::grid::GridWavefunction;

const STENCIL: usize = 12;

/// Lagrange interpolation of samples `f` (unit spacing, zero outside) at `s`.
pub(crate) fn lagrange(f: &[Complex64], s: f64) -> Complex64 {
    let n = f.len() as i64;
    let start = s.floor() as i64 - (STENCIL as i64 / 2 - 1);
    if start + STENCIL as i64 <= 0 || start >= n {
        return Complex64::new(0.0, 0.0);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..STENCIL as i64 {
        let idx = start + j;
        if idx < 0 || idx >= n {
            continue;
        }
        let xj = idx as f64;
        if (s - xj).abs() < 1e-14 {
            return f[idx as usize];
        }
        let mut w = 1.0;
        for m in 0..STENCIL as i64 {
            if m != j {
                let xm = (start + m) as f64;
                w *= (s - xm) / (xj - xm);
            }
        }
        acc += f[idx as usize] * w;
    }
    acc
}

pub fn dilation_exact(u0: &GridWavefunction, t: f64) -> Result<GridWavefunction> {
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let d = u0.dim();
    let scale = (-t).exp();
    let mut out = u0.clone();
    let strides = out.strides();
    for axis in 0..d {
        let a = out.axes[axis];
        let n = a.count;
        let stride = strides[axis];
        let outer = out.len() / (n * stride);
        let targets: Vec<f64> = (0..n).map(|i| (scale * a.point(i) - a.origin) / a.spacing).collect();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * n * stride + inner;
                for k in 0..n {
                    line[k] = out.values[base + k * stride];
                }
                for (k, &s) in targets.iter().enumerate() {
                    out.values[base + k * stride] = lagrange(&line, s);
                }
            }
        }
    }
    out.scale(Complex64::new((-0.5 * t * d as f64).exp(), 0.0));
    out.check_boundary(1e-8)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaplectic::frame::SiegelMatrix;
    use crate::models::PhasePoint;
    use crate::oracle::metrics::compare;
    use crate::states::grid::Axis;
    use crate::states::wavepacket::{eval_wavepacket, GaussianWavepacket};

    #[test]
    fn dilated_ground_state() {
        let hbar = 0.01;
        let axes = vec![Axis::centered(0.0, 0.01, 512)];
        let u0 = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap(), &axes).unwrap();
        assert_eq!(dilation_exact(&u0, 0.0).unwrap(), u0);
        for t in [0.4, -0.3] {
            let u = dilation_exact(&u0, t).unwrap();
            let g = SiegelMatrix::scaled_identity(1, (-2.0 * t as f64).exp());
            let want = eval_wavepacket(&GaussianWavepacket::squeezed(hbar, PhasePoint::origin(1), &g).unwrap(), &axes).unwrap();
            let m = compare(&u, &want).unwrap();
            assert!(1.0 - m.overlap_mag < 1e-6, "{m:?}");
            assert!((u.norm() - 1.0).abs() < 1e-6);
        }
        assert!(dilation_exact(&u0, 3.0).is_err());
    }
}
