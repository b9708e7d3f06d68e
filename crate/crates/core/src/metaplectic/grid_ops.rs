//! Metaplectic operators on grids through generator factorization.
//!
//! Generators: L(S) = [[I,0],[S,I]] multiplies by e^{i x.Sx/(2 hbar)};
//! U(T) = [[I,T],[0,I]] multiplies the Fourier transform by
//! e^{-i hbar k.Tk/2}; Diag(G) = diag(G, G^{-T}) maps u to
//! |det G|^{-1/2} u(G^{-1} x) (interpolated). With B invertible,
//! kappa = L(D B^{-1}) Diag(B) J L(B^{-1} A) and J = U(I) L(-I) U(I);
//! otherwise kappa U(s) is factored instead.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, symmetrize, RMat, SymplecticMatrix};
use crate::states::grid::{GridWavefunction, Spectral};

const STENCIL: usize = 12;

pub fn apply_lower(u: &GridWavefunction, s: &RMat) -> GridWavefunction {
    let d = u.dim();
    let mut out = u.clone();
    let mut x = vec![0.0; d];
    for i in 0..out.len() {
        out.point_into(i, &mut x);
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += x[a] * s[(a, b)] * x[b];
            }
        }
        out.values[i] *= Complex64::from_polar(1.0, 0.5 * q / u.hbar);
    }
    out
}

pub fn apply_upper(u: &GridWavefunction, t: &RMat) -> GridWavefunction {
    let d = u.dim();
    let spec = Spectral::new(&u.axes);
    let mut out = u.clone();
    spec.forward(&mut out.values);
    let ks: Vec<Vec<f64>> = u.axes.iter().map(|a| a.wavenumbers()).collect();
    for i in 0..out.len() {
        let m = out.multi_index(i);
        let k: Vec<f64> = (0..d).map(|a| ks[a][m[a]]).collect();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += k[a] * t[(a, b)] * k[b];
            }
        }
        out.values[i] *= Complex64::from_polar(1.0, -0.5 * u.hbar * q);
    }
    spec.inverse(&mut out.values);
    out
}

fn stencil(s: f64, n: usize) -> Option<(i64, [f64; STENCIL])> {
    let start = s.floor() as i64 - (STENCIL as i64 / 2 - 1);
    if start + STENCIL as i64 <= 0 || start >= n as i64 {
        return None;
    }
    let mut w = [0.0; STENCIL];
    for j in 0..STENCIL {
        let xj = (start + j as i64) as f64;
        let mut c = 1.0;
        for m in 0..STENCIL {
            if m != j {
                let xm = (start + m as i64) as f64;
                c *= (s - xm) / (xj - xm);
            }
        }
        w[j] = c;
    }
    Some((start, w))
}

/// |det G|^{-1/2} u(G^{-1} x), tensor Lagrange interpolation, zero outside.
pub fn apply_linear(u: &GridWavefunction, g: &RMat) -> Result<GridWavefunction> {
    let d = u.dim();
    let det = g.determinant();
    if det.abs() < 1e-12 {
        return Err(Error::Factorization("singular scaling block".into()));
    }
    let ginv = g.clone().try_inverse().ok_or_else(|| Error::Factorization("singular scaling block".into()))?;
    let strides = u.strides();
    let mut out = u.clone();
    let mut x = vec![0.0; d];
    let total = STENCIL.pow(d as u32);
    let amp = det.abs().powf(-0.5);
    for i in 0..u.len() {
        u.point_into(i, &mut x);
        let mut stencils = Vec::with_capacity(d);
        let mut outside = false;
        for a in 0..d {
            let y: f64 = (0..d).map(|b| ginv[(a, b)] * x[b]).sum();
            let ax = &u.axes[a];
            match stencil((y - ax.origin) / ax.spacing, ax.count) {
                Some(st) => stencils.push(st),
                None => outside = true,
            }
        }
        if outside {
            out.values[i] = Complex64::new(0.0, 0.0);
            continue;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        'combo: for c in 0..total {
            let mut rem = c;
            let mut idx = 0usize;
            let mut w = 1.0;
            for a in 0..d {
                let j = rem % STENCIL;
                rem /= STENCIL;
                let k = stencils[a].0 + j as i64;
                if k < 0 || k >= u.axes[a].count as i64 {
                    continue 'combo;
                }
                idx += k as usize * strides[a];
                w *= stencils[a].1[j];
            }
            acc += u.values[idx] * w;
        }
        out.values[i] = acc * amp;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub enum Generator {
    Lower(RMat),
    Upper(RMat),
    Linear(RMat),
}

impl Generator {
    pub fn matrix(&self) -> SymplecticMatrix {
        match self {
            Generator::Lower(s) => SymplecticMatrix::lower(s),
            Generator::Upper(t) => SymplecticMatrix::upper(t),
            Generator::Linear(g) => SymplecticMatrix::scaling(g).expect("invertible scaling block"),
        }
    }

    pub fn apply(&self, u: &GridWavefunction) -> Result<GridWavefunction> {
        match self {
            Generator::Lower(s) => Ok(apply_lower(u, s)),
            Generator::Upper(t) => Ok(apply_upper(u, t)),
            Generator::Linear(g) => apply_linear(u, g),
        }
    }
}

fn min_singular(m: &RMat) -> f64 {
    m.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Generators in application order (first element acts first).
pub fn factorize(kappa: &SymplecticMatrix) -> Result<Vec<Generator>> {
    let d = kappa.dim();
    let id = RMat::identity(d, d);
    let (a, b, _, _) = kappa.blocks();
    let mut best = (0.0, min_singular(&b));
    for s in [0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 0.25, -0.25] {
        let sv = min_singular(&(&b + &a * s));
        if sv > 2.0 * best.1 {
            best = (s, sv);
        }
    }
    let (s, sv) = best;
    if sv < 1e-8 {
        return Err(Error::Factorization("no pivot makes the upper-right block invertible".into()));
    }
    let mut gens = Vec::new();
    let k = if s != 0.0 {
        gens.push(Generator::Upper(&id * -s));
        kappa.compose(&SymplecticMatrix::upper(&(&id * s)))
    } else {
        kappa.clone()
    };
    let (a, b, _, dd) = k.blocks();
    let binv = b.clone().try_inverse().ok_or_else(|| Error::Factorization("singular B".into()))?;
    let q = &binv * &a;
    let p = &dd * &binv;
    if max_abs(&(&q - q.transpose())) > 1e-8 * (1.0 + max_abs(&q)) || max_abs(&(&p - p.transpose())) > 1e-8 * (1.0 + max_abs(&p)) {
        return Err(Error::Factorization("input is not symplectic".into()));
    }
    gens.push(Generator::Lower(symmetrize(&q)));
    gens.push(Generator::Upper(id.clone()));
    gens.push(Generator::Lower(-&id));
    gens.push(Generator::Upper(id.clone()));
    gens.push(Generator::Linear(b));
    gens.push(Generator::Lower(symmetrize(&p)));
    Ok(gens)
}

/// mu(kappa) u up to a global phase.
pub fn metaplectic_apply_grid(kappa: &SymplecticMatrix, u: &GridWavefunction) -> Result<GridWavefunction> {
    if kappa.dim() != u.dim() {
        return Err(Error::AxisMismatch);
    }
    let d = kappa.dim();
    if max_abs(&(kappa.matrix() - RMat::identity(2 * d, 2 * d))) < 1e-14 {
        return Ok(u.clone());
    }
    let mut v = u.clone();
    for g in factorize(kappa)? {
        v = g.apply(&v)?;
    }
    v.check_boundary(1e-8)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_symplectic;
    use crate::metaplectic::transport::transport_excited;
    use crate::models::PhasePoint;
    use crate::oracle::dilation::dilation_exact;
    use crate::oracle::metrics::compare;
    use crate::states::grid::Axis;
    use crate::states::wavepacket::{apply_creation, eval_wavepacket, GaussianWavepacket};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn product(gens: &[Generator]) -> RMat {
        gens.iter().fold(RMat::identity(gens[0].matrix().matrix().nrows(), gens[0].matrix().matrix().nrows()), |acc, g| {
            g.matrix().matrix() * acc
        })
    }

    #[test]
    fn factorization_reproduces_kappa() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 1..=3 {
            for _ in 0..20 {
                let k = random_symplectic(d, &mut rng, 0.7);
                let gens = factorize(&k).unwrap();
                assert!(max_abs(&(product(&gens) - k.matrix())) < 1e-9 * (1.0 + k.norm().powi(2)));
            }
        }
        // B = 0 needs the pivot
        let k = SymplecticMatrix::scaling(&RMat::from_element(1, 1, 2.0)).unwrap();
        assert!(max_abs(&(product(&factorize(&k).unwrap()) - k.matrix())) < 1e-12);
    }

    #[test]
    fn fourier_identity_and_random_frames() {
        let hbar = 0.05;
        let axes = vec![Axis::centered(0.0, 0.025, 512)];
        let s = GaussianWavepacket::coherent(hbar, PhasePoint::new(vec![0.3], vec![-0.2])).unwrap();
        let u = eval_wavepacket(&s, &axes).unwrap();
        assert_eq!(metaplectic_apply_grid(&SymplecticMatrix::identity(1), &u).unwrap(), u);
        let j = SymplecticMatrix::j(1);
        let f = metaplectic_apply_grid(&j, &u).unwrap();
        let want = eval_wavepacket(&transport_excited(&j, &s).unwrap(), &axes).unwrap();
        assert!(1.0 - compare(&f, &want).unwrap().overlap_mag < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g0 = GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap();
        let u0 = eval_wavepacket(&g0, &axes).unwrap();
        for _ in 0..20 {
            let k = random_symplectic(1, &mut rng, 0.4);
            let v = metaplectic_apply_grid(&k, &u0).unwrap();
            let want = eval_wavepacket(&transport_excited(&k, &g0).unwrap(), &axes).unwrap();
            let m = compare(&v, &want).unwrap();
            assert!(1.0 - m.overlap_mag < 1e-6, "{m:?}");
            assert!((v.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn excited_states_and_dilation() {
        let hbar = 0.05;
        let axes = vec![Axis::centered(0.0, 0.02, 1024)];
        let mut s = GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..3 {
            s = apply_creation(0, &s).unwrap();
            let k = random_symplectic(1, &mut rng, 0.3);
            let u = eval_wavepacket(&s, &axes).unwrap();
            let v = metaplectic_apply_grid(&k, &u).unwrap();
            let want = eval_wavepacket(&transport_excited(&k, &s).unwrap(), &axes).unwrap();
            assert!(1.0 - compare(&v, &want).unwrap().overlap_mag < 1e-6);
        }
        let u = eval_wavepacket(&GaussianWavepacket::coherent(hbar, PhasePoint::origin(1)).unwrap(), &axes).unwrap();
        let t: f64 = 0.6;
        let k = SymplecticMatrix::scaling(&RMat::from_element(1, 1, t.exp())).unwrap();
        let m = compare(&metaplectic_apply_grid(&k, &u).unwrap(), &dilation_exact(&u, t).unwrap()).unwrap();
        assert!(1.0 - m.overlap_mag < 1e-6);
    }

    #[test]
    fn two_dimensional_agreement() {
        let hbar = 0.1;
        let axes = vec![Axis::centered(0.0, 0.05, 256), Axis::centered(0.0, 0.05, 256)];
        let g0 = GaussianWavepacket::coherent(hbar, PhasePoint::origin(2)).unwrap();
        let u0 = eval_wavepacket(&g0, &axes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..3 {
            let k = random_symplectic(2, &mut rng, 0.3);
            let v = metaplectic_apply_grid(&k, &u0).unwrap();
            let want = eval_wavepacket(&transport_excited(&k, &g0).unwrap(), &axes).unwrap();
            assert!(1.0 - compare(&v, &want).unwrap().overlap_mag < 1e-6);
        }
    }
}
