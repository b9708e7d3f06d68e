//! Small dense linear-algebra helpers over nalgebra.
//!
//! Phase-space vectors are ordered (q_1..q_d, p_1..p_d) and
//! J = [[0, I], [-I, 0]], so Hamilton's equations read z' = J grad p.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;
pub type RVec = DVector<f64>;

pub const SYMPLECTIC_TOL: f64 = 1e-8;

pub fn j_matrix(d: usize) -> RMat {
    let mut j = RMat::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// Standard symplectic form sigma(z1, z2) = p1.q2 - q1.p2.
pub fn sigma(z1: &[f64], z2: &[f64]) -> f64 {
    let d = z1.len() / 2;
    (0..d).map(|i| z1[d + i] * z2[i] - z1[i] * z2[d + i]).sum()
}

pub fn max_abs(m: &RMat) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn max_abs_c(m: &CMat) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.norm()))
}

pub fn symplectic_residual(m: &RMat) -> f64 {
    let j = j_matrix(m.nrows() / 2);
    max_abs(&(m.transpose() * &j * m - j))
}

pub fn op_norm(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn op_norm_c(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(m: &CMat) -> RMat {
    m.map(|x| x.re)
}

pub fn imag_part(m: &CMat) -> RMat {
    m.map(|x| x.im)
}

pub fn symmetrize(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive definite matrix.
pub fn spd_sqrt(m: &RMat) -> Result<RMat> {
    spd_power(m, 0.5)
}

pub fn spd_inv_sqrt(m: &RMat) -> Result<RMat> {
    spd_power(m, -0.5)
}

pub fn spd_power(m: &RMat, power: f64) -> Result<RMat> {
    let eig = symmetrize(m).symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::Siegel(format!("matrix not positive definite (min eigenvalue {min:e})")));
    }
    let d = eig.eigenvalues.map(|l| l.powf(power));
    Ok(&eig.eigenvectors * RMat::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn min_eigenvalue_sym(m: &RMat) -> f64 {
    symmetrize(m).symmetric_eigen().eigenvalues.min()
}

pub fn c_inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Caustic(m.determinant().norm()))
}

/// A real 2d x 2d matrix with m^T J m = J.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticMatrix(RMat);

impl SymplecticMatrix {
    pub fn new(m: RMat) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() % 2 != 0 {
            return Err(Error::invalid("symplectic matrix must be square of even size"));
        }
        let r = symplectic_residual(&m);
        if r > SYMPLECTIC_TOL * (1.0 + max_abs(&m)).powi(2) {
            return Err(Error::invalid(format!("matrix is not symplectic (residual {r:e})")));
        }
        Ok(SymplecticMatrix(m))
    }

    pub fn new_unchecked(m: RMat) -> Self {
        SymplecticMatrix(m)
    }

    pub fn identity(d: usize) -> Self {
        SymplecticMatrix(RMat::identity(2 * d, 2 * d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn matrix(&self) -> &RMat {
        &self.0
    }

    pub fn into_matrix(self) -> RMat {
        self.0
    }

    pub fn blocks(&self) -> (RMat, RMat, RMat, RMat) {
        blocks(&self.0)
    }

    pub fn from_blocks(a: &RMat, b: &RMat, c: &RMat, d: &RMat) -> Result<Self> {
        Self::new(from_blocks(a, b, c, d))
    }

    /// self * other
    pub fn compose(&self, other: &SymplecticMatrix) -> SymplecticMatrix {
        SymplecticMatrix(&self.0 * &other.0)
    }

    /// Inverse via -J m^T J.
    pub fn inverse(&self) -> SymplecticMatrix {
        let j = j_matrix(self.dim());
        SymplecticMatrix(-(&j * self.0.transpose() * &j))
    }

    pub fn residual(&self) -> f64 {
        symplectic_residual(&self.0)
    }

    pub fn norm(&self) -> f64 {
        op_norm(&self.0)
    }

    pub fn reprojected(&self) -> SymplecticMatrix {
        SymplecticMatrix(reproject_symplectic(&self.0))
    }

    /// Diag(a) = [[a, 0], [0, a^{-T}]].
    pub fn scaling(a: &RMat) -> Result<Self> {
        let ainv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("singular scaling block"))?;
        let d = a.nrows();
        Ok(SymplecticMatrix(from_blocks(a, &RMat::zeros(d, d), &RMat::zeros(d, d), &ainv.transpose())))
    }

    /// [[I, 0], [s, I]]: multiplication by a quadratic phase.
    pub fn lower(s: &RMat) -> Self {
        let d = s.nrows();
        SymplecticMatrix(from_blocks(&RMat::identity(d, d), &RMat::zeros(d, d), &symmetrize(s), &RMat::identity(d, d)))
    }

    /// [[I, t], [0, I]]: free propagation.
    pub fn upper(t: &RMat) -> Self {
        let d = t.nrows();
        SymplecticMatrix(from_blocks(&RMat::identity(d, d), &symmetrize(t), &RMat::zeros(d, d), &RMat::identity(d, d)))
    }

    pub fn j(d: usize) -> Self {
        SymplecticMatrix(j_matrix(d))
    }
}

pub fn blocks(m: &RMat) -> (RMat, RMat, RMat, RMat) {
    let d = m.nrows() / 2;
    (
        m.view((0, 0), (d, d)).into_owned(),
        m.view((0, d), (d, d)).into_owned(),
        m.view((d, 0), (d, d)).into_owned(),
        m.view((d, d), (d, d)).into_owned(),
    )
}

pub fn from_blocks(a: &RMat, b: &RMat, c: &RMat, d: &RMat) -> RMat {
    let n = a.nrows();
    let mut m = RMat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n)).copy_from(b);
    m.view_mut((n, 0), (n, n)).copy_from(c);
    m.view_mut((n, n), (n, n)).copy_from(d);
    m
}

/// Pull a nearly symplectic matrix back onto Sp(2d): iterate
/// m <- m (I + S^{-1}(J - S)/2) with S = m^T J m, which cancels the
/// first-order defect each pass.
pub fn reproject_symplectic(m: &RMat) -> RMat {
    let d = m.nrows() / 2;
    let j = j_matrix(d);
    let mut k = m.clone();
    for _ in 0..3 {
        let s = k.transpose() * &j * &k;
        let defect = &j - &s;
        if max_abs(&defect) < 1e-15 {
            break;
        }
        let Some(sinv) = s.clone().try_inverse() else { break };
        let x = sinv * defect * 0.5;
        k = &k * (RMat::identity(2 * d, 2 * d) + x);
    }
    k
}

fn random_symmetric<R: Rng>(d: usize, rng: &mut R, scale: f64) -> RMat {
    let mut s = RMat::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = scale * (2.0 * rng.gen::<f64>() - 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Random symplectic matrix built as a product of generators
/// Diag(a) L(s) U(t) L(s2).
pub fn random_symplectic<R: Rng>(d: usize, rng: &mut R, scale: f64) -> SymplecticMatrix {
    let mut a = RMat::identity(d, d);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] += 0.5 * scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
        // keep the scaling block safely invertible
        a[(i, i)] += if a[(i, i)] >= 0.0 { 0.5 } else { -0.5 };
    }
    let diag = SymplecticMatrix::scaling(&a).unwrap_or_else(|_| SymplecticMatrix::identity(d));
    let l = SymplecticMatrix::lower(&random_symmetric(d, rng, scale));
    let u = SymplecticMatrix::upper(&random_symmetric(d, rng, scale));
    let l2 = SymplecticMatrix::lower(&random_symmetric(d, rng, scale));
    diag.compose(&l).compose(&u).compose(&l2)
}

/// Rotation by angle theta in every (q_i, p_i) plane: q -> cos q + sin p.
pub fn rotation(d: usize, theta: f64) -> SymplecticMatrix {
    let c = RMat::identity(d, d) * theta.cos();
    let s = RMat::identity(d, d) * theta.sin();
    SymplecticMatrix(from_blocks(&c, &s, &(-&s), &c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_are_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            for _ in 0..20 {
                let k = random_symplectic(d, &mut rng, 1.0);
                assert!(k.residual() < 1e-10 * (1.0 + k.norm()).powi(2));
                let prod = k.compose(&k.inverse());
                assert!(max_abs(&(prod.matrix() - RMat::identity(2 * d, 2 * d))) < 1e-8 * k.norm().powi(2));
            }
        }
    }

    #[test]
    fn reprojection_removes_defect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_symplectic(2, &mut rng, 0.7);
        let noisy = k.matrix() + RMat::from_fn(4, 4, |i, j| 1e-6 * ((i * 4 + j) as f64).sin());
        assert!(symplectic_residual(&noisy) > 1e-8);
        let fixed = reproject_symplectic(&noisy);
        assert!(symplectic_residual(&fixed) < 1e-13);
        assert!(max_abs(&(&fixed - &noisy)) < 1e-4);
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let m = RMat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = spd_sqrt(&m).unwrap();
        assert!(max_abs(&(&r * &r - &m)) < 1e-12);
        assert!(spd_sqrt(&RMat::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn sigma_is_antisymmetric() {
        let a = [1.0, 2.0, 0.5, -1.0];
        let b = [0.3, -0.7, 2.0, 1.5];
        assert!((sigma(&a, &b) + sigma(&b, &a)).abs() < 1e-15);
        // sigma(z1, z2) = z1 . J^T z2 ... check against the matrix
        let j = j_matrix(2);
        let v = RVec::from_column_slice(&b);
        let jb = &j * v;
        let direct: f64 = -(0..4).map(|i| a[i] * jb[i]).sum::<f64>();
        assert!((direct - sigma(&a, &b)).abs() < 1e-14);
    }
}
