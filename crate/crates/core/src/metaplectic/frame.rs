//! Siegel matrices and Hagedorn frames.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{c_inverse, imag_part, max_abs_c, min_eigenvalue_sym, spd_inv_sqrt, to_complex, CMat, RMat, SymplecticMatrix};

pub const CAUSTIC_TOL: f64 = 1e-12;

/// Complex symmetric Gamma with Im Gamma positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct SiegelMatrix(CMat);

impl SiegelMatrix {
    pub fn new(gamma: CMat) -> Result<Self> {
        let asym = max_abs_c(&(&gamma - gamma.transpose()));
        if asym > 1e-10 * (1.0 + max_abs_c(&gamma)) {
            return Err(Error::Siegel(format!("not symmetric (residual {asym:e})")));
        }
        let min = min_eigenvalue_sym(&imag_part(&gamma));
        if !(min > 0.0) {
            return Err(Error::Siegel(format!("Im Gamma not positive definite (min eigenvalue {min:e})")));
        }
        Ok(SiegelMatrix((&gamma + gamma.transpose()) * Complex64::new(0.5, 0.0)))
    }

    pub fn identity(d: usize) -> Self {
        SiegelMatrix(CMat::identity(d, d) * Complex64::i())
    }

    /// i * s * I.
    pub fn scaled_identity(d: usize, s: f64) -> Self {
        SiegelMatrix(CMat::identity(d, d) * Complex64::new(0.0, s))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn im(&self) -> RMat {
        imag_part(&self.0)
    }

    pub fn min_im_eigenvalue(&self) -> f64 {
        min_eigenvalue_sym(&self.im())
    }

    /// A frame (M, N) with N M^{-1} = Gamma: M = (Im Gamma)^{-1/2}, N = Gamma M.
    pub fn frame(&self) -> HagedornFrame {
        let m = to_complex(&spd_inv_sqrt(&self.im()).expect("Siegel matrix has Im > 0"));
        let n = &self.0 * &m;
        HagedornFrame { m, n }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HagedornFrame {
    pub m: CMat,
    pub n: CMat,
}

#[derive(Clone, Debug)]
pub struct FrameResiduals {
    /// |conj(M)^T N - conj(N)^T M - 2i I|
    pub symplectic: f64,
    /// |M^T N - N^T M|
    pub symmetry: f64,
    pub det_m: f64,
    /// |Im Gamma - (M M^*)^{-1}|
    pub im_gamma: f64,
    pub min_im_eigenvalue: f64,
}

impl FrameResiduals {
    pub fn max_identity_residual(&self) -> f64 {
        self.symplectic.max(self.symmetry).max(self.im_gamma)
    }
}

impl HagedornFrame {
    pub fn standard(d: usize) -> Self {
        HagedornFrame { m: CMat::identity(d, d), n: CMat::identity(d, d) * Complex64::i() }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// (M, N) -> (A M + B N, C M + D N).
    pub fn apply(&self, kappa: &SymplecticMatrix) -> HagedornFrame {
        let (a, b, c, d) = kappa.blocks();
        let (a, b, c, d) = (to_complex(&a), to_complex(&b), to_complex(&c), to_complex(&d));
        HagedornFrame { m: &a * &self.m + &b * &self.n, n: &c * &self.m + &d * &self.n }
    }

    pub fn gamma_matrix(&self) -> Result<CMat> {
        Ok(&self.n * c_inverse(&self.m)?)
    }

    pub fn gamma(&self) -> Result<SiegelMatrix> {
        SiegelMatrix::new(self.gamma_matrix()?)
    }

    pub fn det_m(&self) -> Complex64 {
        self.m.determinant()
    }

    pub fn residuals(&self) -> Result<FrameResiduals> {
        let d = self.dim();
        let mh = self.m.adjoint();
        let nh = self.n.adjoint();
        let two_i = CMat::identity(d, d) * Complex64::new(0.0, 2.0);
        let symplectic = max_abs_c(&(&mh * &self.n - &nh * &self.m - two_i));
        let symmetry = max_abs_c(&(self.m.transpose() * &self.n - self.n.transpose() * &self.m));
        let gamma = self.gamma_matrix()?;
        let im = imag_part(&gamma);
        let mminv = c_inverse(&(&self.m * &mh))?;
        let im_gamma = max_abs_c(&(to_complex(&im) - mminv));
        Ok(FrameResiduals {
            symplectic,
            symmetry,
            det_m: self.det_m().norm(),
            im_gamma,
            min_im_eigenvalue: min_eigenvalue_sym(&im),
        })
    }
}

/// (M, N) = (A M0 + B N0, C M0 + D N0) for any frame (M0, N0) of Gamma0.
pub fn frame_from_symplectic(kappa: &SymplecticMatrix, gamma0: &SiegelMatrix) -> Result<HagedornFrame> {
    let f = gamma0.frame().apply(kappa);
    let det = f.det_m().norm();
    if det < CAUSTIC_TOL {
        return Err(Error::Caustic(det));
    }
    Ok(f)
}

/// Gamma1 = (C + D Gamma0)(A + B Gamma0)^{-1}.
pub fn siegel_action(kappa: &SymplecticMatrix, gamma0: &SiegelMatrix) -> Result<SiegelMatrix> {
    siegel_action_signed(kappa, gamma0, 1.0)
}

/// The action with the sign of the Gamma0 terms exposed; `sign = -1` is the
/// mutation fixture used to prove the group-law check has teeth.
pub fn siegel_action_signed(kappa: &SymplecticMatrix, gamma0: &SiegelMatrix, sign: f64) -> Result<SiegelMatrix> {
    let (a, b, c, d) = kappa.blocks();
    let g = gamma0.matrix() * Complex64::new(sign, 0.0);
    let den = to_complex(&a) + to_complex(&b) * &g;
    let det = den.determinant().norm();
    if det < CAUSTIC_TOL {
        return Err(Error::Caustic(det));
    }
    let num = to_complex(&c) + to_complex(&d) * &g;
    let out = num * c_inverse(&den)?;
    let out = (&out + out.transpose()) * Complex64::new(0.5, 0.0);
    // the mutated action can leave the half space; report rather than fail
    if sign > 0.0 {
        SiegelMatrix::new(out)
    } else {
        Ok(SiegelMatrix(out))
    }
}

/// | ||Gamma Im(Gamma)^{-1/2}||_F^2 - ||N||_F^2 |.
pub fn trace_identity_residual(f: &HagedornFrame) -> Result<f64> {
    let gamma = f.gamma_matrix()?;
    let s = to_complex(&spd_inv_sqrt(&imag_part(&gamma))?);
    let lhs = (&gamma * s).norm_squared();
    Ok((lhs - f.n.norm_squared()).abs())
}
