//! Squeezed and excited Gaussian wavepackets.
//!
//! A wavepacket is e^{i theta} T(q, p) phi with
//! phi(x) = (pi hbar)^{-d/4} |det Im G|^{1/4} P(Im(G)^{1/2} x / sqrt(hbar)) exp(i x.G x / (2 hbar)).
//! The polynomial P is written in the normal-form variable Y = Im(G)^{1/2} x / sqrt(hbar).
//! Hermite polynomials follow the physicists' convention H_1(u) = 2u.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{max_abs_c, spd_sqrt};
use crate::metaplectic::frame::{HagedornFrame, SiegelMatrix};
use crate::models::PhasePoint;
use crate::poly::{gaussian_weighted_norm_sq, ComplexPoly};
use crate::states::grid::{Axis, GridWavefunction};

pub type MultiIndexPolynomial = ComplexPoly;

/// Boundary tolerance for evaluated wavepackets.
pub const EVAL_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GaussianWavepacket {
    pub hbar: f64,
    pub center: PhasePoint,
    pub frame: HagedornFrame,
    pub poly: MultiIndexPolynomial,
    pub phase: f64,
}

impl GaussianWavepacket {
    pub fn new(hbar: f64, center: PhasePoint, frame: HagedornFrame, poly: MultiIndexPolynomial, phase: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar <= 1.0) {
            return Err(Error::invalid(format!("hbar = {hbar} outside (0, 1]")));
        }
        let d = center.d();
        if frame.dim() != d || poly.nvars() != d {
            return Err(Error::invalid("center, frame and polynomial dimensions differ"));
        }
        frame.gamma()?;
        Ok(GaussianWavepacket { hbar, center, frame, poly, phase })
    }

    /// Coherent state (Gamma = iI, P = 1) at `center`.
    pub fn coherent(hbar: f64, center: PhasePoint) -> Result<Self> {
        let d = center.d();
        Self::new(hbar, center, HagedornFrame::standard(d), ComplexPoly::constant(d, Complex64::new(1.0, 0.0)), 0.0)
    }

    pub fn squeezed(hbar: f64, center: PhasePoint, gamma: &SiegelMatrix) -> Result<Self> {
        let d = center.d();
        Self::new(hbar, center, gamma.frame(), ComplexPoly::constant(d, Complex64::new(1.0, 0.0)), 0.0)
    }

    pub fn d(&self) -> usize {
        self.center.d()
    }

    pub fn gamma(&self) -> Result<SiegelMatrix> {
        self.frame.gamma()
    }

    /// Exact L^2 norm from Gaussian moments.
    pub fn norm(&self) -> f64 {
        gaussian_weighted_norm_sq(&self.poly).sqrt()
    }

    /// Position spread sqrt(hbar) ||Im(G)^{-1/2}||.
    pub fn position_spread(&self) -> Result<f64> {
        let im = self.gamma()?.im();
        let max_inv = 1.0 / crate::linalg::min_eigenvalue_sym(&im);
        Ok((self.hbar * max_inv).sqrt())
    }

    /// Per-axis position and momentum half-widths (one standard deviation of
    /// the ground-state amplitude) for sizing grids.
    pub fn widths(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let f = &self.frame;
        let d = self.d();
        let s = self.hbar.sqrt();
        let qw = (0..d).map(|i| s * (0..d).map(|j| f.m[(i, j)].norm_sqr()).sum::<f64>().sqrt()).collect();
        let pw = (0..d).map(|i| s * (0..d).map(|j| f.n[(i, j)].norm_sqr()).sum::<f64>().sqrt()).collect();
        Ok((qw, pw))
    }

    /// Grid per the default sizing rule, widened for the polynomial degree.
    pub fn default_axes(&self) -> Result<Vec<Axis>> {
        let (qw, pw) = self.widths()?;
        let deg = self.poly.degree() as f64;
        let grow = 1.0 + 0.25 * deg;
        let pmax: Vec<f64> = (0..self.d()).map(|i| self.center.p[i].abs() + 8.5 * grow * pw[i]).collect();
        let spread: Vec<f64> = qw.iter().map(|w| 1.4 * grow * w).collect();
        Ok(crate::states::grid::default_axes(self.hbar, &self.center.q, &spread, &pmax))
    }
}

/// Value of the wavepacket at x.
pub struct WavepacketEvaluator {
    hbar: f64,
    q: Vec<f64>,
    p: Vec<f64>,
    gamma: nalgebra::DMatrix<Complex64>,
    sqrt_im: nalgebra::DMatrix<f64>,
    prefactor: Complex64,
    poly: ComplexPoly,
}

impl WavepacketEvaluator {
    pub fn new(s: &GaussianWavepacket) -> Result<Self> {
        let d = s.d();
        let gamma = s.gamma()?;
        let im = gamma.im();
        let sqrt_im = spd_sqrt(&im)?;
        let det_im = im.determinant();
        let qp: f64 = s.center.q.iter().zip(&s.center.p).map(|(a, b)| a * b).sum();
        let amp = (std::f64::consts::PI * s.hbar).powf(-0.25 * d as f64) * det_im.abs().powf(0.25);
        let prefactor = Complex64::from_polar(amp, s.phase - 0.5 * qp / s.hbar);
        Ok(WavepacketEvaluator {
            hbar: s.hbar,
            q: s.center.q.clone(),
            p: s.center.p.clone(),
            gamma: gamma.matrix().clone(),
            sqrt_im,
            prefactor,
            poly: s.poly.clone(),
        })
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let d = x.len();
        let y: Vec<f64> = (0..d).map(|i| x[i] - self.q[i]).collect();
        let mut quad = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                quad += self.gamma[(i, j)] * y[i] * y[j];
            }
        }
        let px: f64 = self.p.iter().zip(x).map(|(a, b)| a * b).sum();
        let s = self.hbar.sqrt();
        let big_y: Vec<Complex64> = (0..d)
            .map(|i| Complex64::new((0..d).map(|j| self.sqrt_im[(i, j)] * y[j]).sum::<f64>() / s, 0.0))
            .collect();
        let pv = self.poly.eval(&big_y);
        let expo = Complex64::new(0.0, 1.0) * (quad / (2.0 * self.hbar) + px / self.hbar);
        self.prefactor * pv * expo.exp()
    }
}

/// Sample the wavepacket on a grid; fails when the grid does not contain it.
pub fn eval_wavepacket(s: &GaussianWavepacket, axes: &[Axis]) -> Result<GridWavefunction> {
    let u = eval_wavepacket_unchecked(s, axes)?;
    u.check_boundary(EVAL_BOUNDARY_TOL)?;
    Ok(u)
}

pub fn eval_wavepacket_unchecked(s: &GaussianWavepacket, axes: &[Axis]) -> Result<GridWavefunction> {
    if axes.len() != s.d() {
        return Err(Error::AxisMismatch);
    }
    let ev = WavepacketEvaluator::new(s)?;
    Ok(GridWavefunction::from_fn(s.hbar, axes.to_vec(), |x| ev.eval(x)))
}

/// Raise along axis j: P <- (2 Y_j P - d_j P) / sqrt(2). Standard frame only.
pub fn apply_creation(j: usize, s: &GaussianWavepacket) -> Result<GaussianWavepacket> {
    let d = s.d();
    if j >= d {
        return Err(Error::invalid("creation axis out of range"));
    }
    let g = s.gamma()?;
    let dev = max_abs_c(&(g.matrix() - SiegelMatrix::identity(d).matrix()));
    if dev > 1e-12 {
        return Err(Error::invalid("apply_creation requires the standard frame Gamma = iI"));
    }
    let yj = ComplexPoly::var(d, j).scale(Complex64::new(2.0, 0.0));
    let raised = &(&yj * &s.poly) - &s.poly.derivative(j);
    let mut out = s.clone();
    out.poly = raised.scale(Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
    Ok(out)
}
